#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ddn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

std::string shape_string(const Shape& shape);

inline Index element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Raised when operand shapes are incompatible. The message names the
/// operation and every offending shape.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

[[noreturn]] void throw_shape_error(std::string_view op, std::initializer_list<Shape> shapes,
                                    std::string_view detail = {});

/// Dense row-major n-dimensional array. Storage is a flat std::vector; Eigen
/// maps provide the linear-algebra views used by the kernels.
template <typename Scalar>
class BasicArray {
public:
    using value_type = Scalar;

    BasicArray() = default;
    explicit BasicArray(Shape shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(element_count(shape_)), fill) {}
    BasicArray(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<Index>(data_.size()) != element_count(shape_)) {
            throw_shape_error("array", {shape_}, "data length " + std::to_string(data_.size()) +
                                                     " does not match shape");
        }
    }

    static BasicArray zeros(Shape shape) { return BasicArray(std::move(shape)); }
    static BasicArray scalar(Scalar v) { return BasicArray(Shape{}, std::vector<Scalar>{v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    Index size() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    Scalar* ptr() { return data_.data(); }
    const Scalar* ptr() const { return data_.data(); }
    std::span<Scalar> data() { return data_; }
    std::span<const Scalar> data() const { return data_; }
    std::vector<Scalar>& storage() { return data_; }
    const std::vector<Scalar>& storage() const { return data_; }

    Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    /// Number of elements in one entry along the leading axis.
    Index stride0() const { return shape_.empty() || shape_[0] == 0 ? size() : size() / shape_[0]; }

    std::span<Scalar> slice0(Index i) {
        return std::span<Scalar>(data_).subspan(static_cast<std::size_t>(i * stride0()),
                                                static_cast<std::size_t>(stride0()));
    }
    std::span<const Scalar> slice0(Index i) const {
        return std::span<const Scalar>(data_).subspan(static_cast<std::size_t>(i * stride0()),
                                                      static_cast<std::size_t>(stride0()));
    }

    Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
        return Eigen::Map<RowMatrix<Scalar>>(ptr(), rows, cols);
    }
    Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
        return Eigen::Map<const RowMatrix<Scalar>>(ptr(), rows, cols);
    }
    Eigen::Map<Vector<Scalar>> vec() { return Eigen::Map<Vector<Scalar>>(ptr(), size()); }
    Eigen::Map<const Vector<Scalar>> vec() const { return Eigen::Map<const Vector<Scalar>>(ptr(), size()); }

    BasicArray reshaped(Shape shape) const {
        if (element_count(shape) != size()) throw_shape_error("reshape", {shape_, shape});
        return BasicArray(std::move(shape), data_);
    }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const BasicArray& a, const BasicArray& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

using Array = BasicArray<float>;

/// Copies entry `index` along the leading axis into a new array of rank-1.
template <typename Scalar>
BasicArray<Scalar> take0(const BasicArray<Scalar>& a, Index index) {
    Shape tail(a.shape().begin() + 1, a.shape().end());
    auto s = a.slice0(index);
    return BasicArray<Scalar>(std::move(tail), std::vector<Scalar>(s.begin(), s.end()));
}

/// Stacks equally shaped arrays along a new leading axis.
template <typename Scalar>
BasicArray<Scalar> stack0(std::span<const BasicArray<Scalar>> parts) {
    if (parts.empty()) return {};
    Shape shape = parts.front().shape();
    std::vector<Scalar> data;
    data.reserve(static_cast<std::size_t>(parts.front().size()) * parts.size());
    for (const auto& p : parts) {
        if (p.shape() != shape) throw_shape_error("stack", {shape, p.shape()});
        data.insert(data.end(), p.storage().begin(), p.storage().end());
    }
    shape.insert(shape.begin(), static_cast<Index>(parts.size()));
    return BasicArray<Scalar>(std::move(shape), std::move(data));
}

/// Mean squared difference with double accumulation.
template <typename Scalar>
double mean_squared_error(std::span<const Scalar> a, std::span<const Scalar> b) {
    if (a.size() != b.size() || a.empty()) {
        throw_shape_error("mean_squared_error", {Shape{static_cast<Index>(a.size())},
                                                 Shape{static_cast<Index>(b.size())}});
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename Scalar>
double mean_squared_error(const BasicArray<Scalar>& a, const BasicArray<Scalar>& b) {
    if (a.shape() != b.shape()) throw_shape_error("mean_squared_error", {a.shape(), b.shape()});
    return mean_squared_error(a.data(), b.data());
}

}  // namespace ddn
