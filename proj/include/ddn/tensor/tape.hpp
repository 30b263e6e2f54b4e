#pragma once

#include "ddn/tensor/array.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ddn {

/// A trainable tensor. When `slot_axis` is set the parameter is partitioned
/// into K node slots along that axis (always the leading axis here, so a slot
/// is one contiguous block).
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Array value, std::optional<int> slot_axis = std::nullopt);

    std::string name;
    Array value;
    Array grad;
    std::optional<int> slot_axis;

    Index slot_count() const;
    Index slot_stride() const { return value.stride0(); }
    void zero_grad() { grad.fill(0.0f); }
};

class Tape;

namespace detail {

struct Node {
    std::string op;
    Array value;
    Array grad;  // empty until something flows into it
    bool requires_grad = false;
    Parameter* parameter = nullptr;
    std::function<void(Node&)> backward;

    Array& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Array(value.shape());
        return grad;
    }
};

}  // namespace detail

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Array& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    /// Gradient accumulated by the last backward pass; empty when nothing reached it.
    const Array& grad() const { return node_->grad; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return node_ != nullptr; }

    detail::Node& node() const { return *node_; }

private:
    friend class Tape;
    Var(std::shared_ptr<detail::Node> node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

    std::shared_ptr<detail::Node> node_;
    Tape* tape_ = nullptr;
};

/// Define-by-run reverse-mode tape. Every op appends a node; backward() walks
/// the nodes in reverse recording order. A tape is rebuilt per forward pass.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Array value);
    /// Binds a parameter as a leaf. Binding the same parameter twice returns
    /// the same node, so shared weights accumulate into one gradient.
    Var parameter(Parameter& p);

    /// Records an op result. `backward` receives the output node (whose grad
    /// is populated) and must push gradients into the captured inputs.
    Var record(std::string op, Array value, bool requires_grad, std::function<void(detail::Node&)> backward);

    /// Propagates d(loss)/d(.) to every reachable node and accumulates
    /// parameter gradients into Parameter::grad.
    void backward(const Var& loss);

    /// Clears all recorded nodes so the tape can be reused.
    void reset();

    std::size_t size() const { return nodes_.size(); }

    /// Process-wide count of backward() invocations; lets callers audit that
    /// a code path never asked for gradients.
    static std::uint64_t backward_invocations();

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    std::unordered_map<Parameter*, std::shared_ptr<detail::Node>> bound_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

}  // namespace ddn
