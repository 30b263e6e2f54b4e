#include "ddn/tensor/tape.hpp"

#include <fmt/format.h>

#include <atomic>
#include <stdexcept>

namespace ddn {

namespace {
std::atomic<std::uint64_t> g_backward_calls{0};
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void throw_shape_error(std::string_view op, std::initializer_list<Shape> shapes, std::string_view detail) {
    std::string msg = fmt::format("{}: incompatible shapes", op);
    for (const auto& s : shapes) msg += " " + shape_string(s);
    if (!detail.empty()) msg += fmt::format(" ({})", detail);
    throw ShapeError(msg);
}

Parameter::Parameter(std::string name_, Array value_, std::optional<int> slot_axis_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), slot_axis(slot_axis_) {
    if (slot_axis && *slot_axis != 0) {
        throw std::invalid_argument(fmt::format("parameter {}: slot axis must be the leading axis", name));
    }
    if (slot_axis && value.rank() == 0) {
        throw std::invalid_argument(fmt::format("parameter {}: slotted parameter needs rank >= 1", name));
    }
}

Index Parameter::slot_count() const {
    if (!slot_axis) return 0;
    return value.dim(*slot_axis);
}

Var Tape::constant(Array value) {
    auto node = std::make_shared<detail::Node>();
    node->op = "constant";
    node->value = std::move(value);
    nodes_.push_back(node);
    return Var(std::move(node), this);
}

Var Tape::parameter(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(it->second, this);
    auto node = std::make_shared<detail::Node>();
    node->op = "parameter:" + p.name;
    node->value = p.value;
    node->parameter = &p;
    node->requires_grad = grad_enabled_;
    nodes_.push_back(node);
    bound_.emplace(&p, node);
    return Var(std::move(node), this);
}

Var Tape::record(std::string op, Array value, bool requires_grad, std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->op = std::move(op);
    node->value = std::move(value);
    node->requires_grad = requires_grad && grad_enabled_;
    if (node->requires_grad) node->backward = std::move(backward);
    nodes_.push_back(node);
    return Var(std::move(node), this);
}

void Tape::backward(const Var& loss) {
    if (consumed_) throw std::logic_error("backward: tape already consumed; call reset() first");
    if (!loss.valid() || &loss.tape() != this) throw std::invalid_argument("backward: loss not recorded on this tape");
    if (loss.value().size() != 1) throw_shape_error("backward", {loss.shape()}, "loss must be a scalar");
    consumed_ = true;
    g_backward_calls.fetch_add(1, std::memory_order_relaxed);
    if (!loss.requires_grad()) return;

    loss.node().grad_buffer()[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node& node = **it;
        if (!node.requires_grad || node.grad.empty()) continue;
        if (node.backward) node.backward(node);
        if (node.parameter != nullptr) {
            Parameter& p = *node.parameter;
            if (p.grad.shape() != p.value.shape()) p.grad = Array(p.value.shape());
            p.grad.vec() += node.grad.vec();
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    bound_.clear();
    consumed_ = false;
}

std::uint64_t Tape::backward_invocations() { return g_backward_calls.load(std::memory_order_relaxed); }

}  // namespace ddn
