#include "ddn/tensor/adam.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace ddn {

AdamState make_adam_state(const Parameter& p, const AdamConfig& config) {
    return AdamState{Array(p.value.shape()), Array(p.value.shape()), 0, config};
}

void adam_step(std::span<Parameter* const> params, std::span<AdamState> states) {
    if (params.size() != states.size()) {
        throw std::invalid_argument(fmt::format("adam_step: {} parameters but {} states", params.size(), states.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        AdamState& s = states[i];
        if (s.m.shape() != p.value.shape() || s.v.shape() != p.value.shape()) {
            throw_shape_error("adam_step", {p.value.shape(), s.m.shape(), s.v.shape()}, p.name);
        }
        if (p.grad.shape() != p.value.shape()) p.grad = Array(p.value.shape());
        ++s.t;
        const AdamBias bias = AdamBias::at(s.t, s.config);
        float* value = p.value.ptr();
        float* m = s.m.ptr();
        float* v = s.v.ptr();
        const float* g = p.grad.ptr();
        for (Index j = 0; j < p.value.size(); ++j) adam_update(value[j], g[j], m[j], v[j], bias, s.config);
        p.zero_grad();
    }
}

void slot_clone(Parameter& param, AdamState& state, Index src, Index dst) {
    if (!param.slot_axis) throw std::logic_error(fmt::format("slot_clone: parameter {} has no slot axis", param.name));
    const Index slots = param.slot_count();
    if (src < 0 || dst < 0 || src >= slots || dst >= slots) {
        throw std::out_of_range(fmt::format("slot_clone: slots {}->{} outside [0,{})", src, dst, slots));
    }
    if (src == dst) throw std::invalid_argument("slot_clone: source and destination coincide");
    for (Array* a : {&param.value, &state.m, &state.v}) {
        auto from = a->slice0(src);
        std::copy(from.begin(), from.end(), a->slice0(dst).begin());
    }
}

}  // namespace ddn
