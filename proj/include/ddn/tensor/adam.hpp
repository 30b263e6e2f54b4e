#pragma once

#include "ddn/tensor/tape.hpp"

#include <cmath>
#include <cstdint>
#include <span>

namespace ddn {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// First/second moment buffers for one Parameter.
struct AdamState {
    Array m;
    Array v;
    std::int64_t t = 0;
    AdamConfig config;
};

AdamState make_adam_state(const Parameter& p, const AdamConfig& config = {});

/// Bias-correction denominators for step t (t >= 1).
struct AdamBias {
    double first;
    double second;
    static AdamBias at(std::int64_t t, const AdamConfig& c) {
        return {1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(t)),
                1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(t))};
    }
};

/// One bias-corrected Adam update of a single coordinate.
template <typename Scalar>
inline void adam_update(Scalar& value, Scalar grad, Scalar& m, Scalar& v, const AdamBias& bias, const AdamConfig& c) {
    m = Scalar(c.beta1) * m + Scalar(1.0f - c.beta1) * grad;
    v = Scalar(c.beta2) * v + Scalar(1.0f - c.beta2) * grad * grad;
    const double mhat = static_cast<double>(m) / bias.first;
    const double vhat = static_cast<double>(v) / bias.second;
    value -= static_cast<Scalar>(static_cast<double>(c.lr) * mhat / (std::sqrt(vhat) + c.eps));
}

/// Applies one Adam step to every parameter from its accumulated gradient,
/// increments each state's t, then clears the gradients.
void adam_step(std::span<Parameter* const> params, std::span<AdamState> states);

/// Overwrites slot `dst` of the parameter value and both moment buffers with
/// copies of slot `src`.
void slot_clone(Parameter& param, AdamState& state, Index src, Index dst);

}  // namespace ddn
