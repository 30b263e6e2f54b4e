#pragma once

// Central finite-difference oracle for tape gradients. Test-only.

#include "ddn/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace ddn::testing {

inline Array random_array(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f,
                          float avoid_zero = 0.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Array a(std::move(shape));
    for (float& v : a.storage()) {
        do {
            v = dist(rng);
        } while (std::abs(v) < avoid_zero);
    }
    return a;
}

using LossBuilder = std::function<Var(Tape&, std::vector<Var>&)>;

/// Returns max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf) over
/// all parameters.
inline double gradient_relative_error(std::vector<Parameter>& params, const LossBuilder& build, double h = 1e-3) {
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(tape.parameter(p));
        tape.backward(build(tape, vars));
    }
    auto eval = [&]() {
        Tape tape(false);
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(tape.parameter(p));
        return static_cast<double>(build(tape, vars).value()[0]);
    };
    double max_diff = 0.0, max_mag = 0.0;
    for (auto& p : params) {
        for (Index i = 0; i < p.value.size(); ++i) {
            const float orig = p.value[i];
            p.value[i] = orig + static_cast<float>(h);
            const double up = eval();
            p.value[i] = orig - static_cast<float>(h);
            const double down = eval();
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.grad[i];
            max_diff = std::max(max_diff, std::abs(numeric - analytic));
            max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic)});
        }
    }
    return max_mag == 0.0 ? max_diff : max_diff / max_mag;
}

}  // namespace ddn::testing
