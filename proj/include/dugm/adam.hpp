#pragma once

#include <dugm/errors.hpp>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace dugm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 1000; ///< cosine period T
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// lr0 * (1 + cos(pi * t / T)) / 2, held at zero past T.
inline double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0 || step >= total_steps) return 0.0;
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

/// One Adam update with cosine-decayed learning rate; step is 0-based.
inline void adam_cosine_step(const AdamConfig& cfg, AdamState& state, std::span<double> params,
                             std::span<const double> grads, std::size_t step) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw DimensionError("adam_cosine_step: parameter, gradient, and state sizes differ");
    const double lr = cosine_lr(cfg.lr, step, cfg.total_steps);
    const double t = double(step + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

} // namespace dugm
