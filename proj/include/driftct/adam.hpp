#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "driftct/tensor.hpp"

namespace driftct {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;
    std::size_t skipped_steps = 0;

    static AdamState init(const std::vector<Tensor>& params) {
        AdamState s;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p.numel(), 0.0);
            s.v.emplace_back(p.numel(), 0.0);
        }
        return s;
    }
};

// Standard Adam update with bias correction, applied in place. Tensors with no
// grad buffer are treated as zero-gradient. If any gradient entry is
// non-finite the whole step is skipped and counted in state.skipped_steps.
inline bool adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw ValueError("adam_step: lr must be > 0");
    if (state.m.size() != params.size()) {
        throw ValueError("adam_step: state was initialized for " +
                         std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].numel()) {
            throw ShapeError("adam_step: state entry " + std::to_string(i) +
                             " does not match parameter shape " +
                             shape_str(params[i].shape()));
        }
        for (double g : params[i].grad()) {
            if (!std::isfinite(g)) {
                ++state.skipped_steps;
                return false;
            }
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto vals = params[i].values_mut();
        auto grad = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            vals[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    return true;
}

} // namespace driftct
