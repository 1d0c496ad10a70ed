#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modarith/tensor.hpp"

namespace modarith {

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;  // coupled L2: lambda * param is added to the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::size_t step = 0;

    AdamState() = default;
    AdamState(AdamConfig cfg, std::span<Tensor* const> params) : config(cfg) {
        if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
        if (cfg.weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
        for (const Tensor* p : params) {
            first_moment.emplace_back(p->shape(), 0.0);
            second_moment.emplace_back(p->shape(), 0.0);
        }
    }
};

// One bias-corrected Adam update. Gradients are checked before anything is
// modified so a failed step leaves parameters and state untouched.
inline void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw ShapeError("adam_step: parameter, gradient and state counts differ");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k]->shape() != grads[k]->shape() || params[k]->shape() != state.first_moment[k].shape()) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k) + ": " +
                             shape_string(params[k]->shape()) + " vs gradient " + shape_string(grads[k]->shape()));
        }
        if (!grads[k]->all_finite()) {
            throw NonFiniteError("adam_step: non-finite gradient for parameter " + std::to_string(k) + " at step " +
                                 std::to_string(state.step + 1));
        }
    }

    const AdamConfig& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k]->values();
        const auto g = grads[k]->values();
        auto m = state.first_moment[k].values();
        auto v = state.second_moment[k].values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] + c.weight_decay * p[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            const double mhat = m[i] / correction1;
            const double vhat = v[i] / correction2;
            p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

}  // namespace modarith
