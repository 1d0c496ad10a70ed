#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "modarith/model.hpp"
#include "modarith/rng.hpp"

namespace modarith {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of the mean cross-entropy with central
// differences on `coords_per_tensor` random entries of every parameter.
// Relative error is |ad - fd| / max(|ad|, |fd|, floor).
inline GradCheckResult finite_difference_check(Model& model, std::span<const int> pairs, std::uint64_t seed,
                                               std::size_t coords_per_tensor = 20, double h = 1e-5, double floor = 1e-4) {
    auto mg = wire_model(model);
    mg->bind_pairs(pairs);
    mg->graph.forward(mg->loss);
    mg->graph.backward(mg->loss);
    Rng rng(seed, "gradcheck");
    GradCheckResult r;
    for (std::size_t k = 0; k < model.parameter_count(); ++k) {
        Tensor& p = model.parameter(k);
        const Tensor grad = mg->graph.grad(mg->parameter_nodes[k]);
        for (std::size_t c = 0; c < coords_per_tensor; ++c) {
            const std::size_t i = static_cast<std::size_t>(rng.below(p.size()));
            double& w = p.values()[i];
            const double keep = w;
            w = keep + h;
            const double up = mg->graph.forward(mg->loss)[0];
            w = keep - h;
            const double down = mg->graph.forward(mg->loss)[0];
            w = keep;
            const double fd = (up - down) / (2.0 * h);
            const double ad = grad.values()[i];
            const double err = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
            r.max_relative_error = std::max(r.max_relative_error, err);
            ++r.coordinates;
        }
    }
    return r;
}

}  // namespace modarith
