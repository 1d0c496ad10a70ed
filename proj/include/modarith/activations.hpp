#pragma once

#include <cstddef>
#include <vector>

#include "modarith/model.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

// Full-grid activations of one hidden layer. Row a*n + b holds input (a, b).
struct ActivationDump {
    std::size_t layer_index = 1;  // 1-based
    Tensor preactivations;        // n^2 x width
    Tensor postactivations;       // max(preactivations, 0)
};

struct GridActivations {
    int modulus = 0;
    std::vector<ActivationDump> layers;
    Tensor logits;  // n^2 x n
    Tensor unembedding;  // last hidden width x n
};

inline std::vector<int> full_grid(int n) {
    std::vector<int> rows(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    return rows;
}

inline GridActivations extract_activations(Model& model) {
    auto mg = wire_model(model);
    GridActivations out;
    out.modulus = model.config().modulus;
    const std::vector<int> grid = full_grid(out.modulus);
    mg->bind_pairs(grid);
    mg->graph.forward(mg->logits);
    for (std::size_t l = 0; l < mg->preactivations.size(); ++l) {
        ActivationDump dump;
        dump.layer_index = l + 1;
        dump.preactivations = mg->graph.value(mg->preactivations[l]);
        dump.postactivations = mg->graph.value(mg->postactivations[l]);
        out.layers.push_back(std::move(dump));
    }
    out.logits = mg->graph.value(mg->logits);
    out.unembedding = model.param("W_out");
    return out;
}

// Logits only, for metrics that need nothing else.
inline Tensor grid_logits(Model& model) {
    auto mg = wire_model(model);
    mg->bind_pairs(full_grid(model.config().modulus));
    return mg->graph.forward(mg->logits);
}

}  // namespace modarith
