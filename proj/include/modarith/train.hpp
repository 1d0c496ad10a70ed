#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "modarith/adam.hpp"
#include "modarith/dataset.hpp"
#include "modarith/model.hpp"

namespace modarith {

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainedModel {
    Model model;
    std::uint64_t seed = 0;
    std::vector<EpochRecord> trace;
    double final_test_accuracy = 0.0;
    double final_train_accuracy = 0.0;
    bool converged = false;
    std::string stop_reason;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline std::size_t argmax_row(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline EvalResult evaluate(ModelGraph& mg, std::span<const int> pairs, std::size_t chunk = 2048) {
    EvalResult r;
    if (pairs.empty()) return r;
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < pairs.size(); start += chunk) {
        const auto part = pairs.subspan(start, std::min(chunk, pairs.size() - start));
        mg.bind_pairs(part);
        loss += mg.graph.forward(mg.loss)[0] * static_cast<double>(part.size());
        const Tensor& logits = mg.graph.value(mg.logits);
        for (std::size_t i = 0; i < part.size(); ++i) {
            const int label = (part[i] / mg.modulus + part[i] % mg.modulus) % mg.modulus;
            if (argmax_row(logits.row(i)) == static_cast<std::size_t>(label)) ++correct;
        }
    }
    r.loss = loss / static_cast<double>(pairs.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
    return r;
}

struct TrainOptions {
    double convergence_accuracy = 0.95;
    std::function<void(const EpochRecord&)> on_epoch;
    // Called after each epoch with the current weights, for probes.
    std::function<void(const EpochRecord&, Model&)> observe;
};

// Minibatch Adam with the config's learning rate and coupled L2 penalty.
// Stops once test accuracy has been 100% for `patience` consecutive epochs, or
// after max_epochs. Train loss/accuracy in the trace are minibatch averages
// over the epoch; test figures are exact.
inline TrainedModel train_model(Model model, const Dataset& data, std::uint64_t seed, const TrainOptions& options = {}) {
    const ModelConfig cfg = model.config();
    if (data.modulus != cfg.modulus) throw std::invalid_argument("dataset modulus does not match model");

    TrainedModel out;
    out.seed = seed;
    out.model = std::move(model);
    auto mg = wire_model(out.model);

    std::vector<Tensor*> params = out.model.parameter_pointers();
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    adam_cfg.weight_decay = cfg.weight_decay;
    AdamState adam(adam_cfg, params);
    std::vector<const Tensor*> grads(params.size());

    Rng rng(seed, "train");
    std::vector<int> order = data.train;
    std::size_t perfect_streak = 0;
    out.stop_reason = "max_epochs";

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::span<const int> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
            mg->bind_pairs(batch);
            const double loss = mg->graph.forward(mg->loss)[0];
            if (!std::isfinite(loss)) {
                throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                     std::to_string(start));
            }
            loss_sum += loss * static_cast<double>(batch.size());
            const Tensor& logits = mg->graph.value(mg->logits);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int label = (batch[i] / cfg.modulus + batch[i] % cfg.modulus) % cfg.modulus;
                if (argmax_row(logits.row(i)) == static_cast<std::size_t>(label)) ++correct;
            }
            mg->graph.backward(mg->loss);
            for (std::size_t k = 0; k < params.size(); ++k) grads[k] = &mg->graph.grad(mg->parameter_nodes[k]);
            adam_step(adam, params, grads);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = order.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(order.size());
        const EvalResult test = evaluate(*mg, data.test);
        rec.test_loss = test.loss;
        rec.test_accuracy = test.accuracy;
        out.trace.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);
        if (options.observe) options.observe(rec, out.model);

        perfect_streak = test.accuracy == 1.0 ? perfect_streak + 1 : 0;
        if (cfg.patience > 0 && perfect_streak >= cfg.patience) {
            out.stop_reason = "patience";
            break;
        }
    }

    out.final_test_accuracy = evaluate(*mg, data.test).accuracy;
    out.final_train_accuracy = evaluate(*mg, data.train).accuracy;
    out.converged = cfg.max_epochs > 0 && out.final_test_accuracy >= options.convergence_accuracy;
    return out;
}

}  // namespace modarith
