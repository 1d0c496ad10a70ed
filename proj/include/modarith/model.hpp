#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modarith/autodiff.hpp"
#include "modarith/rng.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

enum class Architecture { MlpAdd, MlpConcat, Attention0, Attention1 };

inline constexpr Architecture kAllArchitectures[] = {Architecture::MlpAdd, Architecture::MlpConcat, Architecture::Attention0,
                                                     Architecture::Attention1};

inline std::string_view to_string(Architecture a) {
    switch (a) {
        case Architecture::MlpAdd: return "mlp_add";
        case Architecture::MlpConcat: return "mlp_concat";
        case Architecture::Attention0: return "attention0";
        case Architecture::Attention1: return "attention1";
    }
    return "?";
}

class UnknownArchitecture : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline Architecture parse_architecture(std::string_view s) {
    for (Architecture a : kAllArchitectures) {
        if (s == to_string(a)) return a;
    }
    if (s == "MlpAdd" || s == "mlp-add") return Architecture::MlpAdd;
    if (s == "MlpConcat" || s == "mlp-concat") return Architecture::MlpConcat;
    if (s == "Attention0" || s == "attention-0.0" || s == "pizza") return Architecture::Attention0;
    if (s == "Attention1" || s == "attention-1.0" || s == "clock") return Architecture::Attention1;
    throw UnknownArchitecture("unknown architecture '" + std::string(s) + "'");
}

struct ModelConfig {
    Architecture architecture = Architecture::MlpAdd;
    int modulus = 59;
    std::size_t embedding_dim = 128;
    std::size_t hidden_width = 1024;
    std::size_t num_hidden_layers = 1;
    double learning_rate = 5e-4;
    double weight_decay = 1e-4;
    std::size_t max_epochs = 30000;
    std::size_t batch_size = 59;
    std::size_t patience = 200;  // epochs at 100% test accuracy before stopping
    double train_fraction = 0.9;

    // Learning rate and L2 penalty per architecture.
    static ModelConfig defaults(Architecture arch) {
        ModelConfig c;
        c.architecture = arch;
        switch (arch) {
            case Architecture::Attention1:
                c.learning_rate = 0.00075;
                c.weight_decay = 0.000025;
                break;
            case Architecture::Attention0:
                c.learning_rate = 0.00025;
                c.weight_decay = 0.000001;
                break;
            case Architecture::MlpAdd:
            case Architecture::MlpConcat:
                c.learning_rate = 0.0005;
                c.weight_decay = 0.0001;
                break;
        }
        return c;
    }

    void validate() const {
        if (modulus < 3) throw std::invalid_argument("modulus must be at least 3");
        if (embedding_dim == 0 || hidden_width == 0 || batch_size == 0) throw std::invalid_argument("dimensions must be positive");
        if (num_hidden_layers == 0) throw std::invalid_argument("at least one hidden layer is required");
        if (!(learning_rate > 0.0) || weight_decay < 0.0) throw std::invalid_argument("invalid optimizer settings");
    }

    std::size_t mlp_input_dim() const {
        return architecture == Architecture::MlpConcat ? 2 * embedding_dim : embedding_dim;
    }
};

// Weights of one network. Parameters are stored in a fixed order so that the
// checkpoint layout and the optimizer state line up with it.
class Model {
public:
    Model() = default;
    explicit Model(ModelConfig config) : config_(config) {}

    const ModelConfig& config() const noexcept { return config_; }

    Tensor& add_parameter(std::string name, Tensor value) {
        if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter " + name);
        names_.push_back(std::move(name));
        params_.push_back(std::make_unique<Tensor>(std::move(value)));
        return *params_.back();
    }

    Tensor* find(std::string_view name) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) return params_[i].get();
        }
        return nullptr;
    }
    const Tensor* find(std::string_view name) const { return const_cast<Model*>(this)->find(name); }

    Tensor& param(std::string_view name) {
        Tensor* t = find(name);
        if (!t) throw std::out_of_range("no parameter named " + std::string(name));
        return *t;
    }
    const Tensor& param(std::string_view name) const { return const_cast<Model*>(this)->param(name); }

    std::size_t parameter_count() const noexcept { return params_.size(); }
    const std::string& parameter_name(std::size_t i) const { return names_.at(i); }
    Tensor& parameter(std::size_t i) { return *params_.at(i); }
    const Tensor& parameter(std::size_t i) const { return *params_.at(i); }

    std::vector<Tensor*> parameter_pointers() {
        std::vector<Tensor*> out;
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    Model clone() const {
        Model m(config_);
        for (std::size_t i = 0; i < params_.size(); ++i) m.add_parameter(names_[i], *params_[i]);
        return m;
    }

    static std::string layer_name(std::size_t layer) { return "W_" + std::to_string(layer); }

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    // Heap-allocated so that graphs may hold stable pointers across moves.
    std::vector<std::unique_ptr<Tensor>> params_;
};

inline Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

// Untrained network with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights. Lookup
// tables (token embedding and positions) have a single active input, so their
// bound is 1.
inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed, "init");
    Model m(config);
    const std::size_t n = static_cast<std::size_t>(config.modulus);
    const std::size_t d = config.embedding_dim;
    const double dbound = 1.0 / std::sqrt(static_cast<double>(d));

    m.add_parameter("embedding", uniform_init(n, d, 1.0, rng));
    switch (config.architecture) {
        case Architecture::MlpAdd:
        case Architecture::MlpConcat:
            break;
        case Architecture::Attention1:
            m.add_parameter("positional", uniform_init(2, d, 1.0, rng));
            m.add_parameter("W_Q", uniform_init(d, d, dbound, rng));
            m.add_parameter("W_K", uniform_init(d, d, dbound, rng));
            m.add_parameter("W_V", uniform_init(d, d, dbound, rng));
            m.add_parameter("W_O", uniform_init(d, d, dbound, rng));
            break;
        case Architecture::Attention0:
            m.add_parameter("positional", uniform_init(2, d, 1.0, rng));
            m.add_parameter("W_V", uniform_init(d, d, dbound, rng));
            m.add_parameter("W_O", uniform_init(d, d, dbound, rng));
            break;
    }
    std::size_t fan_in = config.mlp_input_dim();
    for (std::size_t layer = 1; layer <= config.num_hidden_layers; ++layer) {
        m.add_parameter(Model::layer_name(layer), uniform_init(fan_in, config.hidden_width, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
        fan_in = config.hidden_width;
    }
    m.add_parameter("W_out", uniform_init(fan_in, n, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
    return m;
}

// The model's computation wired as a ComputeGraph. Holds pointers into the
// model's parameters, so the model must outlive it.
struct ModelGraph {
    ComputeGraph graph;
    int modulus = 0;
    IndexSlot left, right, labels, pos0, pos1;
    NodeId embed_left, embed_right;     // gathered E_a and E_b rows
    NodeId mlp_input;
    std::vector<NodeId> preactivations;  // one per hidden layer
    std::vector<NodeId> postactivations;
    NodeId logits;
    NodeId loss;
    std::vector<NodeId> parameter_nodes;  // in model parameter order

    // Binds the (a, b) inputs for the given grid rows, plus labels (a + b) mod n.
    void bind_pairs(std::span<const int> pairs) {
        std::vector<int> a(pairs.size()), b(pairs.size()), y(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            a[i] = pairs[i] / modulus;
            b[i] = pairs[i] % modulus;
            y[i] = (a[i] + b[i]) % modulus;
        }
        bind_inputs(std::move(a), std::move(b), std::move(y));
    }

    void bind_inputs(std::vector<int> a, std::vector<int> b, std::vector<int> y) {
        const std::size_t rows = a.size();
        graph.bind(left, std::move(a));
        graph.bind(right, std::move(b));
        graph.bind(labels, std::move(y));
        graph.bind(pos0, std::vector<int>(rows, 0));
        graph.bind(pos1, std::vector<int>(rows, 1));
    }
};

inline std::unique_ptr<ModelGraph> wire_model(Model& model) {
    const ModelConfig& cfg = model.config();
    auto mg = std::make_unique<ModelGraph>();
    ComputeGraph& g = mg->graph;
    mg->modulus = cfg.modulus;
    mg->left = g.indices("a");
    mg->right = g.indices("b");
    mg->labels = g.indices("label");
    mg->pos0 = g.indices("position0");
    mg->pos1 = g.indices("position1");

    for (std::size_t i = 0; i < model.parameter_count(); ++i) {
        mg->parameter_nodes.push_back(g.parameter(model.parameter_name(i), &model.parameter(i)));
    }
    auto p = [&](std::string_view name) {
        for (std::size_t i = 0; i < model.parameter_count(); ++i) {
            if (model.parameter_name(i) == name) return mg->parameter_nodes[i];
        }
        throw std::out_of_range("missing parameter " + std::string(name));
    };

    const NodeId emb = p("embedding");
    mg->embed_left = g.gather(emb, mg->left, "E_a");
    mg->embed_right = g.gather(emb, mg->right, "E_b");

    switch (cfg.architecture) {
        case Architecture::MlpAdd:
            mg->mlp_input = g.add(mg->embed_left, mg->embed_right, "E_a+E_b");
            break;
        case Architecture::MlpConcat:
            mg->mlp_input = g.concat({mg->embed_left, mg->embed_right}, "E_a++E_b");
            break;
        case Architecture::Attention0:
        case Architecture::Attention1: {
            const NodeId pos = p("positional");
            const NodeId x0 = g.add(mg->embed_left, g.gather(pos, mg->pos0, "p_0"), "token0");
            const NodeId x1 = g.add(mg->embed_right, g.gather(pos, mg->pos1, "p_1"), "token1");
            const NodeId v0 = g.matmul(x0, p("W_V"), "value0");
            const NodeId v1 = g.matmul(x1, p("W_V"), "value1");
            NodeId mixed;
            if (cfg.architecture == Architecture::Attention0) {
                mixed = g.mean_positions({v0, v1}, "uniform_attention");
            } else {
                // Query from the second (output) position attends over both tokens.
                const NodeId q = g.matmul(x1, p("W_Q"), "query");
                const NodeId k0 = g.matmul(x0, p("W_K"), "key0");
                const NodeId k1 = g.matmul(x1, p("W_K"), "key1");
                const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim));
                const NodeId s0 = g.scale(g.row_dot(q, k0), inv_sqrt_d, "score0");
                const NodeId s1 = g.scale(g.row_dot(q, k1), inv_sqrt_d, "score1");
                const NodeId attn = g.softmax(g.concat({s0, s1}), "attention");
                mixed = g.add(g.scale_rows(v0, g.column(attn, 0)), g.scale_rows(v1, g.column(attn, 1)), "attention_mix");
            }
            mg->mlp_input = g.matmul(mixed, p("W_O"), "attention_out");
            break;
        }
    }

    NodeId h = mg->mlp_input;
    for (std::size_t layer = 1; layer <= cfg.num_hidden_layers; ++layer) {
        const NodeId pre = g.matmul(h, p(Model::layer_name(layer)), "preact" + std::to_string(layer));
        h = g.relu(pre, "post" + std::to_string(layer));
        mg->preactivations.push_back(pre);
        mg->postactivations.push_back(h);
    }
    mg->logits = g.matmul(h, p("W_out"), "logits");
    mg->loss = g.cross_entropy(mg->logits, mg->labels, "loss");
    return mg;
}

}  // namespace modarith
