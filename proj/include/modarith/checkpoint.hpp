#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "modarith/model.hpp"
#include "modarith/train.hpp"

namespace modarith {

namespace fs = std::filesystem;
using json = nlohmann::json;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Choices that are not dictated by the task and are recorded in every checkpoint.
inline json model_decisions() {
    return {
        {"precision", "float64"},
        {"optimizer", "adam beta1=0.9 beta2=0.999 eps=1e-8"},
        {"weight_decay", "coupled L2 (lambda*param added to gradient)"},
        {"init", "uniform +-1/sqrt(fan_in); lookup tables +-1"},
        {"biases", "none"},
        {"attention", "single head, learned positional vectors, no residual, readout at second token, scores scaled by 1/sqrt(d)"},
        {"stopping", "patience epochs at 100% test accuracy, else max_epochs"},
        {"split", "train size = round(train_fraction * n^2)"},
    };
}

inline json config_to_json(const ModelConfig& c) {
    return {{"architecture", std::string(to_string(c.architecture))},
            {"modulus", c.modulus},
            {"embedding_dim", c.embedding_dim},
            {"hidden_width", c.hidden_width},
            {"num_hidden_layers", c.num_hidden_layers},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"max_epochs", c.max_epochs},
            {"batch_size", c.batch_size},
            {"patience", c.patience},
            {"train_fraction", c.train_fraction}};
}

inline ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    c.modulus = j.at("modulus").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden_width = j.at("hidden_width").get<std::size_t>();
    c.num_hidden_layers = j.at("num_hidden_layers").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.train_fraction = j.at("train_fraction").get<double>();
    return c;
}

inline void write_le_doubles(std::ostream& out, std::span<const double> values) {
    static_assert(sizeof(double) == 8);
    for (double v : values) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

inline void read_le_doubles(std::istream& in, std::span<double> values) {
    for (double& v : values) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("weights.bin is truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        v = std::bit_cast<double>(bits);
    }
}

inline json trace_summary(const TrainedModel& tm) {
    json s = {{"epochs_run", tm.trace.size()},
              {"final_test_accuracy", tm.final_test_accuracy},
              {"final_train_accuracy", tm.final_train_accuracy},
              {"converged", tm.converged},
              {"stop_reason", tm.stop_reason}};
    for (const auto& r : tm.trace) {
        if (r.test_accuracy == 1.0) {
            s["first_perfect_epoch"] = r.epoch;
            break;
        }
    }
    return s;
}

// Writes <dir>/meta.json and <dir>/weights.bin (little-endian float64, tensors
// concatenated in the order declared by meta.json).
inline void save_checkpoint(const TrainedModel& tm, const fs::path& dir) {
    fs::create_directories(dir);
    json meta;
    meta["format"] = "modarith-checkpoint-1";
    meta["config"] = config_to_json(tm.model.config());
    meta["seed"] = tm.seed;
    meta["decisions"] = model_decisions();
    meta["summary"] = trace_summary(tm);
    json tensors = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tm.model.parameter_count(); ++i) {
        const Tensor& t = tm.model.parameter(i);
        tensors.push_back({{"name", tm.model.parameter_name(i)}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    meta["tensors"] = tensors;
    json trace = json::array();
    for (const auto& r : tm.trace) trace.push_back({r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy});
    meta["trace_columns"] = {"epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy"};
    meta["trace"] = trace;

    const fs::path tmp_weights = dir / "weights.bin.tmp";
    {
        std::ofstream w(tmp_weights, std::ios::binary | std::ios::trunc);
        if (!w) throw CheckpointError("cannot write " + tmp_weights.string());
        for (std::size_t i = 0; i < tm.model.parameter_count(); ++i) write_le_doubles(w, tm.model.parameter(i).values());
    }
    const fs::path tmp_meta = dir / "meta.json.tmp";
    {
        std::ofstream m(tmp_meta, std::ios::trunc);
        if (!m) throw CheckpointError("cannot write " + tmp_meta.string());
        m << meta.dump(1) << '\n';
    }
    fs::rename(tmp_weights, dir / "weights.bin");
    fs::rename(tmp_meta, dir / "meta.json");
}

inline bool checkpoint_exists(const fs::path& dir) {
    return fs::exists(dir / "meta.json") && fs::exists(dir / "weights.bin");
}

inline TrainedModel load_checkpoint(const fs::path& dir) {
    std::ifstream m(dir / "meta.json");
    if (!m) throw CheckpointError("missing " + (dir / "meta.json").string());
    json meta;
    try {
        meta = json::parse(m);
    } catch (const json::exception& e) {
        throw CheckpointError("malformed meta.json in " + dir.string() + ": " + e.what());
    }
    TrainedModel tm;
    tm.seed = meta.at("seed").get<std::uint64_t>();
    Model model(config_from_json(meta.at("config")));
    std::ifstream w(dir / "weights.bin", std::ios::binary);
    if (!w) throw CheckpointError("missing " + (dir / "weights.bin").string());
    for (const auto& t : meta.at("tensors")) {
        Tensor value(t.at("shape").get<Shape>());
        read_le_doubles(w, value.values());
        model.add_parameter(t.at("name").get<std::string>(), std::move(value));
    }
    if (w.peek() != std::char_traits<char>::eof()) throw CheckpointError("weights.bin has trailing bytes");
    tm.model = std::move(model);
    const json& s = meta.at("summary");
    tm.final_test_accuracy = s.at("final_test_accuracy").get<double>();
    tm.final_train_accuracy = s.at("final_train_accuracy").get<double>();
    tm.converged = s.at("converged").get<bool>();
    tm.stop_reason = s.at("stop_reason").get<std::string>();
    for (const auto& r : meta.at("trace")) {
        tm.trace.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                            r.at(4).get<double>()});
    }
    return tm;
}

}  // namespace modarith
