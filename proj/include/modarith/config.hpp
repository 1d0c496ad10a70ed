#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "modarith/analysis.hpp"
#include "modarith/io.hpp"
#include "modarith/model.hpp"

namespace modarith {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ExperimentPlan {
    std::vector<Architecture> architectures;
    std::vector<std::uint64_t> seeds;
    int modulus = 59;
    std::uint64_t master_seed = 0;
    std::map<Architecture, ModelConfig> models;
    std::set<Analysis> analyses;
    std::filesystem::path output_dir = "runs";
    std::size_t jobs = 1;

    AnalysisSettings analysis;
    std::size_t mmd_points = 2000;
    std::size_t mmd_permutations = 5000;
    bool mmd_jitter = true;
    PhaseEstimator mmd_estimator = PhaseEstimator::MaxActivation;
    std::size_t oracle_clusters = 100;

    void validate() const {
        if (architectures.empty()) throw ConfigError("plan has no architectures");
        if (seeds.empty()) throw ConfigError("plan has no seeds");
        if (analyses.empty()) throw ConfigError("plan has no analyses");
        for (Architecture a : architectures) model(a).validate();
    }

    const ModelConfig& model(Architecture a) const {
        const auto it = models.find(a);
        if (it == models.end()) throw ConfigError("no model configuration for " + std::string(to_string(a)));
        return it->second;
    }

    bool wants(Analysis a) const { return analyses.contains(a); }
    bool needs_training() const {
        return std::any_of(analyses.begin(), analyses.end(), [](Analysis a) { return a != Analysis::TheoremOracle; });
    }
};

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t c = s.find(',', start);
        const std::string item = trim(s.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
        if (!item.empty()) out.push_back(item);
        if (c == std::string_view::npos) break;
        start = c + 1;
    }
    return out;
}

inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    const std::string t = trim(s);
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw ConfigError(std::string(what) + ": expected a non-negative integer, got '" + t + "'");
    }
    return std::stoull(t);
}

inline double parse_double(std::string_view s, std::string_view what) {
    const std::string t = trim(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != t.size()) throw ConfigError(std::string(what) + ": expected a number, got '" + t + "'");
    return v;
}

inline bool parse_bool(std::string_view s, std::string_view what) {
    const std::string t = trim(s);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError(std::string(what) + ": expected true or false, got '" + t + "'");
}

// "1..10", "3", or "1,4,9" (ranges may appear in the list).
inline std::vector<std::uint64_t> parse_seeds(std::string_view s) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(s)) {
        const std::size_t dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(parse_u64(item, "seeds"));
            continue;
        }
        const std::uint64_t a = parse_u64(item.substr(0, dots), "seeds"), b = parse_u64(item.substr(dots + 2), "seeds");
        if (b < a) throw ConfigError("seeds: empty range " + item);
        for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.empty()) throw ConfigError("seeds: empty list");
    return out;
}

inline std::vector<Architecture> parse_architectures(std::string_view s) {
    std::vector<Architecture> out;
    for (const std::string& item : split_list(s)) {
        if (item == "all") return {std::begin(kAllArchitectures), std::end(kAllArchitectures)};
        try {
            out.push_back(parse_architecture(item));
        } catch (const UnknownArchitecture& e) {
            throw ConfigError(e.what());
        }
    }
    std::vector<Architecture> ordered;
    for (Architecture a : kAllArchitectures) {
        if (std::find(out.begin(), out.end(), a) != out.end()) ordered.push_back(a);
    }
    return ordered;
}

inline void apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
    if (key == "learning_rate") c.learning_rate = parse_double(value, key);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
    else if (key == "max_epochs") c.max_epochs = parse_u64(value, key);
    else if (key == "patience") c.patience = parse_u64(value, key);
    else if (key == "hidden_width") c.hidden_width = parse_u64(value, key);
    else if (key == "embedding_dim") c.embedding_dim = parse_u64(value, key);
    else if (key == "hidden_layers") c.num_hidden_layers = parse_u64(value, key);
    else if (key == "batch_size") c.batch_size = parse_u64(value, key);
    else if (key == "train_fraction") c.train_fraction = parse_double(value, key);
    else throw ConfigError("unknown model key '" + key + "'");
}

inline ExperimentPlan default_plan() {
    ExperimentPlan p;
    p.architectures.assign(std::begin(kAllArchitectures), std::end(kAllArchitectures));
    p.seeds = {1};
    p.analyses = {std::begin(kAllAnalyses), std::end(kAllAnalyses)};
    for (Architecture a : kAllArchitectures) p.models[a] = ModelConfig::defaults(a);
    return p;
}

// Flat key = value text. Keys before any section are global; [models]
// applies to every architecture and [<architecture>] overrides it.
inline ExperimentPlan parse_plan(std::string_view text) {
    ExperimentPlan p = default_plan();
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    std::string section;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (const std::size_t hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "models") {
                try {
                    parse_architecture(section);
                } catch (const UnknownArchitecture&) {
                    throw ConfigError(where + "unknown section [" + section + "]");
                }
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        sections[section].emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        if (end == text.size()) break;
    }

    for (const auto& [key, value] : sections[""]) {
        try {
            if (key == "architectures") p.architectures = parse_architectures(value);
            else if (key == "seeds") p.seeds = parse_seeds(value);
            else if (key == "modulus") p.modulus = static_cast<int>(parse_u64(value, key));
            else if (key == "master_seed") p.master_seed = parse_u64(value, key);
            else if (key == "output_dir") p.output_dir = value;
            else if (key == "jobs") p.jobs = parse_u64(value, key);
            else if (key == "analyses") {
                p.analyses.clear();
                for (const auto& a : split_list(value)) p.analyses.insert(parse_analysis(a));
            }
            else if (key == "mmd.points") p.mmd_points = parse_u64(value, key);
            else if (key == "mmd.permutations") p.mmd_permutations = parse_u64(value, key);
            else if (key == "mmd.jitter") p.mmd_jitter = parse_bool(value, key);
            else if (key == "mmd.estimator") {
                if (value == "max_activation") p.mmd_estimator = PhaseEstimator::MaxActivation;
                else if (value == "center_of_mass") p.mmd_estimator = PhaseEstimator::CenterOfMass;
                else throw ConfigError("mmd.estimator: expected max_activation or center_of_mass");
            }
            else if (key == "tda.landmarks") p.analysis.tda.landmarks = parse_u64(value, key);
            else if (key == "tda.max_clusters") p.analysis.tda.max_clusters = parse_u64(value, key);
            else if (key == "tda.relative_threshold") p.analysis.tda.rule.relative_threshold = parse_double(value, key);
            else if (key == "tda.noise_floor") p.analysis.tda.rule.noise_floor = parse_double(value, key);
            else if (key == "tda.logits") p.analysis.tda.logits = parse_bool(value, key);
            else if (key == "tda.logits_per_cluster") p.analysis.tda.logits_per_cluster = parse_bool(value, key);
            else if (key == "cluster.min_energy_fraction") p.analysis.clustering.min_energy_fraction = parse_double(value, key);
            else if (key == "oracle.clusters") p.oracle_clusters = parse_u64(value, key);
            else throw ConfigError("unknown key '" + key + "'");
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(e.what()));
        }
    }
    for (Architecture a : kAllArchitectures) {
        ModelConfig& c = p.models[a];
        for (const auto& [key, value] : sections["models"]) apply_model_key(c, key, value);
        for (const auto& [key, value] : sections[std::string(to_string(a))]) apply_model_key(c, key, value);
        c.modulus = p.modulus;
    }
    p.validate();
    return p;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
    try {
        return parse_plan(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline std::string seed_list(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size();) {
        std::size_t j = i;
        while (j + 1 < seeds.size() && seeds[j + 1] == seeds[j] + 1) ++j;
        if (!out.empty()) out += ';';
        out += std::to_string(seeds[i]);
        if (j > i) out += ".." + std::to_string(seeds[j]);
        i = j + 1;
    }
    return out;
}

inline std::string model_canonical(const ModelConfig& c) {
    return "architecture=" + std::string(to_string(c.architecture)) + "\nmodulus=" + std::to_string(c.modulus) +
           "\nembedding_dim=" + std::to_string(c.embedding_dim) + "\nhidden_width=" + std::to_string(c.hidden_width) +
           "\nhidden_layers=" + std::to_string(c.num_hidden_layers) + "\nlearning_rate=" + format_number(c.learning_rate) +
           "\nweight_decay=" + format_number(c.weight_decay) + "\nmax_epochs=" + std::to_string(c.max_epochs) +
           "\nbatch_size=" + std::to_string(c.batch_size) + "\npatience=" + std::to_string(c.patience) +
           "\ntrain_fraction=" + format_number(c.train_fraction) + "\n";
}

// Settings that change per-model analysis output. Output paths, job counts
// and the seed list are excluded so that resuming with other flags reuses work.
inline std::string analysis_canonical(const ExperimentPlan& p) {
    const auto& t = p.analysis.tda;
    return "tda.landmarks=" + std::to_string(t.landmarks) + "\ntda.max_clusters=" + std::to_string(t.max_clusters) +
           "\ntda.relative_threshold=" + format_number(t.rule.relative_threshold) + "\ntda.noise_floor=" +
           format_number(t.rule.noise_floor) + "\ntda.logits=" + (t.logits ? "1" : "0") +
           "\ntda.logits_per_cluster=" + (t.logits_per_cluster ? "1" : "0") + "\ncluster.min_energy_fraction=" +
           format_number(p.analysis.clustering.min_energy_fraction) + "\n";
}

inline std::string plan_canonical(const ExperimentPlan& p) {
    std::string s = "master_seed=" + std::to_string(p.master_seed) + "\nmodulus=" + std::to_string(p.modulus) + "\narchitectures=";
    for (Architecture a : p.architectures) s += std::string(to_string(a)) + ";";
    s += "\nseeds=" + seed_list(p.seeds) + "\nanalyses=";
    for (Analysis a : p.analyses) s += std::string(to_string(a)) + ";";
    s += "\nmmd.points=" + std::to_string(p.mmd_points) + "\nmmd.permutations=" + std::to_string(p.mmd_permutations) +
         "\nmmd.jitter=" + (p.mmd_jitter ? "1" : "0") + "\nmmd.estimator=" + std::string(to_string(p.mmd_estimator)) +
         "\noracle.clusters=" + std::to_string(p.oracle_clusters) + "\n" + analysis_canonical(p);
    for (Architecture a : p.architectures) s += model_canonical(p.model(a));
    return s;
}

inline std::string plan_hash(const ExperimentPlan& p) { return hex64(fnv1a(plan_canonical(p))); }

}  // namespace modarith
