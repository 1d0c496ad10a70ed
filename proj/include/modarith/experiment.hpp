#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "modarith/analysis.hpp"
#include "modarith/checkpoint.hpp"
#include "modarith/config.hpp"
#include "modarith/dataset.hpp"
#include "modarith/io.hpp"
#include "modarith/parallel.hpp"

namespace modarith {

namespace fs = std::filesystem;

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

inline bool& log_enabled() {
    static bool on = true;
    return on;
}

inline void log_line(const std::string& msg) {
    if (!log_enabled()) return;
    std::lock_guard lock(log_mutex());
    std::clog << msg << std::endl;
}

struct ManifestKey {
    std::string architecture;  // "*" for plan-level stages
    std::uint64_t seed = 0;
    std::string stage;
    auto operator<=>(const ManifestKey&) const = default;
};

struct ManifestEntry {
    std::string config_hash;
    std::string content_hash;
    std::vector<std::string> files;  // relative to the store root
};

// Directory of trained models and analysis artifacts plus a manifest of
// completed stages. A stage counts as done when its config hash matches and
// the files on disk still hash to the recorded content hash.
class RunStore {
public:
    explicit RunStore(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_);
        load();
    }

    const fs::path& root() const { return root_; }

    fs::path run_dir(std::string_view arch, std::uint64_t seed) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "seed_%04llu", static_cast<unsigned long long>(seed));
        return root_ / "runs" / std::string(arch) / buf;
    }

    fs::path relative(const fs::path& p) const { return fs::relative(p, root_); }

    std::string content_hash(const std::vector<std::string>& files) const {
        std::uint64_t h = fnv1a("");
        for (const auto& f : files) {
            h = fnv1a(f, h);
            h = fnv1a(read_file(root_ / f), h);
        }
        return hex64(h);
    }

    bool is_current(const ManifestKey& key, const std::string& config_hash) const {
        std::lock_guard lock(mutex_);
        const auto it = entries_.find(key);
        if (it == entries_.end() || it->second.config_hash != config_hash) return false;
        for (const auto& f : it->second.files) {
            if (!fs::exists(root_ / f)) return false;
        }
        try {
            return content_hash(it->second.files) == it->second.content_hash;
        } catch (const IoError&) {
            return false;
        }
    }

    void record(const ManifestKey& key, const std::string& config_hash, std::vector<std::string> files) {
        ManifestEntry e{config_hash, content_hash(files), std::move(files)};
        std::lock_guard lock(mutex_);
        entries_[key] = std::move(e);
        save();
    }

    std::optional<ManifestEntry> entry(const ManifestKey& key) const {
        std::lock_guard lock(mutex_);
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

    // Writes artifacts under the run directory and records the stage.
    void commit(const ManifestKey& key, const std::string& config_hash, const std::vector<Artifact>& artifacts, const fs::path& dir) {
        std::vector<std::string> files;
        for (const auto& [name, content] : artifacts) {
            write_if_changed(dir / name, content);
            files.push_back(relative(dir / name).generic_string());
        }
        record(key, config_hash, std::move(files));
    }

    static bool write_if_changed(const fs::path& p, std::string_view content) {
        if (fs::exists(p)) {
            try {
                if (read_file(p) == content) return false;
            } catch (const IoError&) {
            }
        }
        write_file_atomic(p, content);
        return true;
    }

private:
    void load() {
        const fs::path p = root_ / "manifest.tsv";
        if (!fs::exists(p)) return;
        const std::string text = read_file(p);
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            const std::string line = text.substr(pos, end - pos);
            pos = end + 1;
            if (line.empty() || line.front() == '#') continue;
            std::vector<std::string> f;
            std::size_t s = 0;
            while (true) {
                const std::size_t t = line.find('\t', s);
                f.push_back(line.substr(s, t == std::string::npos ? std::string::npos : t - s));
                if (t == std::string::npos) break;
                s = t + 1;
            }
            if (f.size() < 5) throw IoError("malformed manifest line: " + line);
            ManifestEntry e{f[3], f[4], {}};
            for (std::size_t i = 5; i < f.size(); ++i) e.files.push_back(f[i]);
            entries_[{f[0], std::stoull(f[1]), f[2]}] = std::move(e);
        }
    }

    void save() const {
        std::string out = "# architecture\tseed\tstage\tconfig_hash\tcontent_hash\tfiles...\n";
        for (const auto& [k, e] : entries_) {
            out += k.architecture + "\t" + std::to_string(k.seed) + "\t" + k.stage + "\t" + e.config_hash + "\t" + e.content_hash;
            for (const auto& f : e.files) out += "\t" + f;
            out += "\n";
        }
        write_if_changed(root_ / "manifest.tsv", out);
    }

    fs::path root_;
    mutable std::mutex mutex_;
    std::map<ManifestKey, ManifestEntry> entries_;
};

inline std::uint64_t split_seed(const ExperimentPlan& p, std::uint64_t seed) { return derive_seed(p.master_seed, "split", seed); }

inline std::uint64_t run_seed(const ExperimentPlan& p, Architecture a, std::uint64_t seed) {
    return derive_seed(p.master_seed, to_string(a), seed);
}

inline std::string train_hash(const ExperimentPlan& p, Architecture a) {
    return hex64(fnv1a("master_seed=" + std::to_string(p.master_seed) + "\n" + model_canonical(p.model(a))));
}

inline std::string analysis_hash(const ExperimentPlan& p, Architecture a) {
    return hex64(fnv1a(train_hash(p, a) + "\n" + analysis_canonical(p)));
}

struct RunReport {
    std::size_t trained = 0;
    std::size_t trained_skipped = 0;
    std::size_t analyzed = 0;
    std::size_t analyzed_skipped = 0;
    std::vector<std::string> failures;
};

struct StageOptions {
    bool train = true;
    bool analyze = true;
};

inline void merge_report(RunReport& into, const RunReport& r) {
    into.trained += r.trained;
    into.trained_skipped += r.trained_skipped;
    into.analyzed += r.analyzed;
    into.analyzed_skipped += r.analyzed_skipped;
    into.failures.insert(into.failures.end(), r.failures.begin(), r.failures.end());
}

inline TrainedModel train_run(const ExperimentPlan& p, Architecture a, std::uint64_t seed) {
    const ModelConfig& cfg = p.model(a);
    const Dataset data = generate_dataset({cfg.modulus, cfg.train_fraction, split_seed(p, seed)});
    const std::uint64_t rs = run_seed(p, a, seed);
    return train_model(build_model(cfg, rs), data, rs);
}

// Train (if missing) and analyze one (architecture, seed) cell.
inline RunReport process_run(const ExperimentPlan& p, RunStore& store, Architecture a, std::uint64_t seed, const StageOptions& stages,
                             std::size_t inner_jobs) {
    RunReport rep;
    const std::string arch(to_string(a));
    const fs::path dir = store.run_dir(arch, seed);
    const std::string th = train_hash(p, a);
    const ManifestKey train_key{arch, seed, "train"};
    RunContext ctx{arch, seed, run_seed(p, a, seed), th};
    const std::string tag = arch + " seed " + std::to_string(seed);

    std::optional<TrainedModel> tm;
    if (store.is_current(train_key, th)) {
        ++rep.trained_skipped;
    } else if (stages.train) {
        log_line("train " + tag);
        const auto t0 = std::chrono::steady_clock::now();
        tm = train_run(p, a, seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_checkpoint(*tm, dir / "model");
        // Wall time varies between runs, so it lives outside the hashed artifacts.
        write_file_atomic(dir / "timing.txt", "train_seconds " + format_number(secs) + "\n");
        std::vector<Artifact> arts{{"trace.csv", trace_table(*tm, ctx).str()}};
        std::vector<std::string> files{store.relative(dir / "model" / "meta.json").generic_string(),
                                       store.relative(dir / "model" / "weights.bin").generic_string()};
        for (const auto& [name, content] : arts) {
            RunStore::write_if_changed(dir / name, content);
            files.push_back(store.relative(dir / name).generic_string());
        }
        store.record(train_key, th, files);
        log_line("trained " + tag + ": " + tm->stop_reason + " after " + std::to_string(tm->trace.size()) + " epochs, test accuracy " +
                 format_number(tm->final_test_accuracy) + " (" + format_number(std::round(secs)) + " s)");
        ++rep.trained;
    } else {
        rep.failures.push_back(tag + ": no trained model");
        return rep;
    }
    if (!stages.analyze) return rep;

    const std::string ah = analysis_hash(p, a);
    ctx.config_hash = ah;
    std::vector<Analysis> todo;
    std::set<Analysis> wanted;
    for (Analysis an : p.analyses) wanted.insert(an == Analysis::Mmd ? Analysis::Pad : an);  // MMD reads the phase samples
    for (Analysis an : wanted) {
        if (is_per_run(an) && !store.is_current({arch, seed, std::string(to_string(an))}, ah)) todo.push_back(an);
        else if (is_per_run(an)) ++rep.analyzed_skipped;
    }
    if (todo.empty()) return rep;
    if (!tm) tm = load_checkpoint(dir / "model");
    const GridActivations acts = extract_activations(tm->model);
    std::vector<ClusterSet> clusters;
    if (std::any_of(todo.begin(), todo.end(), [](Analysis x) { return x != Analysis::Metrics; })) {
        clusters = cluster_layers(acts, p.analysis.clustering);
    }
    for (Analysis an : todo) {
        const std::string name(to_string(an));
        try {
            log_line("analyze " + tag + ": " + name);
            std::vector<Artifact> arts;
            switch (an) {
                case Analysis::Pca: arts.push_back({"pca.csv", pca_table(clusters, ctx).str()}); break;
                case Analysis::Pad: arts.push_back({"phases.csv", phase_table(acts, clusters, ctx).str()}); break;
                case Analysis::Metrics: arts.push_back({"metrics.csv", metrics_table(tm->model, acts, ctx, inner_jobs).str()}); break;
                case Analysis::Tda: {
                    const TdaTables t = tda_tables(acts, clusters, ctx, p.analysis.tda);
                    arts.push_back({"betti.csv", t.betti.str()});
                    arts.push_back({"diagrams.csv", t.diagrams.str()});
                    break;
                }
                default: break;
            }
            store.commit({arch, seed, name}, ah, arts, dir);
            ++rep.analyzed;
        } catch (const std::exception& e) {
            rep.failures.push_back(tag + " " + name + ": " + e.what());
            log_line("FAILED " + tag + " " + name + ": " + e.what());
        }
    }
    return rep;
}

// Runs every (architecture, seed) cell, isolating failures per cell.
inline RunReport run_cells(const ExperimentPlan& p, RunStore& store, const StageOptions& stages) {
    std::vector<std::pair<Architecture, std::uint64_t>> cells;
    for (Architecture a : p.architectures) {
        for (std::uint64_t s : p.seeds) cells.emplace_back(a, s);
    }
    std::vector<RunReport> reports(cells.size());
    const std::size_t outer = std::min(resolve_jobs(p.jobs), std::max<std::size_t>(1, cells.size()));
    const std::size_t inner = outer > 1 ? 1 : resolve_jobs(p.jobs);
    parallel_for(cells.size(), outer, [&](std::size_t i) {
        try {
            reports[i] = process_run(p, store, cells[i].first, cells[i].second, stages, inner);
        } catch (const std::exception& e) {
            const std::string tag = std::string(to_string(cells[i].first)) + " seed " + std::to_string(cells[i].second);
            reports[i].failures.push_back(tag + ": " + e.what());
            log_line("FAILED " + tag + ": " + e.what());
        }
    });
    RunReport total;
    for (const auto& r : reports) merge_report(total, r);
    return total;
}

inline std::vector<std::string> plan_provenance(const ExperimentPlan& p) {
    return {"config_hash=" + plan_hash(p), "seeds=" + seed_list(p.seeds)};
}

inline void run_oracle(const ExperimentPlan& p, RunStore& store, RunReport& rep) {
    const std::string h = plan_hash(p);
    const ManifestKey key{"*", 0, "oracle"};
    if (store.is_current(key, h)) {
        ++rep.analyzed_skipped;
        return;
    }
    log_line("oracle: " + std::to_string(p.oracle_clusters) + " synthetic clusters per mode");
    const CsvTable t = theorem_oracle_table(p.oracle_clusters, p.master_seed, p.modulus, plan_provenance(p));
    store.commit(key, h, {{"theorem.csv", t.str()}}, store.root() / "oracle");
    ++rep.analyzed;
}

}  // namespace modarith
