#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "modarith/experiment.hpp"
#include "modarith/mmd.hpp"

namespace modarith {

struct Aggregates {
    std::vector<std::string> provenance;
    CsvTable training{{"architecture", "seed", "epochs", "first_perfect_epoch", "final_test_accuracy", "converged", "stop_reason"}};
    CsvTable pca{{"architecture", "seed", "layer", "frequency", "size", "evr1", "evr2", "evr3", "evr4", "top2"}};
    CsvTable pca_summary{{"architecture", "models", "clusters", "top2_above_0.99", "four_in_0.20_0.30"}};
    CsvTable pad_distance{{"architecture", "estimator", "distance", "count", "fraction"}};
    CsvTable pad_summary{{"architecture", "estimator", "samples", "within_2", "within_5", "median_distance"}};
    CsvTable metrics{{"architecture", "seed", "gradient_symmetricity", "gradient_symmetricity_std", "triples", "skipped",
                      "distance_irrelevance", "distance_irrelevance_std"}};
    CsvTable betti{{"architecture", "depth", "layer", "disc", "circle", "torus", "other", "total", "majority"}};
    CsvTable mmd{{"x", "y", "points", "permutations", "sigma", "mmd_squared", "p_value", "warning"}};
    CsvTable gaps{{"architecture", "seed", "analysis", "reason"}};
    std::map<std::string, PhaseAlignmentDistribution> pads;  // key architecture/estimator

    std::vector<Artifact> artifacts() const {
        std::vector<Artifact> out;
        auto put = [&](const std::string& name, CsvTable t) {
            t.comments.insert(t.comments.begin(), provenance.begin(), provenance.end());
            out.push_back({name, t.str()});
        };
        put("training.csv", training);
        put("pca.csv", pca);
        put("pca_summary.csv", pca_summary);
        put("pad_distance.csv", pad_distance);
        put("pad_summary.csv", pad_summary);
        put("metrics.csv", metrics);
        put("betti.csv", betti);
        put("mmd.csv", mmd);
        put("gaps.csv", gaps);
        for (const auto& [key, pad] : pads) {
            CsvTable t({"a", "b", "count", "log_density"});
            for (int a = 0; a < pad.n; ++a) {
                for (int b = 0; b < pad.n; ++b) t.add(a, b, pad.count(a, b), pad.log_density(a, b));
            }
            std::string name = "pad_" + key + ".csv";
            std::replace(name.begin(), name.end(), '/', '_');
            put(name, t);
        }
        out.push_back({"summary.json", summary().dump(1) + "\n"});
        return out;
    }

    nlohmann::json summary() const {
        nlohmann::json j;
        for (const auto& c : provenance) {
            const auto eq = c.find('=');
            j["provenance"][c.substr(0, eq)] = c.substr(eq + 1);
        }
        auto rows = [](const CsvTable& t) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& r : t.rows) {
                nlohmann::json o;
                for (std::size_t i = 0; i < t.header.size(); ++i) o[t.header[i]] = r[i];
                arr.push_back(o);
            }
            return arr;
        };
        j["pca_summary"] = rows(pca_summary);
        j["pad_summary"] = rows(pad_summary);
        j["betti"] = rows(betti);
        j["mmd"] = rows(mmd);
        j["gaps"] = rows(gaps);
        return j;
    }
};

inline std::optional<CsvTable> load_stage(const RunStore& store, const std::string& arch, std::uint64_t seed, const std::string& stage,
                                          const std::string& file) {
    if (!store.entry({arch, seed, stage})) return std::nullopt;
    const fs::path p = store.run_dir(arch, seed) / file;
    if (!fs::exists(p)) return std::nullopt;
    return CsvTable::load(p);
}

inline std::string majority_label(const BettiHistogram& h) { return std::string(to_string(h.mode())); }

// Merges per-run artifacts into plan-level tables and runs the MMD
// comparisons. Missing cells are listed in gaps, never fatal.
inline Aggregates aggregate_runs(const ExperimentPlan& p, const RunStore& store) {
    Aggregates ag;
    ag.provenance = plan_provenance(p);
    const double lo = 0.20, hi = 0.30;
    std::map<std::string, std::vector<PointSet>> pad_points;

    for (Architecture a : p.architectures) {
        const std::string arch(to_string(a));
        std::size_t models = 0, clusters = 0, top2 = 0, band = 0;
        std::map<std::string, BettiHistogram> hist;  // layer -> histogram
        std::map<PhaseEstimator, PhaseAlignmentDistribution> merged;
        for (PhaseEstimator e : {PhaseEstimator::MaxActivation, PhaseEstimator::CenterOfMass}) merged[e] = empty_pad(p.modulus, e, arch);

        for (std::uint64_t seed : p.seeds) {
            const auto gap = [&](const std::string& analysis, const std::string& reason) { ag.gaps.add(arch, seed, analysis, reason); };
            const fs::path dir = store.run_dir(arch, seed);
            if (!store.entry({arch, seed, "train"})) {
                gap("train", "no trained model");
                continue;
            }
            const CsvTable trace = CsvTable::load(dir / "trace.csv");
            std::string first_perfect = "none";
            for (std::size_t r = 0; r < trace.rows.size(); ++r) {
                if (trace.number(r, "test_accuracy") == 1.0) {
                    first_perfect = trace.text(r, "epoch");
                    break;
                }
            }
            std::string final_acc = "nan", converged = "0", stop = "unknown";
            for (const auto& c : trace.comments) {
                if (c.rfind("stop_reason=", 0) != 0) continue;
                std::istringstream ss(c);
                std::string tok;
                while (ss >> tok) {
                    const auto eq = tok.find('=');
                    const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
                    if (k == "stop_reason") stop = v;
                    if (k == "converged") converged = v;
                    if (k == "final_test_accuracy") final_acc = v;
                }
            }
            ag.training.add(arch, seed, trace.rows.size(), first_perfect, final_acc, converged, stop);
            ++models;

            if (p.wants(Analysis::Pca)) {
                if (auto t = load_stage(store, arch, seed, "pca", "pca.csv")) {
                    for (std::size_t r = 0; r < t->rows.size(); ++r) {
                        if (t->text(r, "evr1") == "nan") continue;
                        const double e[4] = {t->number(r, "evr1"), t->number(r, "evr2"), t->number(r, "evr3"), t->number(r, "evr4")};
                        ag.pca.add(arch, seed, t->text(r, "layer"), t->text(r, "frequency"), t->text(r, "size"), e[0], e[1], e[2], e[3],
                                   t->number(r, "top2"));
                        if (t->text(r, "layer") != "1") continue;
                        ++clusters;
                        top2 += t->number(r, "top2") > 0.99 ? 1 : 0;
                        band += std::all_of(std::begin(e), std::end(e), [&](double v) { return v >= lo && v <= hi; }) ? 1 : 0;
                    }
                } else {
                    gap("pca", "missing");
                }
            }
            if (p.wants(Analysis::Pad) || p.wants(Analysis::Mmd)) {
                if (auto t = load_stage(store, arch, seed, "pad", "phases.csv")) {
                    for (auto& [e, pad] : merged) {
                        const auto samples = phase_samples_from(*t, seed, e);
                        if (!samples.empty()) pad.merge(build_pad(samples, p.modulus, arch));
                    }
                } else {
                    gap("pad", "missing");
                }
            }
            if (p.wants(Analysis::Metrics)) {
                if (auto t = load_stage(store, arch, seed, "metrics", "metrics.csv")) {
                    std::map<std::string, std::size_t> row;
                    for (std::size_t r = 0; r < t->rows.size(); ++r) row[t->text(r, "metric")] = r;
                    const std::size_t g = row.at("gradient_symmetricity"), q = row.at("distance_irrelevance");
                    ag.metrics.add(arch, seed, t->text(g, "mean"), t->text(g, "std"), t->text(g, "count"), t->text(g, "skipped"),
                                   t->text(q, "mean"), t->text(q, "std"));
                } else {
                    gap("metrics", "missing");
                }
            }
            if (p.wants(Analysis::Tda)) {
                if (auto t = load_stage(store, arch, seed, "tda", "betti.csv")) {
                    for (std::size_t r = 0; r < t->rows.size(); ++r) {
                        const std::string shape = t->text(r, "shape");
                        ShapeClass s = ShapeClass::Other;
                        for (ShapeClass c : {ShapeClass::Disc, ShapeClass::Circle, ShapeClass::Torus}) {
                            if (to_string(c) == shape) s = c;
                        }
                        hist[t->text(r, "layer")].add(s);
                    }
                } else {
                    gap("tda", "missing");
                }
            }
        }

        if (p.wants(Analysis::Pca)) ag.pca_summary.add(arch, models, clusters, top2, band);
        if (p.wants(Analysis::Pad) || p.wants(Analysis::Mmd)) {
            for (auto& [e, pad] : merged) {
                const std::string est(to_string(e));
                const auto h = pad.distance_histogram();
                for (std::size_t d = 0; d < h.size(); ++d) {
                    ag.pad_distance.add(arch, est, d, h[d], pad.total_samples ? static_cast<double>(h[d]) / static_cast<double>(pad.total_samples) : 0.0);
                }
                if (pad.total_samples > 0) {
                    ag.pad_summary.add(arch, est, pad.total_samples, pad.fraction_within(2), pad.fraction_within(5), pad.median_distance());
                } else {
                    ag.pad_summary.add(arch, est, 0, "nan", "nan", "nan");
                }
                ag.pads[arch + "/" + est] = pad;
            }
        }
        if (p.wants(Analysis::Tda)) {
            const std::string depth = std::to_string(p.model(a).num_hidden_layers);
            for (const auto& [layer, h] : hist) {
                ag.betti.add(arch, depth, layer, h.count(ShapeClass::Disc), h.count(ShapeClass::Circle), h.count(ShapeClass::Torus),
                             h.count(ShapeClass::Other), h.total(), majority_label(h));
            }
        }
    }

    if (p.wants(Analysis::Mmd)) {
        const std::string est(to_string(p.mmd_estimator));
        std::vector<std::pair<std::string, PointSet>> samples;
        for (Architecture a : p.architectures) {
            const std::string arch(to_string(a));
            const auto it = ag.pads.find(arch + "/" + est);
            if (it == ag.pads.end() || it->second.total_samples == 0) {
                ag.gaps.add(arch, 0, "mmd", "empty PAD");
                continue;
            }
            samples.emplace_back(arch, sample_pad(it->second, p.mmd_points, derive_seed(p.master_seed, "pad-sample:" + arch), p.mmd_jitter));
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            for (std::size_t j = i + 1; j < samples.size(); ++j) {
                PermutationOptions opt;
                opt.permutations = p.mmd_permutations;
                opt.seed = derive_seed(p.master_seed, "permutation:" + samples[i].first + ":" + samples[j].first);
                opt.jobs = p.jobs;
                log_line("mmd " + samples[i].first + " vs " + samples[j].first);
                const TwoSampleResult r = mmd_permutation_test(samples[i].second, samples[j].second, opt);
                ag.mmd.add(samples[i].first, samples[j].first, p.mmd_points, r.permutations, r.sigma, r.mmd_squared, r.p_value,
                           r.warning.empty() ? "" : "low_permutation_count");
            }
        }
    }
    return ag;
}

inline void write_aggregates(const Aggregates& ag, const fs::path& dir) {
    for (const auto& [name, content] : ag.artifacts()) RunStore::write_if_changed(dir / name, content);
}

// Reads tables written by write_aggregates. Missing files leave empty tables.
inline Aggregates load_aggregates(const fs::path& dir) {
    Aggregates ag;
    auto load = [&](const std::string& name, CsvTable& into) -> std::optional<CsvTable> {
        const fs::path p = dir / name;
        if (!fs::exists(p)) return std::nullopt;
        CsvTable t = CsvTable::load(p);
        if (t.header != into.header) throw IoError(p.string() + ": unexpected columns");
        if (ag.provenance.empty()) {
            for (const auto& c : t.comments) {
                if (c.rfind("config_hash=", 0) == 0 || c.rfind("seeds=", 0) == 0) ag.provenance.push_back(c);
            }
        }
        into.rows = t.rows;
        return t;
    };
    load("training.csv", ag.training);
    load("pca.csv", ag.pca);
    load("pca_summary.csv", ag.pca_summary);
    load("pad_distance.csv", ag.pad_distance);
    load("pad_summary.csv", ag.pad_summary);
    load("metrics.csv", ag.metrics);
    load("betti.csv", ag.betti);
    load("mmd.csv", ag.mmd);
    load("gaps.csv", ag.gaps);
    if (!fs::exists(dir)) return ag;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        if (name.rfind("pad_", 0) != 0 || f.extension() != ".csv") continue;
        for (PhaseEstimator e : {PhaseEstimator::MaxActivation, PhaseEstimator::CenterOfMass}) {
            const std::string suffix = "_" + std::string(to_string(e)) + ".csv";
            if (name.size() <= 4 + suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
            const std::string arch = name.substr(4, name.size() - 4 - suffix.size());
            const CsvTable t = CsvTable::load(f);
            int n = 0;
            for (std::size_t r = 0; r < t.rows.size(); ++r) n = std::max(n, static_cast<int>(t.number(r, "a")) + 1);
            PhaseAlignmentDistribution pad = empty_pad(n, e, arch);
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const auto c = static_cast<std::uint64_t>(std::stoull(t.text(r, "count")));
                pad.counts[static_cast<std::size_t>(std::stoi(t.text(r, "a")) * n + std::stoi(t.text(r, "b")))] = c;
                pad.total_samples += c;
            }
            ag.pads[arch + "/" + std::string(to_string(e))] = std::move(pad);
        }
    }
    return ag;
}

// SVG figures, tables and an index, all derived from the aggregate tables.
inline std::vector<Artifact> build_report(const ExperimentPlan& p, const Aggregates& ag) {
    std::vector<Artifact> out;
    const std::string prov = ag.provenance.empty() ? "" : ag.provenance[0] + " " + (ag.provenance.size() > 1 ? ag.provenance[1] : "");
    std::vector<std::pair<std::string, std::string>> index;  // file, caption

    // PAD heatmaps
    bool any_pad = false;
    for (const auto& [key, pad] : ag.pads) {
        if (pad.total_samples == 0) continue;
        any_pad = true;
        std::vector<double> v(pad.counts.size());
        for (int a = 0; a < pad.n; ++a) {
            for (int b = 0; b < pad.n; ++b) v[static_cast<std::size_t>(a * pad.n + b)] = pad.log_density(a, b);
        }
        std::string name = "pad_" + key + ".svg";
        std::replace(name.begin(), name.end(), '/', '_');
        out.push_back({name, svg::heatmap(v, pad.n, pad.n, "phase alignment log density: " + key, prov)});
        index.emplace_back(name, "phase alignment heatmap, " + key + ", " + std::to_string(pad.total_samples) + " samples");
    }
    if (!any_pad) index.emplace_back("", "phase alignment heatmaps: no data");

    // torus distance histograms (max-activation estimator)
    {
        std::vector<std::string> labels;
        std::vector<svg::Series> series;
        for (const auto& [key, pad] : ag.pads) {
            if (pad.total_samples == 0 || pad.estimator != PhaseEstimator::MaxActivation) continue;
            const auto h = pad.distance_histogram();
            if (labels.empty()) {
                for (std::size_t d = 0; d < h.size(); ++d) labels.push_back(std::to_string(d));
            }
            svg::Series s{pad.architecture, {}};
            for (auto c : h) s.values.push_back(static_cast<double>(c) / static_cast<double>(pad.total_samples));
            series.push_back(std::move(s));
        }
        if (series.empty()) {
            index.emplace_back("", "torus distance histograms: no data");
        } else {
            out.push_back({"torus_distance.svg", svg::bar_chart(labels, series, "fraction of neurons by torus distance to the diagonal", prov)});
            index.emplace_back("torus_distance.svg", "torus distance histogram per architecture");
        }
    }

    // Betti stacked bars
    if (ag.betti.rows.empty()) {
        index.emplace_back("", "Betti distributions: no data");
    } else {
        std::vector<std::string> rows;
        std::vector<std::vector<double>> counts;
        for (std::size_t r = 0; r < ag.betti.rows.size(); ++r) {
            rows.push_back(ag.betti.text(r, "architecture") + " depth " + ag.betti.text(r, "depth") + " layer " + ag.betti.text(r, "layer"));
            counts.push_back({ag.betti.number(r, "disc"), ag.betti.number(r, "circle"), ag.betti.number(r, "torus"), ag.betti.number(r, "other")});
        }
        out.push_back({"betti.svg", svg::stacked_bars(rows, {"disc (1,0,0)", "circle (1,1,0)", "torus (1,2,1)", "other"}, counts,
                                                      "Betti vector distribution", prov)});
        index.emplace_back("betti.svg", "Betti distributions per architecture, depth and layer");
    }

    // metric scatter
    if (ag.metrics.rows.empty()) {
        index.emplace_back("", "circuit metrics: no data");
    } else {
        std::map<std::string, svg::ScatterGroup> groups;
        for (std::size_t r = 0; r < ag.metrics.rows.size(); ++r) {
            const std::string q = ag.metrics.text(r, "distance_irrelevance");
            if (q == "nan") continue;
            auto& g = groups[ag.metrics.text(r, "architecture")];
            g.name = ag.metrics.text(r, "architecture");
            g.x.push_back(ag.metrics.number(r, "gradient_symmetricity"));
            g.y.push_back(std::stod(q));
        }
        std::vector<svg::ScatterGroup> gs;
        for (Architecture a : p.architectures) {
            if (groups.contains(std::string(to_string(a)))) gs.push_back(groups[std::string(to_string(a))]);
        }
        out.push_back({"metrics.svg", svg::scatter(gs, "gradient symmetricity", "distance irrelevance", "circuit metrics per model", prov)});
        index.emplace_back("metrics.svg", "gradient symmetricity vs distance irrelevance");
    }

    // MMD tables
    {
        std::string md = "<!-- " + prov + " -->\n\n| x | y | MMD^2 | p | sigma | points | permutations |\n|---|---|---|---|---|---|---|\n";
        for (std::size_t r = 0; r < ag.mmd.rows.size(); ++r) {
            md += "| " + ag.mmd.text(r, "x") + " | " + ag.mmd.text(r, "y") + " | " + ag.mmd.text(r, "mmd_squared") + " | " +
                  ag.mmd.text(r, "p_value") + " | " + ag.mmd.text(r, "sigma") + " | " + ag.mmd.text(r, "points") + " | " +
                  ag.mmd.text(r, "permutations") + " |\n";
        }
        if (ag.mmd.rows.empty()) md += "\nno data\n";
        out.push_back({"mmd.md", md});
        index.emplace_back("mmd.md", ag.mmd.rows.empty() ? "MMD comparisons: no data" : "pairwise MMD comparisons");
        CsvTable pad = ag.pad_summary;
        pad.comments = ag.provenance;
        out.push_back({"pad_summary.csv", pad.str()});
        index.emplace_back("pad_summary.csv", "PAD concentration per architecture");
    }

    std::string html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>modarith report</title></head><body>\n";
    html += "<p>" + svg::escape(prov) + "</p>\n<ul>\n";
    for (const auto& [file, caption] : index) {
        if (file.empty()) html += "<li>" + svg::escape(caption) + "</li>\n";
        else html += "<li><a href=\"" + file + "\">" + svg::escape(file) + "</a>: " + svg::escape(caption) + "</li>\n";
    }
    if (!ag.gaps.rows.empty()) {
        html += "</ul>\n<h2>gaps</h2>\n<ul>\n";
        for (const auto& r : ag.gaps.rows) html += "<li>" + svg::escape(r[0] + " seed " + r[1] + " " + r[2] + ": " + r[3]) + "</li>\n";
    }
    html += "</ul>\n</body></html>\n";
    out.push_back({"index.html", html});
    return out;
}

inline void write_report(const std::vector<Artifact>& report, const fs::path& dir) {
    for (const auto& [name, content] : report) RunStore::write_if_changed(dir / name, content);
}

// Full pipeline: train, analyze, oracle, aggregate, report.
inline RunReport run_experiment(const ExperimentPlan& p) {
    p.validate();
    RunStore store(p.output_dir);
    RunReport rep;
    if (p.needs_training()) merge_report(rep, run_cells(p, store, {}));
    if (p.wants(Analysis::TheoremOracle)) run_oracle(p, store, rep);
    if (p.needs_training()) {
        write_aggregates(aggregate_runs(p, store), store.root() / "aggregate");
        write_report(build_report(p, load_aggregates(store.root() / "aggregate")), store.root() / "report");
    }
    return rep;
}

}  // namespace modarith
