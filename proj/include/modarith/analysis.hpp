#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modarith/activations.hpp"
#include "modarith/circuit_metrics.hpp"
#include "modarith/freq_cluster.hpp"
#include "modarith/geometry.hpp"
#include "modarith/io.hpp"
#include "modarith/phase_stats.hpp"
#include "modarith/rng.hpp"
#include "modarith/tda.hpp"
#include "modarith/train.hpp"

namespace modarith {

enum class Analysis { Pca, Pad, Metrics, Mmd, Tda, TheoremOracle };

inline constexpr Analysis kAllAnalyses[] = {Analysis::Pca, Analysis::Pad, Analysis::Metrics, Analysis::Mmd, Analysis::Tda,
                                            Analysis::TheoremOracle};

inline std::string_view to_string(Analysis a) {
    switch (a) {
        case Analysis::Pca: return "pca";
        case Analysis::Pad: return "pad";
        case Analysis::Metrics: return "metrics";
        case Analysis::Mmd: return "mmd";
        case Analysis::Tda: return "tda";
        case Analysis::TheoremOracle: return "oracle";
    }
    return "?";
}

inline Analysis parse_analysis(std::string_view s) {
    for (Analysis a : kAllAnalyses) {
        if (to_string(a) == s) return a;
    }
    if (s == "theoremOracle" || s == "theorem_oracle") return Analysis::TheoremOracle;
    throw std::invalid_argument("unknown analysis '" + std::string(s) + "'");
}

// Analyses computed from one trained model. Mmd and the oracle are not
// per-model and are handled at the plan level.
inline bool is_per_run(Analysis a) { return a == Analysis::Pca || a == Analysis::Pad || a == Analysis::Metrics || a == Analysis::Tda; }

struct TdaSettings {
    std::size_t landmarks = 250;
    std::size_t max_clusters = 0;  // per layer, largest first; 0 keeps all
    BettiRule rule;
    bool logits = true;
    bool logits_per_cluster = true;  // each last-layer cluster's share of the logits
};

struct AnalysisSettings {
    TdaSettings tda;
    ClusterOptions clustering;
    std::size_t jobs = 1;
};

// Each artifact is a file name plus its full contents.
using Artifact = std::pair<std::string, std::string>;

struct RunContext {
    std::string architecture;
    std::uint64_t seed = 0;
    std::uint64_t run_seed = 0;
    std::string config_hash;
    std::vector<std::string> provenance() const {
        return {"config_hash=" + config_hash, "seeds=" + std::to_string(seed), "architecture=" + architecture};
    }
};

inline CsvTable trace_table(const TrainedModel& tm, const RunContext& ctx) {
    CsvTable t({"epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy"});
    t.comments = ctx.provenance();
    t.comments.push_back("stop_reason=" + tm.stop_reason + " converged=" + (tm.converged ? "1" : "0") +
                         " final_test_accuracy=" + format_number(tm.final_test_accuracy));
    for (const auto& r : tm.trace) t.add(r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy);
    return t;
}

inline std::vector<ClusterSet> cluster_layers(const GridActivations& acts, const ClusterOptions& opt) {
    std::vector<ClusterSet> out;
    for (const auto& layer : acts.layers) out.push_back(cluster_neurons(layer, acts.modulus, opt));
    return out;
}

inline CsvTable pca_table(const std::vector<ClusterSet>& layers, const RunContext& ctx) {
    CsvTable t({"layer", "frequency", "size", "remap_factor", "evr1", "evr2", "evr3", "evr4", "top2", "top4", "rank_deficient"});
    t.comments = ctx.provenance();
    for (const auto& cs : layers) {
        t.comments.push_back("layer " + std::to_string(cs.layer_index) + ": " + std::to_string(cs.clusters.size()) + " clusters, " +
                             std::to_string(cs.unclustered.size()) + " unclustered neurons");
        for (const auto& c : cs.clusters) {
            if (c.members.size() < 2) {
                t.add(cs.layer_index, c.frequency, c.members.size(), c.remap_factor, "nan", "nan", "nan", "nan", "nan", "nan", true);
                continue;
            }
            const PcaResult p = pca_cluster(c.matrix, std::min<std::size_t>(4, c.members.size()));
            auto evr = [&](std::size_t i) { return i < p.explained_variance_ratios.size() ? p.explained_variance_ratios[i] : 0.0; };
            t.add(cs.layer_index, c.frequency, c.members.size(), c.remap_factor, evr(0), evr(1), evr(2), evr(3), p.cumulative(2),
                  p.cumulative(4), p.rank_deficient);
        }
    }
    return t;
}

inline CsvTable phase_table(const GridActivations& acts, const std::vector<ClusterSet>& layers, const RunContext& ctx) {
    CsvTable t({"layer", "neuron", "frequency", "estimator", "a", "b"});
    t.comments = ctx.provenance();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const NeuronPhases ph = collect_phase_samples(acts.layers[l], layers[l], acts.modulus, ctx.seed);
        t.comments.push_back("layer " + std::to_string(l + 1) + ": " + std::to_string(ph.degenerate) +
                             " neurons without a center of mass");
        std::vector<int> freq_of(acts.layers[l].preactivations.cols(), 0);
        for (const auto& c : layers[l].clusters) {
            for (std::size_t m : c.members) freq_of[m] = c.frequency;
        }
        for (const auto* set : {&ph.max_activation, &ph.center_of_mass}) {
            for (const PhaseSample& s : *set) {
                t.add(s.layer, s.neuron, freq_of[s.neuron], to_string(s.estimator), s.a, s.b);
            }
        }
    }
    return t;
}

inline std::vector<PhaseSample> phase_samples_from(const CsvTable& t, std::uint64_t seed, PhaseEstimator estimator, std::size_t layer = 1) {
    std::vector<PhaseSample> out;
    const std::size_t cl = t.column("layer"), cn = t.column("neuron"), ce = t.column("estimator"), ca = t.column("a"), cb = t.column("b");
    for (const auto& r : t.rows) {
        if (std::stoul(r[cl]) != layer || r[ce] != to_string(estimator)) continue;
        out.push_back({seed, layer, std::stoul(r[cn]), std::stod(r[ca]), std::stod(r[cb]), estimator});
    }
    return out;
}

inline CsvTable metrics_table(Model& model, const GridActivations& acts, const RunContext& ctx, std::size_t jobs) {
    CsvTable t({"metric", "mean", "std", "count", "skipped"});
    t.comments = ctx.provenance();
    const MetricSummary sg = gradient_symmetricity(model, jobs);
    t.add(sg.metric, sg.mean, sg.std, sg.count, sg.skipped);
    try {
        const MetricSummary q = distance_irrelevance(acts.logits, acts.modulus);
        t.add(q.metric, q.mean, q.std, q.count, q.skipped);
    } catch (const DegenerateLogits&) {
        t.add("distance_irrelevance", "nan", "nan", 0, 1);
    }
    return t;
}

struct TdaTables {
    CsvTable betti;
    CsvTable diagrams;
};

// Contribution of one last-layer cluster to the logits: post[:, members] * W_out[members, :].
inline Tensor cluster_logits(const GridActivations& acts, const NeuronCluster& c) {
    const Tensor& post = acts.layers.at(c.layer_index - 1).postactivations;
    const Tensor& w = acts.unembedding;
    Tensor out = Tensor::matrix(post.rows(), w.cols());
    for (std::size_t r = 0; r < post.rows(); ++r) {
        for (std::size_t j : c.members) {
            const double h = post(r, j);
            if (h == 0.0) continue;
            for (std::size_t k = 0; k < w.cols(); ++k) out(r, k) += h * w(j, k);
        }
    }
    return out;
}

// One cloud per cluster (rows of its preactivation matrix) plus the logits.
inline TdaTables tda_tables(const GridActivations& acts, const std::vector<ClusterSet>& layers, const RunContext& ctx,
                            const TdaSettings& s) {
    TdaTables out{CsvTable({"layer", "frequency", "points", "landmarks", "b0", "b1", "b2", "scale", "max_radius", "shape"}),
                  CsvTable({"layer", "frequency", "dim", "birth", "death"})};
    out.betti.comments = ctx.provenance();
    out.betti.comments.push_back("landmark budget " + std::to_string(s.landmarks) + "; relative threshold " +
                                 format_number(s.rule.relative_threshold) + "; noise floor " + format_number(s.rule.noise_floor));
    out.diagrams.comments = ctx.provenance();
    struct Job {
        std::string layer;
        int frequency;
        const Tensor* matrix;
    };
    std::vector<Job> jobs;
    for (const auto& cs : layers) {
        std::vector<const NeuronCluster*> order;
        for (const auto& c : cs.clusters) order.push_back(&c);
        std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->members.size() > b->members.size(); });
        if (s.max_clusters > 0 && order.size() > s.max_clusters) order.resize(s.max_clusters);
        std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->frequency < b->frequency; });
        for (auto* c : order) jobs.push_back({std::to_string(cs.layer_index), c->frequency, &c->matrix});
    }
    std::vector<Tensor> shares;
    if (s.logits && s.logits_per_cluster && !layers.empty() && acts.unembedding.rows() > 0) {
        const auto& last = layers.back().clusters;
        shares.reserve(last.size());
        for (const auto& c : last) {
            if (s.max_clusters > 0 && std::none_of(jobs.begin(), jobs.end(), [&](const Job& j) {
                    return j.layer == std::to_string(c.layer_index) && j.frequency == c.frequency;
                }))
                continue;
            shares.push_back(cluster_logits(acts, c));
            jobs.push_back({"logits", c.frequency, &shares.back()});
        }
    } else if (s.logits) {
        jobs.push_back({"logits", 0, &acts.logits});
    }

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const Job& j = jobs[i];
        PointCloud cloud = normalize_by_max_norm(cloud_from_rows(*j.matrix));
        cloud = maxmin_landmarks(cloud, s.landmarks, derive_seed(ctx.run_seed, "landmark", i));
        const PersistenceDiagram dgm = rips_persistence(cloud);
        const BettiVector b = betti_from_diagram(dgm, s.rule);
        out.betti.add(j.layer, j.frequency, j.matrix->rows(), cloud.size(), b.b0, b.b1, b.b2, b.scale, dgm.max_radius,
                      to_string(classify(b)));
        for (int k = 0; k <= 2; ++k) {
            for (const auto& p : dgm.dims[k]) out.diagrams.add(j.layer, j.frequency, k, p.birth, p.death);
        }
    }
    return out;
}

// Synthetic rank and factor-fit checks; needs no training.
inline CsvTable theorem_oracle_table(std::size_t clusters_per_mode, std::uint64_t master_seed, int n, const std::vector<std::string>& provenance) {
    CsvTable t({"mode", "trial", "f", "m", "ratio3", "ratio4", "ratio5", "rank", "verdict", "factor_residual"});
    t.comments = provenance;
    for (PhaseMode mode : {PhaseMode::Tied, PhaseMode::Independent}) {
        const bool tied = mode == PhaseMode::Tied;
        for (std::size_t trial = 0; trial < clusters_per_mode; ++trial) {
            Rng rng(master_seed, tied ? "oracle-tied" : "oracle-independent", trial);
            SyntheticClusterSpec spec;
            spec.n = n;
            spec.f = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n / 2)));
            spec.m = 4 + static_cast<std::size_t>(rng.below(29));
            spec.phase_mode = mode;
            const Tensor x = synthetic_cluster(spec, derive_seed(master_seed, "synthetic", trial * 2 + (tied ? 0 : 1)));
            const RankSignature sig = rank_signature(x);
            const Tensor v = tied ? disc_factor(n, spec.f) : torus_factor(n, spec.f);
            t.add(tied ? "tied" : "independent", trial, spec.f, spec.m, sig.ratio(3), sig.ratio(4), sig.ratio(5), sig.numerical_rank,
                  to_string(sig.verdict), factor_fit_residual(x, v));
        }
    }
    return t;
}

}  // namespace modarith
