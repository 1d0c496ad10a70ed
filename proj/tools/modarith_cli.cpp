// modarith: train, analyze, aggregate and report modular-addition sweeps.

#include <cstdio>
#include <iostream>
#include <numbers>

#include "CLI11.hpp"
#include "modarith/modarith.hpp"

using namespace modarith;

namespace {

struct Flags {
    std::string config;
    std::string seeds;
    std::string arch;
    std::string out;
    std::size_t jobs = 0;  // 0: keep the config value
    bool quiet = false;
};

ExperimentPlan make_plan(const Flags& f) {
    ExperimentPlan p = f.config.empty() ? default_plan() : load_plan(f.config);
    if (!f.seeds.empty()) p.seeds = parse_seeds(f.seeds);
    if (!f.arch.empty()) p.architectures = parse_architectures(f.arch);
    if (!f.out.empty()) p.output_dir = f.out;
    if (f.jobs > 0) p.jobs = f.jobs;
    p.validate();
    return p;
}

int exit_code(const RunReport& r) {
    std::printf("trained %zu (skipped %zu), analyses %zu (skipped %zu), failures %zu\n", r.trained, r.trained_skipped, r.analyzed,
                r.analyzed_skipped, r.failures.size());
    for (const auto& f : r.failures) std::printf("  failed: %s\n", f.c_str());
    return static_cast<int>(std::min<std::size_t>(r.failures.size(), 100));
}

bool check(bool ok, const std::string& what) {
    std::printf("%s %s\n", ok ? "PASS" : "FAIL", what.c_str());
    return ok;
}

// Synthetic checks that need no trained model.
int run_oracle_checks(const ExperimentPlan& p) {
    RunStore store(p.output_dir);
    RunReport rep;
    run_oracle(p, store, rep);
    const CsvTable t = CsvTable::load(store.root() / "oracle" / "theorem.csv");
    std::size_t tied_ok = 0, tied = 0, ind_ok = 0, ind = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.text(r, "mode") == "tied") {
            ++tied;
            tied_ok += t.number(r, "ratio3") < 1e-10 && t.number(r, "factor_residual") < 1e-10;
        } else {
            ++ind;
            ind_ok += t.number(r, "ratio5") < 1e-10 && t.number(r, "ratio4") > 1e-3 && t.number(r, "factor_residual") < 1e-10;
        }
    }
    bool ok = check(tied_ok == tied, "tied clusters rank 2 and fit the disc factor: " + std::to_string(tied_ok) + "/" + std::to_string(tied));
    ok &= check(ind_ok == ind, "independent clusters rank 4 and fit the torus factor: " + std::to_string(ind_ok) + "/" + std::to_string(ind));

    const double pi = std::numbers::pi;
    Rng rng(p.master_seed, "synthetic", 1000);
    PointCloud circle, torus;
    for (int i = 0; i < 250; ++i) {
        const double a = rng.uniform(0.0, 2.0 * pi);
        circle.points.push_back({std::cos(a), std::sin(a)});
    }
    for (int a = 0; a < p.modulus; ++a) {
        for (int b = 0; b < p.modulus; ++b) {
            const double x = 2.0 * pi * a / p.modulus, y = 2.0 * pi * b / p.modulus;
            torus.points.push_back({std::cos(x), std::sin(x), std::cos(y), std::sin(y)});
        }
    }
    const BettiRule& rule = p.analysis.tda.rule;
    const BettiVector bc = betti_from_diagram(rips_persistence(normalize_by_max_norm(circle)), rule);
    ok &= check(classify(bc) == ShapeClass::Circle, "synthetic circle Betti (" + std::to_string(bc.b0) + "," + std::to_string(bc.b1) + "," +
                                                         std::to_string(bc.b2) + ")");
    const PointCloud lm = maxmin_landmarks(normalize_by_max_norm(torus), p.analysis.tda.landmarks, p.master_seed);
    const BettiVector bt = betti_from_diagram(rips_persistence(lm), rule);
    ok &= check(classify(bt) == ShapeClass::Torus, "synthetic torus Betti (" + std::to_string(bt.b0) + "," + std::to_string(bt.b1) + "," +
                                                        std::to_string(bt.b2) + ")");
    return ok ? 0 : 1;
}

// Fast invariant suite over every module.
int run_selftest() {
    bool ok = true;
    const Dataset d = generate_dataset({59, 0.9, 7});
    ok &= check(d.train.size() + d.test.size() == 59 * 59 && d.train.size() == 3133, "dataset split partitions the grid (3133/348)");

    for (Architecture a : kAllArchitectures) {
        ModelConfig c = ModelConfig::defaults(a);
        c.modulus = 7;
        c.embedding_dim = 6;
        c.hidden_width = 10;
        Model m = build_model(c, 3);
        std::vector<int> pairs;
        for (int i = 0; i < 49; i += 3) pairs.push_back(i);
        const GradCheckResult g = finite_difference_check(m, pairs, 5);
        ok &= check(g.max_relative_error < 1e-5, std::string("finite differences match reverse mode for ") + std::string(to_string(a)));
    }

    PointSet x, y;
    Rng rng(11, "synthetic");
    for (int i = 0; i < 40; ++i) {
        const double px[2] = {rng.normal(), rng.normal()};
        x.push(px);
        y.push(px);
    }
    const double sigma = median_heuristic_bandwidth(x, y);
    ok &= check(mmd_unbiased(x, y, sigma) <= 0.0, "MMD of identical samples is not positive");

    std::size_t agree = 0, total = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng r(static_cast<std::uint64_t>(trial), "synthetic");
        PointCloud c;
        for (int i = 0; i < 6; ++i) c.points.push_back({r.uniform(), r.uniform(), r.uniform()});
        RipsOptions o;
        o.max_radius = std::numeric_limits<double>::infinity();
        const PersistenceDiagram dgm = rips_persistence(c, o);
        const DistanceMatrix dm = distance_matrix(c);
        for (double rad : dm.d) {
            ++total;
            agree += brute_force_betti(dm, rad) == betti_at(dgm, rad);
        }
    }
    ok &= check(agree == total, "persistence matches brute-force boundary ranks on small clouds");

    SyntheticClusterSpec spec;
    spec.f = 5;
    spec.m = 12;
    ok &= check(rank_signature(synthetic_cluster(spec, 1)).numerical_rank == 2, "tied synthetic cluster has rank 2");
    spec.phase_mode = PhaseMode::Independent;
    ok &= check(rank_signature(synthetic_cluster(spec, 1)).numerical_rank == 4, "independent synthetic cluster has rank 4");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train and analyze modular-addition networks"};
    app.require_subcommand(1);
    Flags f;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "plan file (key = value with [architecture] sections)");
        sub->add_option("--seeds", f.seeds, "seed range a..b or list");
        sub->add_option("--arch", f.arch, "comma-separated architectures or 'all'");
        sub->add_option("--out", f.out, "run store directory");
        sub->add_option("--jobs", f.jobs, "worker threads");
        sub->add_flag("--quiet", f.quiet, "suppress progress logging");
    };
    auto* train = app.add_subcommand("train", "train missing models");
    auto* analyze = app.add_subcommand("analyze", "run per-model analyses (and the synthetic oracle if requested)");
    auto* aggregate = app.add_subcommand("aggregate", "merge runs across seeds and run MMD comparisons");
    auto* report = app.add_subcommand("report", "render SVG figures and the index from aggregates");
    auto* run = app.add_subcommand("run", "train, analyze, aggregate and report");
    auto* oracle = app.add_subcommand("oracle", "synthetic rank, factor-fit and topology checks");
    auto* selftest = app.add_subcommand("selftest", "invariant suite");
    for (auto* s : {train, analyze, aggregate, report, run, oracle}) add_common(s);

    CLI11_PARSE(app, argc, argv);
    log_enabled() = !f.quiet;
    try {
        if (*selftest) return run_selftest();
        const ExperimentPlan p = make_plan(f);
        if (*oracle) return run_oracle_checks(p);
        if (*run) return exit_code(run_experiment(p));
        RunStore store(p.output_dir);
        if (*train) return exit_code(run_cells(p, store, {true, false}));
        if (*analyze) {
            RunReport rep = run_cells(p, store, {false, true});
            if (p.wants(Analysis::TheoremOracle)) run_oracle(p, store, rep);
            return exit_code(rep);
        }
        if (*aggregate) {
            const Aggregates ag = aggregate_runs(p, store);
            write_aggregates(ag, store.root() / "aggregate");
            std::printf("aggregated %zu training records; %zu gaps\n", ag.training.rows.size(), ag.gaps.rows.size());
            return 0;
        }
        if (*report) {
            write_report(build_report(p, load_aggregates(store.root() / "aggregate")), store.root() / "report");
            std::printf("report written to %s\n", (store.root() / "report").string().c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
