// Acceptance run: trains (or reuses) the full sweep and checks each criterion,
// printing one PASS/FAIL line per criterion.

#include <cmath>
#include <cstdio>
#include <numbers>

#include "CLI11.hpp"
#include "modarith/modarith.hpp"

using namespace modarith;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
    verdicts.push_back({id, pass, detail});
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
}

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string frac(std::size_t a, std::size_t b) { return std::to_string(a) + "/" + std::to_string(b); }

// 1 and 2: synthetic clusters through the same table the oracle stage writes.
void rank_and_fit(const ExperimentPlan& p) {
    const CsvTable t = theorem_oracle_table(100, p.master_seed, p.modulus, plan_provenance(p));
    std::size_t tied = 0, tied_ok = 0, ind = 0, ind_ok = 0, fit = 0, fit_ok = 0;
    double worst_fit = 0.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const bool is_tied = t.text(r, "mode") == "tied";
        if (is_tied) {
            ++tied;
            tied_ok += t.number(r, "ratio3") < 1e-10;
        } else {
            ++ind;
            ind_ok += t.number(r, "ratio5") < 1e-10 && t.number(r, "ratio4") > 1e-3;
        }
        ++fit;
        fit_ok += t.number(r, "factor_residual") < 1e-10;
        worst_fit = std::max(worst_fit, t.number(r, "factor_residual"));
    }
    report(1, tied_ok == tied && ind_ok == ind && tied == 100 && ind == 100,
           "rank oracle: tied rank 2 in " + frac(tied_ok, tied) + ", independent rank 4 in " + frac(ind_ok, ind));
    report(2, fit_ok == fit, "factor fit residual < 1e-10 in " + frac(fit_ok, fit) + " clusters (worst " + num(worst_fit, 3) + ")");
}

// 3: full-size models, ten parameter probes per architecture.
void gradients(const ExperimentPlan& p) {
    double worst = 0.0;
    std::size_t coords = 0;
    std::vector<int> pairs;
    for (int i = 0; i < 59 * 59; i += 211) pairs.push_back(i);
    for (Architecture a : kAllArchitectures) {
        for (std::uint64_t probe = 0; probe < 10; ++probe) {
            Model m = build_model(p.model(a), derive_seed(p.master_seed, "gradcheck-model", probe));
            const GradCheckResult g = finite_difference_check(m, pairs, probe);
            worst = std::max(worst, g.max_relative_error);
            coords += g.coordinates;
        }
    }
    report(3, worst < 1e-5, "max relative error " + num(worst, 3) + " over " + std::to_string(coords) + " coordinates, 4 architectures x 10 probes");
}

struct RunRow {
    std::string arch;
    std::uint64_t seed;
    bool converged;
    bool perfect;
};

// 4: reads the aggregated training table and per-run timings.
void training(const ExperimentPlan& p, const RunStore& store, const Aggregates& ag) {
    bool ok = true;
    std::string detail;
    double slowest = 0.0;
    for (Architecture a : p.architectures) {
        const std::string arch(to_string(a));
        std::size_t perfect = 0, total = 0;
        for (std::size_t r = 0; r < ag.training.rows.size(); ++r) {
            if (ag.training.text(r, "architecture") != arch) continue;
            ++total;
            perfect += ag.training.number(r, "final_test_accuracy") == 1.0;
        }
        for (std::uint64_t s : p.seeds) {
            const fs::path t = store.run_dir(arch, s) / "timing.txt";
            if (!fs::exists(t)) continue;
            const std::string text = read_file(t);
            slowest = std::max(slowest, std::stod(text.substr(text.find(' ') + 1)));
        }
        const bool arch_ok = total == p.seeds.size() && perfect * 10 >= 9 * p.seeds.size();
        ok = ok && arch_ok;
        detail += arch + " " + frac(perfect, p.seeds.size()) + "; ";
    }
    ok = ok && slowest <= 1800.0;
    report(4, ok, detail + "slowest model " + num(slowest, 4) + " s");
}

// 5: layer-1 clusters with at least four neurons, converged models only.
void pca(const ExperimentPlan& p, const Aggregates& ag) {
    std::set<std::pair<std::string, std::string>> converged;
    for (std::size_t r = 0; r < ag.training.rows.size(); ++r) {
        if (ag.training.text(r, "converged") == "1") converged.emplace(ag.training.text(r, "architecture"), ag.training.text(r, "seed"));
    }
    bool ok = true;
    std::string detail;
    for (Architecture a : p.architectures) {
        const std::string arch(to_string(a));
        std::size_t total = 0, hit = 0;
        for (std::size_t r = 0; r < ag.pca.rows.size(); ++r) {
            if (ag.pca.text(r, "architecture") != arch || ag.pca.text(r, "layer") != "1") continue;
            if (!converged.contains({arch, ag.pca.text(r, "seed")}) || ag.pca.number(r, "size") < 4) continue;
            ++total;
            if (a == Architecture::MlpConcat) {
                bool band = true;
                for (const char* c : {"evr1", "evr2", "evr3", "evr4"}) band = band && ag.pca.number(r, c) >= 0.20 && ag.pca.number(r, c) <= 0.30;
                hit += band;
            } else {
                hit += ag.pca.number(r, "top2") > 0.99;
            }
        }
        ok = ok && total > 0 && 2 * hit > total;
        detail += arch + (a == Architecture::MlpConcat ? " four EVRs in [0.20,0.30] " : " top-2 > 0.99 ") + frac(hit, total) + "; ";
    }
    report(5, ok, detail);
}

double pad_value(const Aggregates& ag, const std::string& arch, const std::string& column) {
    for (std::size_t r = 0; r < ag.pad_summary.rows.size(); ++r) {
        if (ag.pad_summary.text(r, "architecture") == arch && ag.pad_summary.text(r, "estimator") == "max_activation") {
            return ag.pad_summary.number(r, column);
        }
    }
    return std::nan("");
}

// 6: max-activation PADs merged across seeds.
void pad(const Aggregates& ag) {
    const double add = pad_value(ag, "mlp_add", "within_2");
    const double a0 = pad_value(ag, "attention0", "within_5");
    const double a1 = pad_value(ag, "attention1", "within_5");
    const double concat = pad_value(ag, "mlp_concat", "median_distance");
    report(6, add >= 0.9 && a0 >= 0.7 && a1 >= 0.7 && concat > 5,
           "mlp_add within 2: " + num(add) + "; attention0 within 5: " + num(a0) + "; attention1 within 5: " + num(a1) +
               "; mlp_concat median distance: " + num(concat));
}

// 7: pairwise MMD table from the aggregate stage.
void mmd_ordering(const ExperimentPlan& p, const Aggregates& ag) {
    std::map<std::set<std::string>, std::pair<double, double>> m;  // {x, y} -> (mmd, p)
    bool sizes = true;
    for (std::size_t r = 0; r < ag.mmd.rows.size(); ++r) {
        m[{ag.mmd.text(r, "x"), ag.mmd.text(r, "y")}] = {ag.mmd.number(r, "mmd_squared"), ag.mmd.number(r, "p_value")};
        sizes = sizes && ag.mmd.number(r, "points") == 2000 && ag.mmd.number(r, "permutations") == 5000;
    }
    auto get = [&](const char* x, const char* y) {
        const auto it = m.find({x, y});
        return it == m.end() ? std::pair{std::nan(""), std::nan("")} : it->second;
    };
    const auto a01 = get("attention0", "attention1"), a0c = get("attention0", "mlp_concat"), a1c = get("attention1", "mlp_concat"),
               addc = get("mlp_add", "mlp_concat");
    const bool order = a01.first < std::min(a0c.first, a1c.first) && a01.first < addc.first;
    const bool sig = a0c.second < 0.01 && a1c.second < 0.01 && addc.second < 0.01;
    report(7, m.size() == 6 && sizes && order && sig && p.mmd_points == 2000,
           "MMD(attn0,attn1)=" + num(a01.first) + " vs attn0-concat " + num(a0c.first) + ", attn1-concat " + num(a1c.first) +
               ", add-concat " + num(addc.first) + "; p-values vs concat " + num(a0c.second) + ", " + num(a1c.second) + ", " +
               num(addc.second));
}

// 8: per-seed circuit metrics.
void circuit(const ExperimentPlan& p, const Aggregates& ag) {
    std::map<std::string, std::vector<std::pair<double, double>>> by_arch;  // (s_g, q)
    bool counts = true, add_unit = true;
    const double triples = std::pow(static_cast<double>(p.modulus), 3);
    for (std::size_t r = 0; r < ag.metrics.rows.size(); ++r) {
        const std::string arch = ag.metrics.text(r, "architecture");
        const double sg = ag.metrics.number(r, "gradient_symmetricity");
        const double q = ag.metrics.text(r, "distance_irrelevance") == "nan" ? std::nan("") : ag.metrics.number(r, "distance_irrelevance");
        by_arch[arch].emplace_back(sg, q);
        counts = counts && ag.metrics.number(r, "triples") + ag.metrics.number(r, "skipped") == triples;
        if (arch == "mlp_add") add_unit = add_unit && std::abs(sg - 1.0) <= 1e-6;
    }
    const auto& add = by_arch["mlp_add"];
    const auto& concat = by_arch["mlp_concat"];
    bool order = !add.empty() && !concat.empty();
    for (const auto& [sa, qa] : add) {
        for (const auto& [sc, qc] : concat) order = order && sa > sc && qa < qc;
    }
    double min_add = 2, max_concat_sg = -2;
    for (const auto& v : add) min_add = std::min(min_add, v.first);
    for (const auto& v : concat) max_concat_sg = std::max(max_concat_sg, v.first);
    report(8, counts && add_unit && order && add.size() == p.seeds.size() && concat.size() == p.seeds.size(),
           "mlp_add s_g min " + num(min_add, 10) + "; mlp_concat s_g max " + num(max_concat_sg) + "; ordering on all " +
               std::to_string(add.size() * concat.size()) + " seed pairs: " + (order ? "yes" : "no") + "; triples per model " +
               num(triples, 7));
}

// 9: synthetic topology plus the brute-force oracle.
void tda_synthetic(const ExperimentPlan& p) {
    const double pi = std::numbers::pi;
    std::size_t circles = 0, tori = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(p.master_seed, "acceptance-circle", seed);
        PointCloud circle;
        for (int i = 0; i < 250; ++i) {
            const double t = rng.uniform(0.0, 2.0 * pi);
            circle.points.push_back({std::cos(t), std::sin(t)});
        }
        circles += classify(betti_from_diagram(rips_persistence(normalize_by_max_norm(circle)), p.analysis.tda.rule)) == ShapeClass::Circle;

        PointCloud torus;
        for (int a = 0; a < 59; ++a) {
            for (int b = 0; b < 59; ++b) {
                const double x = 2.0 * pi * a / 59, y = 2.0 * pi * b / 59;
                torus.points.push_back({std::cos(x), std::sin(x), std::cos(y), std::sin(y)});
            }
        }
        const PointCloud lm = normalize_by_max_norm(maxmin_landmarks(torus, 250, derive_seed(p.master_seed, "acceptance-torus", seed)));
        tori += classify(betti_from_diagram(rips_persistence(lm), p.analysis.tda.rule)) == ShapeClass::Torus;
    }
    std::size_t agree = 0, checked = 0, clouds = 0;
    for (std::uint64_t c = 0; c < 200; ++c) {
        Rng rng(p.master_seed, "acceptance-small-cloud", c);
        PointCloud cloud;
        const std::size_t count = 3 + rng.below(6), dim = 1 + rng.below(4);
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<double> pt(dim);
            for (double& v : pt) v = rng.uniform();
            cloud.points.push_back(pt);
        }
        ++clouds;
        RipsOptions opt;
        opt.max_radius = std::numeric_limits<double>::infinity();
        const PersistenceDiagram dgm = rips_persistence(cloud, opt);
        const DistanceMatrix dm = distance_matrix(cloud);
        for (double r : dm.d) {
            ++checked;
            agree += brute_force_betti(dm, r) == betti_at(dgm, r);
        }
    }
    report(9, circles >= 19 && tori >= 19 && agree == checked,
           "circle (1,1,0) in " + frac(circles, 20) + ", torus (1,2,1) in " + frac(tori, 20) + ", brute-force agreement " +
               frac(agree, checked) + " radii over " + std::to_string(clouds) + " clouds of 3-8 points");
}

// 10: Betti histograms from the aggregate stage.
void betti_distribution(const Aggregates& ag) {
    auto row_for = [&](const std::string& arch, const std::string& layer) -> std::optional<std::size_t> {
        for (std::size_t r = 0; r < ag.betti.rows.size(); ++r) {
            if (ag.betti.text(r, "architecture") == arch && ag.betti.text(r, "depth") == "1" && ag.betti.text(r, "layer") == layer) return r;
        }
        return std::nullopt;
    };
    auto share = [&](const std::string& arch, const std::string& layer, const char* shape) {
        const auto r = row_for(arch, layer);
        if (!r) return std::pair<double, double>{0, 0};
        return std::pair{ag.betti.number(*r, shape), ag.betti.number(*r, "total")};
    };
    const auto concat = share("mlp_concat", "1", "torus");
    const auto add = share("mlp_add", "1", "disc");
    double circle = 0, logits = 0;
    std::string per_arch;
    for (const char* a : {"mlp_add", "mlp_concat", "attention0", "attention1"}) {
        const auto c = share(a, "logits", "circle");
        circle += c.first;
        logits += c.second;
        per_arch += std::string(" ") + a + " " + num(c.first) + "/" + num(c.second);
    }
    const bool ok = 2 * concat.first > concat.second && 2 * add.first > add.second && 2 * circle > logits;
    report(10, ok, "layer 1: mlp_concat torus " + num(concat.first) + "/" + num(concat.second) + ", mlp_add disc " + num(add.first) + "/" +
                       num(add.second) + "; logits circle " + num(circle) + "/" + num(logits) + " (" + per_arch.substr(1) + ")");
}

// 11: estimator properties on samples drawn from the merged PADs.
void mmd_properties(const ExperimentPlan& p, const Aggregates& ag) {
    const auto it = ag.pads.find("mlp_concat/max_activation");
    if (it == ag.pads.end() || it->second.total_samples == 0) {
        report(11, false, "no mlp_concat PAD to sample from");
        return;
    }
    const PhaseAlignmentDistribution& pad = it->second;
    bool self_ok = true, sym_ok = true;
    double worst_asym = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const PointSet x = sample_pad(pad, 500, derive_seed(p.master_seed, "acceptance-self", s), true);
        const PointSet y = sample_pad(pad, 400, derive_seed(p.master_seed, "acceptance-other", s), true);
        self_ok = self_ok && mmd_unbiased(x, x, median_heuristic_bandwidth(x, x)) <= 0.0;
        const double sigma = median_heuristic_bandwidth(x, y);
        const double d = std::abs(mmd_unbiased(x, y, sigma) - mmd_unbiased(y, x, sigma));
        worst_asym = std::max(worst_asym, d);
        sym_ok = sym_ok && d <= 1e-12;
    }
    std::size_t rejections = 0;
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        const PointSet x = sample_pad(pad, 300, derive_seed(p.master_seed, "acceptance-calibration-x", rep), true);
        const PointSet y = sample_pad(pad, 300, derive_seed(p.master_seed, "acceptance-calibration-y", rep), true);
        PermutationOptions opt;
        opt.permutations = 1000;
        opt.seed = derive_seed(p.master_seed, "acceptance-calibration", rep);
        opt.jobs = p.jobs;
        rejections += mmd_permutation_test(x, y, opt).p_value < 0.05;
    }
    report(11, self_ok && sym_ok && rejections <= 3,
           std::string("self MMD <= 0: ") + (self_ok ? "yes" : "no") + "; max asymmetry " + num(worst_asym, 3) +
               "; false positives at 0.05: " + frac(rejections, 20));
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    }
    return out;
}

// Copies one trained model into a fresh store so its analyses rerun from scratch.
void seed_store(const ExperimentPlan& p, const RunStore& from, RunStore& to, Architecture a, std::uint64_t seed) {
    const std::string arch(to_string(a));
    const fs::path src = from.run_dir(arch, seed), dst = to.run_dir(arch, seed);
    fs::create_directories(dst);
    fs::copy(src / "model", dst / "model", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::copy_file(src / "trace.csv", dst / "trace.csv", fs::copy_options::overwrite_existing);
    to.record({arch, seed, "train"}, train_hash(p, a),
              {to.relative(dst / "model" / "meta.json").generic_string(), to.relative(dst / "model" / "weights.bin").generic_string(),
               to.relative(dst / "trace.csv").generic_string()});
}

// 12: stages rerun with one and two workers against the stored outputs.
void determinism(const ExperimentPlan& p, const RunStore& store, const fs::path& scratch) {
    std::vector<std::string> mismatches;
    std::size_t compared = 0;
    auto compare = [&](const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b, const std::string& what) {
        if (a.empty() || a.size() != b.size()) mismatches.push_back(what + ": file sets differ");
        for (const auto& [name, content] : a) {
            ++compared;
            const auto it = b.find(name);
            if (it == b.end() || it->second != content) mismatches.push_back(what + ": " + name);
        }
    };

    // Training on a reduced model, twice.
    {
        ExperimentPlan small = p;
        small.seeds = {1, 2};
        small.analyses = {Analysis::Pca, Analysis::Pad};
        for (auto& [a, c] : small.models) {
            c.hidden_width = 64;
            c.embedding_dim = 16;
            c.max_epochs = 5;
        }
        std::map<std::string, std::string> first;
        for (std::size_t jobs : {1, 2}) {
            const fs::path dir = scratch / ("train_jobs" + std::to_string(jobs));
            fs::remove_all(dir);
            small.jobs = jobs;
            RunStore s(dir);
            run_cells(small, s, {});
            auto files = csv_files(dir / "runs");
            for (Architecture a : small.architectures) {
                for (std::uint64_t seed : small.seeds) {
                    const fs::path w = s.run_dir(std::string(to_string(a)), seed) / "model" / "weights.bin";
                    files[fs::relative(w, dir).generic_string()] = read_file(w);
                }
            }
            if (jobs == 1) first = files;
            else compare(first, files, "training");
        }
    }

    // Per-model analyses of one full-size seed per architecture.
    const std::uint64_t seed = p.seeds.front();
    ExperimentPlan one = p;
    one.seeds = {seed};
    for (std::size_t jobs : {1, 2}) {
        const fs::path dir = scratch / ("analyze_jobs" + std::to_string(jobs));
        fs::remove_all(dir);
        RunStore s(dir);
        for (Architecture a : p.architectures) seed_store(p, store, s, a, seed);
        one.jobs = jobs;
        run_cells(one, s, {false, true});
        for (Architecture a : p.architectures) {
            const std::string arch(to_string(a));
            compare(csv_files(store.run_dir(arch, seed)), csv_files(s.run_dir(arch, seed)), "analysis jobs=" + std::to_string(jobs) + " " + arch);
        }
    }

    // Aggregation, including the MMD permutation tests, with two workers.
    {
        ExperimentPlan two = p;
        two.jobs = 2;
        const fs::path dir = scratch / "aggregate_jobs2";
        fs::remove_all(dir);
        write_aggregates(aggregate_runs(two, store), dir);
        compare(csv_files(store.root() / "aggregate"), csv_files(dir), "aggregate jobs=2");
    }

    // Oracle stage.
    {
        ExperimentPlan two = p;
        two.jobs = 2;
        compare(csv_files(store.root() / "oracle"),
                {{"theorem.csv", theorem_oracle_table(two.oracle_clusters, two.master_seed, two.modulus, plan_provenance(two)).str()}},
                "oracle");
    }

    std::string detail = std::to_string(compared) + " files compared, " + std::to_string(mismatches.size()) + " differ";
    for (std::size_t i = 0; i < std::min<std::size_t>(mismatches.size(), 5); ++i) detail += "; " + mismatches[i];
    report(12, mismatches.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks for the modular-addition sweep"};
    std::string store_dir = "acceptance_store", config, seeds, only;
    std::size_t jobs = 1;
    bool quiet = false;
    app.add_option("--store", store_dir, "run store shared across invocations");
    app.add_option("--config", config, "plan file");
    app.add_option("--seeds", seeds, "override the plan's seeds");
    app.add_option("--jobs", jobs, "worker threads");
    app.add_option("--only", only, "comma-separated criteria to run");
    app.add_flag("--quiet", quiet, "suppress progress logging");
    CLI11_PARSE(app, argc, argv);
    log_enabled() = !quiet;

    ExperimentPlan p = config.empty() ? default_plan() : load_plan(config);
    if (!seeds.empty()) p.seeds = parse_seeds(seeds);
    p.output_dir = store_dir;
    p.jobs = jobs;
    p.validate();

    std::set<int> wanted;
    for (const auto& s : split_list(only)) wanted.insert(std::stoi(s));
    auto want = [&](int id) { return wanted.empty() || wanted.contains(id); };
    auto guarded = [&](int id, const std::function<void()>& f) {
        if (!want(id)) return;
        try {
            f();
        } catch (const std::exception& e) {
            report(id, false, std::string("error: ") + e.what());
        }
    };

    guarded(1, [&] { rank_and_fit(p); });
    if (want(2) && !want(1)) rank_and_fit(p);
    guarded(3, [&] { gradients(p); });
    guarded(9, [&] { tda_synthetic(p); });

    const std::vector<int> sweep_criteria{4, 5, 6, 7, 8, 10, 11, 12};
    const bool needs_sweep = std::any_of(sweep_criteria.begin(), sweep_criteria.end(), want);
    if (needs_sweep) {
        const RunReport rep = run_experiment(p);
        for (const auto& f : rep.failures) std::printf("sweep failure: %s\n", f.c_str());
        RunStore store(p.output_dir);
        const Aggregates ag = load_aggregates(store.root() / "aggregate");
        guarded(4, [&] { training(p, store, ag); });
        guarded(5, [&] { pca(p, ag); });
        guarded(6, [&] { pad(ag); });
        guarded(7, [&] { mmd_ordering(p, ag); });
        guarded(8, [&] { circuit(p, ag); });
        guarded(10, [&] { betti_distribution(ag); });
        guarded(11, [&] { mmd_properties(p, ag); });
        guarded(12, [&] { determinism(p, store, store.root() / "determinism"); });
    }

    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    std::size_t failed = 0;
    std::printf("\nsummary\n");
    for (const auto& v : verdicts) {
        std::printf("%s %d\n", v.pass ? "PASS" : "FAIL", v.id);
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
