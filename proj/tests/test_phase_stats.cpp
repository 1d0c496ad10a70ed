#include <algorithm>
#include <cmath>
#include <numbers>

#include "catch_amalgamated.hpp"
#include "modarith/activations.hpp"
#include "modarith/phase_stats.hpp"
#include "modarith/rng.hpp"

using namespace modarith;
using Catch::Matchers::WithinAbs;

namespace {

constexpr int N = 59;
const double kTwoPi = 2.0 * std::numbers::pi;

Tensor simple(int f, double phi_l, double phi_r, int n = N) {
    Tensor h = Tensor::matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) h(a, b) = std::cos(kTwoPi * f * a / n + phi_l) + std::cos(kTwoPi * f * b / n + phi_r);
    return h;
}

double circular_gap(double x, double y, int n) {
    const double d = std::fmod(std::abs(x - y), n);
    return std::min(d, n - d);
}

}  // namespace

TEST_CASE("max activation finds a single peak") {
    Tensor h = Tensor::matrix(N, N, -1.0);
    h(10, 10) = 5.0;
    CHECK(max_activation_location(h) == GridPoint{10, 10});
}

TEST_CASE("zero phase simple neuron peaks at the origin") {
    CHECK(max_activation_location(simple(1, 0.0, 0.0)) == GridPoint{0, 0});
}

TEST_CASE("opposite phases displace the peak by half the modulus") {
    const Tensor h = simple(1, 0.0, std::numbers::pi);
    // Brute-force oracle over the grid.
    double best = -1e300;
    GridPoint expected;
    for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
            const double v = std::cos(kTwoPi * a / N) + std::cos(kTwoPi * b / N + std::numbers::pi);
            if (v > best + 1e-12) {
                best = v;
                expected = {a, b};
            }
        }
    const GridPoint p = max_activation_location(h);
    CHECK(p == expected);
    CHECK(torus_distance(p.a, p.b, N) == N / 2);
}

TEST_CASE("ties resolve to the lexicographically smallest cell") {
    Tensor h = Tensor::matrix(N, N, 0.0);
    h(40, 3) = 1.0;
    h(12, 50) = 1.0;
    h(12, 51) = 1.0;
    CHECK(max_activation_location(h) == GridPoint{12, 50});
}

TEST_CASE("remapping before the argmax") {
    // Frequency 2 neuron with zero phase: the remap by d = 30 sends it to frequency 1.
    const Tensor h = simple(2, 0.6, 0.6);
    const GridPoint p = max_activation_location(h, remap_factor(2, N));
    CHECK(p == max_activation_location(simple(1, 0.6, 0.6)));
}

TEST_CASE("tied phases put the remapped peak on the diagonal") {
    Rng rng(31);
    for (int i = 0; i < 60; ++i) {
        const int f = 1 + static_cast<int>(rng.below(29));
        const double phi = rng.uniform(0, kTwoPi);
        const GridPoint p = max_activation_location(simple(f, phi, phi), remap_factor(f, N));
        CHECK(p.a == p.b);
    }
}

TEST_CASE("center of mass of a point mass is the point") {
    for (auto [i, j] : {std::pair{0, 0}, {13, 41}, {58, 2}}) {
        Tensor h = Tensor::matrix(N, N, 0.0);
        h(i, j) = 3.0;
        const CenterOfMass c = circular_center_of_mass(h, 1, N);
        CHECK(circular_gap(c.a, i, N) < 1e-9);
        CHECK(circular_gap(c.b, j, N) < 1e-9);
    }
}

TEST_CASE("center of mass bisects two rows") {
    Tensor h = Tensor::matrix(N, N, 0.0);
    for (int b = 0; b < N; ++b) {
        h(0, b) = 1.0;
        h(2, b) = 1.0;
    }
    h(0, 7) = 0.0;  // keeps the column phasor nondegenerate
    h(2, 7) = 0.0;
    h(0, 9) = 4.0;
    h(2, 9) = 4.0;
    CHECK_THAT(circular_center_of_mass(h, 1, N).a, WithinAbs(1.0, 1e-9));
}

TEST_CASE("uniform mass has no circular mean") {
    CHECK_THROWS_AS(circular_center_of_mass(Tensor::matrix(N, N, 1.0), 1, N), DegeneratePhasor);
    CHECK_THROWS_AS(circular_center_of_mass(Tensor::matrix(N, N, 0.0), 1, N), DegeneratePhasor);
}

TEST_CASE("center of mass uses the inverse frequency for angles") {
    Tensor h = Tensor::matrix(N, N, 0.0);
    h(10, 20) = 1.0;
    const int f = 3, finv = static_cast<int>(mod_inverse(3, N));
    const CenterOfMass c = circular_center_of_mass(h, f, N);
    CHECK(circular_gap(c.a, (finv * 10) % N, N) < 1e-9);
    CHECK(circular_gap(c.b, (finv * 20) % N, N) < 1e-9);
}

TEST_CASE("center of mass follows cyclic shifts") {
    Rng rng(17);
    Tensor h = Tensor::matrix(N, N);
    for (double& v : h.values()) v = std::pow(rng.uniform(), 4.0);
    for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) h(a, b) += 3.0 * std::max(0.0, std::cos(kTwoPi * (a - 5) / N) + std::cos(kTwoPi * (b - 50) / N));
    const CenterOfMass base = circular_center_of_mass(h, 1, N);
    for (auto [sa, sb] : {std::pair{1, 0}, {17, 33}, {58, 58}}) {
        Tensor s = Tensor::matrix(N, N);
        for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) s((a + sa) % N, (b + sb) % N) = h(a, b);
        const CenterOfMass c = circular_center_of_mass(s, 1, N);
        CHECK(circular_gap(c.a, base.a + sa, N) < 1e-9);
        CHECK(circular_gap(c.b, base.b + sb, N) < 1e-9);
    }
}

TEST_CASE("torus distance examples") {
    CHECK(torus_distance(3, 5, 59) == 2);
    CHECK(torus_distance(58, 1, 59) == 2);
    for (int k = 0; k < 59; ++k) CHECK(torus_distance(k, k, 59) == 0);
}

TEST_CASE("torus distance equals graph distance to the diagonal") {
    // Breadth-first search on the 4-neighbour torus grid from every diagonal cell.
    for (int n : {7, 10, 59}) {
        std::vector<int> dist(static_cast<std::size_t>(n * n), -1);
        std::vector<int> queue;
        for (int k = 0; k < n; ++k) {
            dist[static_cast<std::size_t>(k * n + k)] = 0;
            queue.push_back(k * n + k);
        }
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const int a = queue[q] / n, b = queue[q] % n;
            for (auto [da, db] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                const int c = ((a + da + n) % n) * n + (b + db + n) % n;
                if (dist[static_cast<std::size_t>(c)] < 0) {
                    dist[static_cast<std::size_t>(c)] = dist[static_cast<std::size_t>(queue[q])] + 1;
                    queue.push_back(c);
                }
            }
        }
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                REQUIRE(torus_distance(a, b, n) == dist[static_cast<std::size_t>(a * n + b)]);
                REQUIRE(torus_distance(a, b, n) == torus_distance(b, a, n));
                REQUIRE(torus_distance(a, b, n) == torus_distance((a + 5) % n, (b + 5) % n, n));
                REQUIRE((torus_distance(a, b, n) == 0) == (a == b));
            }
    }
}

TEST_CASE("PAD accumulates counts") {
    std::vector<PhaseSample> s(10);
    const auto pad = build_pad(s, N, "mlp_add");
    CHECK(pad.count(0, 0) == 10);
    CHECK(pad.total_samples == 10);
    std::uint64_t rest = 0;
    for (std::uint64_t c : pad.counts) rest += c;
    CHECK(rest == 10);
    CHECK_THAT(pad.log_density(0, 0), WithinAbs(std::log(11.0), 1e-15));
    CHECK(pad.log_density(3, 4) == 0.0);
}

TEST_CASE("PAD rejects bad input") {
    CHECK_THROWS(build_pad(std::vector<PhaseSample>{}, N));
    std::vector<PhaseSample> mixed(2);
    mixed[1].estimator = PhaseEstimator::CenterOfMass;
    CHECK_THROWS(build_pad(mixed, N));
    std::vector<PhaseSample> outside(1);
    outside[0].a = 59.0;
    CHECK_THROWS(build_pad(outside, N));
}

TEST_CASE("center of mass samples round to the nearest cell mod n") {
    std::vector<PhaseSample> s(3);
    for (auto& x : s) x.estimator = PhaseEstimator::CenterOfMass;
    s[0].a = 3.4;
    s[0].b = 3.6;
    s[1].a = 58.7;
    s[1].b = 0.2;
    s[2].a = 10.5;  // half rounds away from zero
    s[2].b = 10.49;
    const auto pad = build_pad(s, N);
    CHECK(pad.count(3, 4) == 1);
    CHECK(pad.count(0, 0) == 1);
    CHECK(pad.count(11, 10) == 1);
    CHECK(pad.estimator == PhaseEstimator::CenterOfMass);
}

TEST_CASE("PAD distance summaries match a direct count") {
    Rng rng(44);
    std::vector<PhaseSample> s(501);
    std::vector<int> d;
    for (auto& x : s) {
        x.a = static_cast<double>(rng.below(N));
        x.b = std::fmod(x.a + static_cast<double>(rng.below(12)), N);
        d.push_back(torus_distance(static_cast<int>(x.a), static_cast<int>(x.b), N));
    }
    const auto pad = build_pad(s, N);
    std::sort(d.begin(), d.end());
    CHECK(pad.median_distance() == d[250]);
    for (int k : {0, 2, 5, 29}) {
        const double direct = static_cast<double>(std::count_if(d.begin(), d.end(), [k](int v) { return v <= k; })) / 501.0;
        CHECK(pad.fraction_within(k) == direct);
    }
    const auto hist = pad.distance_histogram();
    CHECK(hist.size() == 30);
}

TEST_CASE("merging PADs adds counts") {
    Rng rng(5);
    std::vector<PhaseSample> x(40), y(25);
    for (auto* v : {&x, &y})
        for (auto& p : *v) {
            p.a = static_cast<double>(rng.below(N));
            p.b = static_cast<double>(rng.below(N));
        }
    auto merged = build_pad(x, N);
    merged.merge(build_pad(y, N));
    std::vector<PhaseSample> both = x;
    both.insert(both.end(), y.begin(), y.end());
    const auto direct = build_pad(both, N);
    CHECK(merged.counts == direct.counts);
    CHECK(merged.total_samples == 65);
    CHECK_THROWS(merged.merge(empty_pad(N, PhaseEstimator::CenterOfMass)));
}

TEST_CASE("phase samples from a synthetic layer") {
    Rng rng(9);
    ActivationDump dump;
    dump.preactivations = Tensor::matrix(N * N, 12);
    std::vector<double> phases;
    for (std::size_t j = 0; j < 12; ++j) {
        const int f = j < 6 ? 4 : 11;
        const double phi = rng.uniform(0, kTwoPi);
        phases.push_back(phi);
        const Tensor h = simple(f, phi, phi);
        for (std::size_t r = 0; r < h.size(); ++r) dump.preactivations(r, j) = h[r];
    }
    dump.postactivations = dump.preactivations;
    const ClusterSet cs = cluster_neurons(dump, N);
    const NeuronPhases ph = collect_phase_samples(dump, cs, N, 77);
    REQUIRE(ph.max_activation.size() == 12);
    REQUIRE(ph.center_of_mass.size() == 12);
    CHECK(ph.degenerate == 0);
    for (std::size_t i = 0; i < 12; ++i) {
        const auto& m = ph.max_activation[i];
        CHECK(m.seed == 77);
        CHECK(m.a == m.b);
        // The canonical neuron is cos(2 pi a / n + phi) + ..., which peaks at a = -phi n / (2 pi).
        const double peak = std::fmod(-phases[m.neuron] * N / kTwoPi + 2 * N, N);
        CHECK(circular_gap(m.a, peak, N) <= 0.5 + 1e-9);
        const auto& c = ph.center_of_mass[i];
        CHECK(circular_gap(c.a, peak, N) < 1e-6);
        CHECK(circular_gap(c.a, c.b, N) < 1e-9);
    }
}
