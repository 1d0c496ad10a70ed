#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modarith/freq_cluster.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

class DegeneratePhasor : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PhaseEstimator { MaxActivation, CenterOfMass };

inline std::string_view to_string(PhaseEstimator e) {
    return e == PhaseEstimator::MaxActivation ? "max_activation" : "center_of_mass";
}

struct GridPoint {
    int a = 0;
    int b = 0;
    friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct PhaseSample {
    std::uint64_t seed = 0;
    std::size_t layer = 1;
    std::size_t neuron = 0;
    double a = 0.0;  // integer-valued for MaxActivation
    double b = 0.0;
    PhaseEstimator estimator = PhaseEstimator::MaxActivation;
};

// Argmax over the heatmap, optionally after remapping (a, b) -> (a d, b d).
// Values within a relative 1e-12 of the maximum count as ties and the
// lexicographically smallest (a, b) wins.
inline GridPoint max_activation_location(const Tensor& heatmap, std::optional<int> remap = std::nullopt) {
    const Tensor h = remap ? remap_heatmap(heatmap, *remap) : heatmap;
    const std::size_t n = h.rows();
    double best = -std::numeric_limits<double>::infinity();
    for (double v : h.values()) {
        if (!std::isfinite(v)) throw std::invalid_argument("heatmap contains non-finite values");
        best = std::max(best, v);
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(best));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (h(a, b) >= best - tol) return {static_cast<int>(a), static_cast<int>(b)};
        }
    }
    return {};
}

struct CenterOfMass {
    double a = 0.0;
    double b = 0.0;
};

// Circular center of mass with weights |x|. Row index i maps to the angle
// 2 pi (f^-1 i mod n) / n, likewise for columns; the mean angle is mapped back
// to [0, n).
inline CenterOfMass circular_center_of_mass(const Tensor& heatmap, int f, int n) {
    if (heatmap.rows() != static_cast<std::size_t>(n) || heatmap.cols() != static_cast<std::size_t>(n)) {
        throw ShapeError("heatmap must be n x n");
    }
    const long long finv = static_cast<long long>(mod_inverse(f, n));
    std::vector<std::complex<double>> phasor(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        phasor[static_cast<std::size_t>(i)] = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>((finv * i) % n) / n);
    }
    std::complex<double> sa = 0.0, sb = 0.0;
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double w = std::abs(heatmap(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
            sa += w * phasor[static_cast<std::size_t>(i)];
            sb += w * phasor[static_cast<std::size_t>(j)];
            mass += w;
        }
    }
    const double floor = 1e-12 * std::max(1.0, mass);
    if (std::abs(sa) < floor || std::abs(sb) < floor) {
        throw DegeneratePhasor("phasor sum vanishes; the weights have no circular mean");
    }
    auto to_grid = [n](std::complex<double> s) {
        double mu = std::arg(s);
        if (mu < 0.0) mu += 2.0 * std::numbers::pi;
        double c = static_cast<double>(n) * mu / (2.0 * std::numbers::pi);
        return c >= static_cast<double>(n) ? c - static_cast<double>(n) : c;
    };
    return {to_grid(sa), to_grid(sb)};
}

// Circular |a - b|: the 4-neighbour torus-grid distance from (a, b) to the
// diagonal a = b.
inline int torus_distance(int a, int b, int n) {
    const int d = ((a - b) % n + n) % n;
    return std::min(d, n - d);
}

inline int round_to_grid(double x, int n) {
    const long long r = std::llround(x);
    return static_cast<int>(((r % n) + n) % n);
}

struct PhaseAlignmentDistribution {
    int n = 0;
    std::vector<std::uint64_t> counts;  // row-major n x n
    std::uint64_t total_samples = 0;
    PhaseEstimator estimator = PhaseEstimator::MaxActivation;
    std::string architecture;

    std::uint64_t count(int a, int b) const { return counts[static_cast<std::size_t>(a) * static_cast<std::size_t>(n) + static_cast<std::size_t>(b)]; }

    double log_density(int a, int b) const { return std::log1p(static_cast<double>(count(a, b))); }

    // Counts per torus distance 0..floor(n/2).
    std::vector<std::uint64_t> distance_histogram() const {
        std::vector<std::uint64_t> h(static_cast<std::size_t>(n / 2 + 1), 0);
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) h[static_cast<std::size_t>(torus_distance(a, b, n))] += count(a, b);
        }
        return h;
    }

    double fraction_within(int distance) const {
        if (total_samples == 0) return 0.0;
        const auto h = distance_histogram();
        std::uint64_t s = 0;
        for (int d = 0; d <= std::min(distance, n / 2); ++d) s += h[static_cast<std::size_t>(d)];
        return static_cast<double>(s) / static_cast<double>(total_samples);
    }

    // Lower median of the torus distance over all samples.
    int median_distance() const {
        if (total_samples == 0) throw std::logic_error("empty PAD has no median");
        const auto h = distance_histogram();
        const std::uint64_t target = (total_samples + 1) / 2;
        std::uint64_t s = 0;
        for (std::size_t d = 0; d < h.size(); ++d) {
            s += h[d];
            if (s >= target) return static_cast<int>(d);
        }
        return static_cast<int>(h.size()) - 1;
    }

    void merge(const PhaseAlignmentDistribution& other) {
        if (other.n != n || other.estimator != estimator) throw std::invalid_argument("cannot merge PADs of different kinds");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        total_samples += other.total_samples;
    }
};

inline PhaseAlignmentDistribution empty_pad(int n, PhaseEstimator estimator, std::string architecture = {}) {
    PhaseAlignmentDistribution pad;
    pad.n = n;
    pad.counts.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
    pad.estimator = estimator;
    pad.architecture = std::move(architecture);
    return pad;
}

// Center-of-mass locations are rounded to the nearest grid cell mod n.
inline PhaseAlignmentDistribution build_pad(std::span<const PhaseSample> samples, int n, std::string architecture = {}) {
    if (samples.empty()) throw std::invalid_argument("build_pad: no samples");
    PhaseAlignmentDistribution pad = empty_pad(n, samples.front().estimator, std::move(architecture));
    for (const PhaseSample& s : samples) {
        if (s.estimator != pad.estimator) throw std::invalid_argument("build_pad: samples mix estimators");
        if (s.a < 0.0 || s.b < 0.0 || s.a >= n || s.b >= n) throw std::out_of_range("build_pad: sample location outside the grid");
        const int a = round_to_grid(s.a, n), b = round_to_grid(s.b, n);
        ++pad.counts[static_cast<std::size_t>(a) * static_cast<std::size_t>(n) + static_cast<std::size_t>(b)];
        ++pad.total_samples;
    }
    return pad;
}

struct NeuronPhases {
    std::vector<PhaseSample> max_activation;
    std::vector<PhaseSample> center_of_mass;
    std::size_t degenerate = 0;  // neurons skipped by the center-of-mass estimator
};

// Phase samples for every clustered neuron in canonical (frequency-1)
// coordinates: each heatmap is remapped with its cluster's factor first. The
// max estimator uses preactivations; the center of mass uses post-ReLU mass.
inline NeuronPhases collect_phase_samples(const ActivationDump& dump, const ClusterSet& clusters, int n, std::uint64_t seed) {
    NeuronPhases out;
    for (const NeuronCluster& c : clusters.clusters) {
        for (std::size_t neuron : c.members) {
            const NeuronHeatmap pre = heatmap_from_column(dump.preactivations, neuron, n, dump.layer_index);
            const Tensor canonical = remap_heatmap(pre.values, c.remap_factor);
            const GridPoint p = max_activation_location(canonical);
            out.max_activation.push_back({seed, dump.layer_index, neuron, static_cast<double>(p.a), static_cast<double>(p.b),
                                          PhaseEstimator::MaxActivation});
            Tensor post = canonical;
            for (double& v : post.values()) v = std::max(v, 0.0);
            try {
                const CenterOfMass com = circular_center_of_mass(post, 1, n);
                out.center_of_mass.push_back({seed, dump.layer_index, neuron, com.a, com.b, PhaseEstimator::CenterOfMass});
            } catch (const DegeneratePhasor&) {
                ++out.degenerate;
            }
        }
    }
    return out;
}

}  // namespace modarith
