#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modarith/activations.hpp"
#include "modarith/dataset.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

class NoDominantFrequency : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// n x n preactivation map of one neuron, entry (a, b) = response to input (a, b).
struct NeuronHeatmap {
    std::size_t neuron_index = 0;
    std::size_t layer_index = 1;
    Tensor values;

    int modulus() const { return static_cast<int>(values.rows()); }
};

inline NeuronHeatmap heatmap_from_column(const Tensor& grid_matrix, std::size_t column, int n, std::size_t layer = 1) {
    const std::size_t nn = static_cast<std::size_t>(n);
    if (grid_matrix.rows() != nn * nn) throw ShapeError("grid matrix must have n^2 rows");
    NeuronHeatmap h;
    h.neuron_index = column;
    h.layer_index = layer;
    h.values = Tensor::matrix(nn, nn);
    for (std::size_t r = 0; r < nn * nn; ++r) h.values[r] = grid_matrix(r, column);
    return h;
}

// Dense 2D DFT: F(u, v) = sum_{a,b} x(a, b) exp(-2 pi i (u a + v b) / n).
inline std::vector<std::complex<double>> dft2(const Tensor& x) {
    const std::size_t n = x.rows();
    if (x.cols() != n) throw ShapeError("dft2 expects a square matrix");
    std::vector<std::complex<double>> w(n);
    for (std::size_t k = 0; k < n; ++k) w[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    // Rows first, then columns.
    std::vector<std::complex<double>> tmp(n * n), out(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t v = 0; v < n; ++v) {
            std::complex<double> s = 0.0;
            for (std::size_t b = 0; b < n; ++b) s += x(a, b) * w[(v * b) % n];
            tmp[a * n + v] = s;
        }
    }
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            std::complex<double> s = 0.0;
            for (std::size_t a = 0; a < n; ++a) s += tmp[a * n + v] * w[(u * a) % n];
            out[u * n + v] = s;
        }
    }
    return out;
}

struct FrequencyAssignment {
    int frequency = 0;          // folded, in [1, floor(n/2)]
    double energy_fraction = 0; // share of non-DC spectral energy on the axis bins of `frequency`
    double total_energy = 0;    // non-DC spectral energy
};

// Key frequency from the axis bins (f,0), (0,f), (n-f,0), (0,n-f). Only row
// and column sums enter those bins, and Parseval gives the total non-DC
// energy, so no full 2D transform is needed.
inline FrequencyAssignment key_frequency(const NeuronHeatmap& heatmap) {
    const Tensor& x = heatmap.values;
    const std::size_t n = x.rows();
    if (x.cols() != n || n < 3) throw ShapeError("heatmap must be n x n with n >= 3");

    std::vector<double> row_sum(n, 0.0), col_sum(n, 0.0);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            const double v = x(a, b);
            if (!std::isfinite(v)) throw std::invalid_argument("heatmap contains non-finite values");
            row_sum[a] += v;
            col_sum[b] += v;
            sum += v;
            sum_sq += v * v;
        }
    }
    const double nn = static_cast<double>(n * n);
    // sum_{u,v} |F|^2 = n^2 sum x^2, and |F(0,0)|^2 = (sum x)^2.
    const double total = nn * sum_sq - sum * sum;
    const double scale = std::max(1.0, nn * sum_sq);
    if (sum_sq == 0.0 || total <= 1e-12 * scale) {
        throw NoDominantFrequency("neuron " + std::to_string(heatmap.neuron_index) + " has no non-constant spectral content");
    }

    auto bin_energy = [n](const std::vector<double>& s, std::size_t k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            acc += s[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n));
        }
        return std::norm(acc);
    };

    FrequencyAssignment best;
    double best_energy = -1.0;
    for (std::size_t f = 1; f <= n / 2; ++f) {
        double e = bin_energy(row_sum, f) + bin_energy(col_sum, f);
        if (2 * f != n) e *= 2.0;  // conjugate bins carry equal energy for real input
        if (e > best_energy * (1.0 + 1e-12)) {
            best_energy = e;
            best.frequency = static_cast<int>(f);
        }
    }
    best.total_energy = total;
    best.energy_fraction = best_energy / total;
    return best;
}

inline int fold_frequency(int f, int n) {
    f = ((f % n) + n) % n;
    return std::min(f, n - f);
}

// Modular inverse of x modulo m via the extended Euclidean algorithm.
inline long long mod_inverse(long long x, long long m) {
    long long r0 = m, r1 = ((x % m) + m) % m, t0 = 0, t1 = 1;
    while (r1 != 0) {
        const long long q = r0 / r1;
        r0 = std::exchange(r1, r0 - q * r1);
        t0 = std::exchange(t1, t0 - q * t1);
    }
    if (r0 != 1) throw std::invalid_argument(std::to_string(x) + " has no inverse modulo " + std::to_string(m));
    return ((t0 % m) + m) % m;
}

// d = (f/g)^-1 mod (n/g) with g = gcd(f, n).
inline int remap_factor(int f, int n) {
    if (f < 1 || f >= n) throw std::invalid_argument("frequency must lie in [1, n-1]");
    const int g = std::gcd(f, n);
    const int m = n / g;
    if (m == 1) return 0;
    return static_cast<int>(mod_inverse(f / g, m));
}

// Row (a, b) of the result is row (a*d mod n, b*d mod n) of the input, which
// turns a frequency-f neuron into a frequency-1 neuron when d = f^-1.
inline Tensor remap_grid(const Tensor& grid_matrix, int d, int n) {
    const std::size_t nn = static_cast<std::size_t>(n);
    if (grid_matrix.rows() != nn * nn) throw ShapeError("remap_grid expects n^2 rows");
    const std::size_t cols = grid_matrix.cols();
    Tensor out = Tensor::matrix(grid_matrix.rows(), cols);
    const long long dd = ((static_cast<long long>(d) % n) + n) % n;
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            const auto src = grid_row(static_cast<int>((a * dd) % n), static_cast<int>((b * dd) % n), n);
            const auto from = grid_matrix.row(src);
            std::copy(from.begin(), from.end(), out.row(grid_row(a, b, n)).begin());
        }
    }
    return out;
}

inline Tensor remap_heatmap(const Tensor& heatmap, int d) {
    const int n = static_cast<int>(heatmap.rows());
    Tensor flat(Shape{heatmap.size(), 1}, heatmap.storage());
    Tensor r = remap_grid(flat, d, n);
    return Tensor(Shape{heatmap.rows(), heatmap.cols()}, std::move(r.storage()));
}

struct NeuronCluster {
    int frequency = 0;
    std::size_t layer_index = 1;
    std::vector<std::size_t> members;
    Tensor matrix;  // n^2 x members.size(), column i = flattened heatmap of members[i]
    int remap_factor = 1;
};

struct ClusterSet {
    std::size_t layer_index = 1;
    std::vector<NeuronCluster> clusters;  // ascending frequency
    std::vector<std::size_t> unclustered;
    std::vector<FrequencyAssignment> assignments;  // per neuron; frequency 0 when unassigned
};

struct ClusterOptions {
    double min_energy_fraction = 0.5;
    double energy_floor = 1e-9;  // axis energy relative to total below which a neuron is unclustered
};

inline ClusterSet cluster_neurons(const Tensor& preactivations, int n, std::size_t layer_index = 1, const ClusterOptions& opt = {}) {
    const std::size_t width = preactivations.cols();
    ClusterSet out;
    out.layer_index = layer_index;
    out.assignments.resize(width);
    std::vector<std::vector<std::size_t>> by_freq(static_cast<std::size_t>(n / 2 + 1));
    for (std::size_t j = 0; j < width; ++j) {
        const NeuronHeatmap h = heatmap_from_column(preactivations, j, n, layer_index);
        try {
            const FrequencyAssignment fa = key_frequency(h);
            out.assignments[j] = fa;
            if (fa.energy_fraction < opt.energy_floor || fa.energy_fraction < opt.min_energy_fraction) {
                out.unclustered.push_back(j);
            } else {
                by_freq[static_cast<std::size_t>(fa.frequency)].push_back(j);
            }
        } catch (const NoDominantFrequency&) {
            out.unclustered.push_back(j);
        }
    }
    for (std::size_t f = 1; f < by_freq.size(); ++f) {
        if (by_freq[f].empty()) continue;
        NeuronCluster c;
        c.frequency = static_cast<int>(f);
        c.layer_index = layer_index;
        c.members = by_freq[f];
        c.remap_factor = remap_factor(c.frequency, n);
        c.matrix = Tensor::matrix(preactivations.rows(), c.members.size());
        for (std::size_t r = 0; r < preactivations.rows(); ++r) {
            for (std::size_t i = 0; i < c.members.size(); ++i) c.matrix(r, i) = preactivations(r, c.members[i]);
        }
        out.clusters.push_back(std::move(c));
    }
    return out;
}

inline ClusterSet cluster_neurons(const ActivationDump& dump, int n, const ClusterOptions& opt = {}) {
    return cluster_neurons(dump.preactivations, n, dump.layer_index, opt);
}

}  // namespace modarith
