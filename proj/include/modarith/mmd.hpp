#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modarith/parallel.hpp"
#include "modarith/phase_stats.hpp"
#include "modarith/rng.hpp"

namespace modarith {

class DegenerateBandwidth : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Points stored row-major, `dim` coordinates each.
struct PointSet {
    std::size_t dim = 0;
    std::vector<double> coords;
    std::string label;

    std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
    std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }
    void push(std::span<const double> p) {
        if (dim == 0) dim = p.size();
        if (p.size() != dim) throw std::invalid_argument("point dimension mismatch");
        coords.insert(coords.end(), p.begin(), p.end());
    }
};

inline double squared_distance(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        s += d * d;
    }
    return s;
}

inline void check_pair(const PointSet& x, const PointSet& y) {
    if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("MMD needs at least two points per sample");
    if (x.dim != y.dim) throw std::invalid_argument("MMD samples have different dimensions");
}

// Lower median of all pooled pairwise distances, self-distances excluded.
inline double median_heuristic_bandwidth(const PointSet& x, const PointSet& y) {
    if (x.dim != y.dim && x.size() > 0 && y.size() > 0) throw std::invalid_argument("samples have different dimensions");
    PointSet pooled = x;
    pooled.dim = std::max(x.dim, y.dim);
    pooled.coords.insert(pooled.coords.end(), y.coords.begin(), y.coords.end());
    const std::size_t n = pooled.size();
    if (n < 2) throw DegenerateBandwidth("need at least two pooled points");
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) d.push_back(squared_distance(pooled.point(i), pooled.point(j)));
    }
    const std::size_t k = (d.size() - 1) / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    const double sigma = std::sqrt(d[k]);
    if (!(sigma > 0.0)) throw DegenerateBandwidth("median pairwise distance is zero; bandwidth undefined");
    return sigma;
}

inline double gaussian_kernel(double sq_dist, double sigma) { return std::exp(-sq_dist / (2.0 * sigma * sigma)); }

// Unbiased estimate: within-sample terms exclude the diagonal.
inline double mmd_unbiased(const PointSet& x, const PointSet& y, double sigma) {
    check_pair(x, y);
    if (!(sigma > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    auto within = [sigma](const PointSet& s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (std::size_t j = i + 1; j < s.size(); ++j) acc += gaussian_kernel(squared_distance(s.point(i), s.point(j)), sigma);
        }
        const double m = static_cast<double>(s.size());
        return 2.0 * acc / (m * (m - 1.0));
    };
    double cross = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) cross += gaussian_kernel(squared_distance(x.point(i), y.point(j)), sigma);
    }
    return within(x) + within(y) - 2.0 * cross / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

struct TwoSampleResult {
    double mmd_squared = 0.0;
    double p_value = 1.0;
    double sigma = 0.0;
    std::size_t permutations = 0;
    std::size_t m = 0, n = 0;
    std::string warning;  // non-empty when the permutation count is too low
};

struct PermutationOptions {
    std::size_t permutations = 5000;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t batch = 256;      // labelings per kernel pass
    std::size_t row_block = 512;  // kernel rows held at once
};

namespace detail {

// For each column z of Z (1 marks the first sample) returns z' K0 z, where K0
// is the pooled kernel matrix with a zero diagonal. K0 is built row-block by
// row-block, so memory stays O(row_block * N).
inline Eigen::VectorXd quadratic_forms(const PointSet& pooled, double sigma, const Eigen::MatrixXd& Z, std::size_t row_block,
                                       Eigen::VectorXd* row_sums) {
    const auto N = static_cast<Eigen::Index>(pooled.size());
    Eigen::VectorXd quad = Eigen::VectorXd::Zero(Z.cols());
    if (row_sums) row_sums->setZero(N);
    Eigen::MatrixXd Kb;
    for (Eigen::Index r0 = 0; r0 < N; r0 += static_cast<Eigen::Index>(row_block)) {
        const Eigen::Index rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(row_block), N - r0);
        Kb.resize(rows, N);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto pi = pooled.point(static_cast<std::size_t>(r0 + i));
            for (Eigen::Index j = 0; j < N; ++j) {
                Kb(i, j) = (r0 + i == j) ? 0.0 : gaussian_kernel(squared_distance(pi, pooled.point(static_cast<std::size_t>(j))), sigma);
            }
        }
        if (row_sums) row_sums->segment(r0, rows) = Kb.rowwise().sum();
        const Eigen::MatrixXd W = Kb * Z;
        quad += (Z.middleRows(r0, rows).cwiseProduct(W)).colwise().sum().transpose();
    }
    return quad;
}

}  // namespace detail

// Permutation test on the unbiased MMD^2. Labeling 0 is the observed split;
// labeling k >= 1 shuffles the pooled indices with its own seeded stream, so
// the p-value does not depend on the job count. p = (1 + #{>= observed}) / (1 + P).
inline TwoSampleResult mmd_permutation_test(const PointSet& x, const PointSet& y, const PermutationOptions& opt) {
    check_pair(x, y);
    TwoSampleResult out;
    out.m = x.size();
    out.n = y.size();
    out.permutations = opt.permutations;
    out.sigma = median_heuristic_bandwidth(x, y);
    if (opt.permutations < 100) out.warning = "fewer than 100 permutations; p-value resolution is coarse";

    PointSet pooled = x;
    pooled.coords.insert(pooled.coords.end(), y.coords.begin(), y.coords.end());
    const std::size_t N = pooled.size();
    const double m = static_cast<double>(out.m), n = static_cast<double>(out.n);

    const std::size_t labelings = opt.permutations + 1;
    const std::size_t batch = std::max<std::size_t>(1, opt.batch);
    const std::size_t batches = (labelings + batch - 1) / batch;

    // Total off-diagonal kernel mass and row sums come from the first pass.
    Eigen::VectorXd row_sums;
    std::vector<double> stat(labelings);

    auto labeling = [&](std::size_t k, Eigen::Ref<Eigen::VectorXd> z) {
        z.setZero();
        if (k == 0) {
            z.head(static_cast<Eigen::Index>(out.m)).setOnes();
            return;
        }
        std::vector<std::size_t> idx(N);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(derive_seed(opt.seed, "permutation", k));
        rng.shuffle(idx);
        for (std::size_t i = 0; i < out.m; ++i) z(static_cast<Eigen::Index>(idx[i])) = 1.0;
    };

    auto run_batch = [&](std::size_t bi, Eigen::VectorXd* sums) {
        const std::size_t k0 = bi * batch;
        const std::size_t cols = std::min(batch, labelings - k0);
        Eigen::MatrixXd Z(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(cols));
        for (std::size_t c = 0; c < cols; ++c) labeling(k0 + c, Z.col(static_cast<Eigen::Index>(c)));
        const Eigen::VectorXd quad = detail::quadratic_forms(pooled, out.sigma, Z, opt.row_block, sums);
        return std::make_pair(Z, quad);
    };

    auto [Z0, q0] = run_batch(0, &row_sums);
    const double total = row_sums.sum();
    auto finish = [&](std::size_t k0, const Eigen::MatrixXd& Z, const Eigen::VectorXd& quad) {
        const Eigen::VectorXd cz = Z.transpose() * row_sums;
        for (Eigen::Index c = 0; c < Z.cols(); ++c) {
            const double sxx = quad(c);
            const double sxy = cz(c) - sxx;
            const double syy = total - 2.0 * cz(c) + sxx;
            stat[k0 + static_cast<std::size_t>(c)] = sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n);
        }
    };
    finish(0, Z0, q0);
    parallel_for(batches - 1, opt.jobs, [&](std::size_t i) {
        const std::size_t bi = i + 1;
        auto [Z, quad] = run_batch(bi, nullptr);
        finish(bi * batch, Z, quad);
    });

    out.mmd_squared = stat[0];
    std::size_t at_least = 0;
    for (std::size_t k = 1; k < labelings; ++k) at_least += stat[k] >= stat[0] ? 1 : 0;
    out.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + opt.permutations);
    return out;
}

// Draws `count` points from a PAD with probability proportional to its
// counts. Jitter adds uniform noise in [-0.5, 0.5) per coordinate to break
// ties between identical grid cells.
inline PointSet sample_pad(const PhaseAlignmentDistribution& pad, std::size_t count, std::uint64_t seed, bool jitter) {
    if (pad.total_samples == 0) throw std::invalid_argument("cannot sample an empty PAD");
    std::vector<double> cdf(pad.counts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < cdf.size(); ++i) {
        acc += static_cast<double>(pad.counts[i]);
        cdf[i] = acc;
    }
    Rng rng(derive_seed(seed, "synthetic", 0));
    Rng noise(derive_seed(seed, "jitter", 0));
    PointSet out;
    out.dim = 2;
    out.label = pad.architecture;
    out.coords.reserve(2 * count);
    for (std::size_t s = 0; s < count; ++s) {
        const double u = rng.uniform() * acc;
        const auto cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const std::size_t c = std::min(cell, cdf.size() - 1);
        double a = static_cast<double>(c / static_cast<std::size_t>(pad.n));
        double b = static_cast<double>(c % static_cast<std::size_t>(pad.n));
        if (jitter) {
            a += noise.uniform() - 0.5;
            b += noise.uniform() - 0.5;
        }
        out.coords.push_back(a);
        out.coords.push_back(b);
    }
    return out;
}

}  // namespace modarith
