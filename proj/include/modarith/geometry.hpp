#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "modarith/rng.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class PhaseMode { Tied, Independent, Custom };

struct PhasePair {
    double left = 0.0;
    double right = 0.0;
};

// Cluster of m simple neurons cos(theta_a + phi_L) + cos(theta_b + phi_R),
// theta_t = 2 pi f t / n.
struct SyntheticClusterSpec {
    int n = 59;
    int f = 1;
    std::size_t m = 8;
    PhaseMode phase_mode = PhaseMode::Tied;
    std::vector<PhasePair> custom_phases;  // used when phase_mode == Custom
    double noise_std = 0.0;
};

inline double grid_angle(int t, int f, int n) {
    const long long k = (static_cast<long long>(t) * f) % n;
    return 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
}

inline Tensor synthetic_cluster(const SyntheticClusterSpec& spec, std::uint64_t seed) {
    if (spec.n < 3) throw PreconditionError("synthetic cluster needs n >= 3");
    std::vector<PhasePair> phases;
    Rng rng(seed, "synthetic");
    const double two_pi = 2.0 * std::numbers::pi;
    switch (spec.phase_mode) {
        case PhaseMode::Tied:
        case PhaseMode::Independent:
            if (spec.m < 2) throw PreconditionError("synthetic cluster needs at least two neurons");
            for (std::size_t i = 0; i < spec.m; ++i) {
                PhasePair p;
                p.left = rng.uniform(0.0, two_pi);
                p.right = spec.phase_mode == PhaseMode::Tied ? p.left : rng.uniform(0.0, two_pi);
                phases.push_back(p);
            }
            break;
        case PhaseMode::Custom:
            phases = spec.custom_phases;
            if (phases.size() < 2) throw PreconditionError("synthetic cluster needs at least two neurons");
            break;
    }
    const std::size_t n = static_cast<std::size_t>(spec.n);
    Tensor x = Tensor::matrix(n * n, phases.size());
    for (int a = 0; a < spec.n; ++a) {
        const double ta = grid_angle(a, spec.f, spec.n);
        for (int b = 0; b < spec.n; ++b) {
            const double tb = grid_angle(b, spec.f, spec.n);
            auto row = x.row(static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b));
            for (std::size_t i = 0; i < phases.size(); ++i) {
                row[i] = std::cos(ta + phases[i].left) + std::cos(tb + phases[i].right);
                if (spec.noise_std > 0.0) row[i] += spec.noise_std * rng.normal();
            }
        }
    }
    return x;
}

// Rows (cos ta + cos tb, sin ta + sin tb).
inline Tensor disc_factor(int n, int f = 1) {
    const std::size_t nn = static_cast<std::size_t>(n);
    Tensor v = Tensor::matrix(nn * nn, 2);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            const double ta = grid_angle(a, f, n), tb = grid_angle(b, f, n);
            auto row = v.row(static_cast<std::size_t>(a) * nn + static_cast<std::size_t>(b));
            row[0] = std::cos(ta) + std::cos(tb);
            row[1] = std::sin(ta) + std::sin(tb);
        }
    }
    return v;
}

// Rows (cos ta, sin ta, cos tb, sin tb).
inline Tensor torus_factor(int n, int f = 1) {
    const std::size_t nn = static_cast<std::size_t>(n);
    Tensor v = Tensor::matrix(nn * nn, 4);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            const double ta = grid_angle(a, f, n), tb = grid_angle(b, f, n);
            auto row = v.row(static_cast<std::size_t>(a) * nn + static_cast<std::size_t>(b));
            row[0] = std::cos(ta);
            row[1] = std::sin(ta);
            row[2] = std::cos(tb);
            row[3] = std::sin(tb);
        }
    }
    return v;
}

// ||X - V W*|| / ||X|| with W* the least-squares solution of V W = X.
inline double factor_fit_residual(const Tensor& x, const Tensor& v) {
    if (x.rows() != v.rows()) throw ShapeError("factor_fit_residual: row mismatch");
    const Eigen::MatrixXd vm = v.mat();
    const Eigen::MatrixXd xm = x.mat();
    const Eigen::MatrixXd w = vm.colPivHouseholderQr().solve(xm);
    const double denom = xm.norm();
    if (denom == 0.0) throw std::invalid_argument("factor_fit_residual: zero matrix");
    return (xm - vm * w).norm() / denom;
}

inline std::vector<double> singular_values(const Tensor& m) {
    const Eigen::MatrixXd a = m.mat();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

enum class ManifoldVerdict { Disc, Torus, Indeterminate };

inline std::string_view to_string(ManifoldVerdict v) {
    switch (v) {
        case ManifoldVerdict::Disc: return "disc";
        case ManifoldVerdict::Torus: return "torus";
        case ManifoldVerdict::Indeterminate: return "indeterminate";
    }
    return "?";
}

struct RankSignature {
    std::vector<double> singular_values;  // descending
    std::size_t numerical_rank = 0;
    double tolerance = 0.0;
    ManifoldVerdict verdict = ManifoldVerdict::Indeterminate;

    double ratio(std::size_t k) const {  // sigma_k / sigma_1, 1-based
        if (k == 0 || k > singular_values.size() || singular_values.front() == 0.0) return 0.0;
        return singular_values[k - 1] / singular_values.front();
    }
};

inline ManifoldVerdict verdict_for_rank(std::size_t rank) {
    if (rank == 2) return ManifoldVerdict::Disc;
    if (rank == 4) return ManifoldVerdict::Torus;
    return ManifoldVerdict::Indeterminate;
}

// Numerical rank = #{ sigma_i / sigma_1 >= tolerance }.
inline RankSignature rank_signature(const Tensor& m, double tolerance = 1e-8) {
    RankSignature sig;
    sig.tolerance = tolerance;
    sig.singular_values = singular_values(m);
    if (sig.singular_values.empty() || sig.singular_values.front() == 0.0) {
        throw std::invalid_argument("rank_signature of a zero matrix");
    }
    for (double s : sig.singular_values) {
        if (s / sig.singular_values.front() >= tolerance) ++sig.numerical_rank;
    }
    sig.verdict = verdict_for_rank(sig.numerical_rank);
    return sig;
}

struct PcaResult {
    std::vector<double> explained_variance_ratios;  // descending, length = min(rows, cols)
    Tensor projections;                             // rows x r
    std::size_t component_count = 0;
    bool rank_deficient = false;  // r exceeded the numerical rank; trailing ratios are zero

    double cumulative(std::size_t k) const {
        double s = 0.0;
        for (std::size_t i = 0; i < std::min(k, explained_variance_ratios.size()); ++i) s += explained_variance_ratios[i];
        return s;
    }
};

// PCA of the rows of a cluster matrix after removing column means.
inline PcaResult pca_cluster(const Tensor& cluster, std::size_t r) {
    if (cluster.cols() < std::max<std::size_t>(r, 2)) {
        throw PreconditionError("pca_cluster needs at least max(r, 2) columns");
    }
    Eigen::MatrixXd x = cluster.mat();
    x.rowwise() -= x.colwise().mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
    const Eigen::VectorXd s = svd.singularValues();
    const double total = s.squaredNorm();
    if (total == 0.0) throw std::invalid_argument("pca_cluster: cluster has no variance");

    PcaResult out;
    out.component_count = r;
    for (Eigen::Index i = 0; i < s.size(); ++i) out.explained_variance_ratios.push_back(s[i] * s[i] / total);
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > 1e-10 * s[0]) ++rank;
    }
    if (r > rank) {
        out.rank_deficient = true;
        for (std::size_t i = rank; i < out.explained_variance_ratios.size(); ++i) out.explained_variance_ratios[i] = 0.0;
    }
    while (out.explained_variance_ratios.size() < r) out.explained_variance_ratios.push_back(0.0);
    out.projections = Tensor::matrix(cluster.rows(), r);
    const Eigen::MatrixXd& u = svd.matrixU();
    for (std::size_t i = 0; i < cluster.rows(); ++i) {
        for (std::size_t k = 0; k < r && static_cast<Eigen::Index>(k) < s.size(); ++k) {
            out.projections(i, k) = u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * s[static_cast<Eigen::Index>(k)];
        }
    }
    return out;
}

// Verdict for noisy clusters: whichever of 2 or 4 leading components first
// reaches the cumulative explained-variance threshold.
inline ManifoldVerdict elbow_verdict(const PcaResult& pca, double energy = 0.95) {
    if (pca.cumulative(2) >= energy) return ManifoldVerdict::Disc;
    if (pca.cumulative(4) >= energy) return ManifoldVerdict::Torus;
    return ManifoldVerdict::Indeterminate;
}

inline std::pair<double, double> torus_to_circle(double x1, double x2, double x3, double x4) {
    return {x1 * x3 - x2 * x4, x1 * x4 + x2 * x3};
}

inline std::pair<double, double> disc_projection(double x1, double x2, double x3, double x4) {
    return {x1 + x3, x2 + x4};
}

}  // namespace modarith
