#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "modarith/rng.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

class SimplexBudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PointCloud {
    std::vector<std::vector<double>> points;
    std::string architecture;
    std::uint64_t seed = 0;
    std::size_t layer = 0;  // 0 marks the logits layer
    int frequency = 0;
    bool landmarked = false;
    bool landmark_budget_exceeds_cloud = false;

    std::size_t size() const { return points.size(); }
    std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }

    void validate() const {
        for (const auto& p : points) {
            if (p.size() != dim()) throw std::invalid_argument("point cloud has mixed dimensions");
            for (double v : p) {
                if (!std::isfinite(v)) throw std::invalid_argument("point cloud contains non-finite coordinates");
            }
        }
    }
};

inline PointCloud cloud_from_rows(const Tensor& m) {
    PointCloud c;
    c.points.reserve(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        c.points.emplace_back(row.begin(), row.end());
    }
    return c;
}

inline double euclidean(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
    return std::sqrt(s);
}

// Divides every point by the largest point norm.
inline PointCloud normalize_by_max_norm(PointCloud c) {
    double mx = 0.0;
    for (const auto& p : c.points) mx = std::max(mx, std::sqrt(std::inner_product(p.begin(), p.end(), p.begin(), 0.0)));
    if (mx > 0.0) {
        for (auto& p : c.points) {
            for (double& v : p) v /= mx;
        }
    }
    return c;
}

// Farthest-point subsample. The first point is drawn with the seeded
// "landmark" stream; ties in the maxmin distance go to the lower index.
inline PointCloud maxmin_landmarks(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
    cloud.validate();
    PointCloud out = cloud;
    out.points.clear();
    if (cloud.size() < k || k == 0) {
        out.points = cloud.points;
        out.landmark_budget_exceeds_cloud = cloud.size() < k;
        return out;
    }
    const std::size_t n = cloud.size();
    Rng rng(seed, "landmark");
    std::size_t current = static_cast<std::size_t>(rng.below(n));
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    for (std::size_t chosen = 0; chosen < k; ++chosen) {
        out.points.push_back(cloud.points[current]);
        taken[current] = true;
        std::size_t next = n;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            dist[i] = std::min(dist[i], euclidean(cloud.points[i], cloud.points[current]));
            if (dist[i] > best) {
                best = dist[i];
                next = i;
            }
        }
        current = next;
    }
    out.landmarked = true;
    return out;
}

struct PersistencePair {
    double birth = 0.0;
    double death = std::numeric_limits<double>::infinity();
    double persistence() const { return death - birth; }
    bool essential() const { return std::isinf(death); }
};

struct PersistenceDiagram {
    std::vector<PersistencePair> dims[3];
    double max_radius = 0.0;
    std::size_t points = 0;

    bool empty() const { return dims[0].empty() && dims[1].empty() && dims[2].empty(); }
};

struct DistanceMatrix {
    std::size_t n = 0;
    std::vector<double> d;
    double operator()(std::size_t i, std::size_t j) const { return d[i * n + j]; }
};

inline DistanceMatrix distance_matrix(const PointCloud& c) {
    DistanceMatrix m;
    m.n = c.size();
    m.d.assign(m.n * m.n, 0.0);
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = i + 1; j < m.n; ++j) m.d[i * m.n + j] = m.d[j * m.n + i] = euclidean(c.points[i], c.points[j]);
    }
    return m;
}

inline double enclosing_radius(const DistanceMatrix& m) {
    double r = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.n; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < m.n; ++j) mx = std::max(mx, m(i, j));
        r = std::min(r, mx);
    }
    return m.n == 0 ? 0.0 : r;
}

struct RipsOptions {
    std::size_t max_dim = 2;
    double max_radius = -1.0;                 // negative: enclosing radius
    std::size_t max_points = 400;
    std::size_t simplex_budget = 40'000'000;  // triangles considered for H2
};

namespace detail {

using SimplexIndex = std::int64_t;

struct Entry {
    double diameter;
    SimplexIndex index;
};

// Top is the smallest diameter, then the largest index: the pivot of a
// coboundary column in the reversed filtration order.
struct PivotOrder {
    bool operator()(const Entry& a, const Entry& b) const {
        return a.diameter > b.diameter || (a.diameter == b.diameter && a.index < b.index);
    }
};

class Binomials {
public:
    Binomials(std::size_t n, std::size_t k) : k_(k + 1), table_((n + 1) * (k + 1), 0) {
        for (std::size_t i = 0; i <= n; ++i) {
            table_[i * k_] = 1;
            for (std::size_t j = 1; j <= std::min(i, k); ++j) {
                table_[i * k_ + j] = table_[(i - 1) * k_ + j - 1] + (j < i ? table_[(i - 1) * k_ + j] : 0);
            }
        }
    }
    SimplexIndex operator()(std::size_t n, std::size_t k) const { return table_[n * k_ + k]; }

private:
    std::size_t k_;
    std::vector<SimplexIndex> table_;
};

class RipsComplex {
public:
    RipsComplex(const DistanceMatrix& dist, double threshold, std::size_t max_dim)
        : dist_(dist), threshold_(threshold), binom_(dist.n, max_dim + 2) {}

    const DistanceMatrix& dist() const { return dist_; }
    double threshold() const { return threshold_; }
    std::size_t n() const { return dist_.n; }
    SimplexIndex binom(std::size_t n, std::size_t k) const { return binom_(n, k); }

    // Largest v in [k - 1, top] with binom(v, k) <= idx.
    std::size_t max_vertex(SimplexIndex idx, std::size_t k, std::size_t top) const {
        std::size_t lo = k - 1, hi = top;
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo + 1) / 2;
            if (binom_(mid, k) <= idx) lo = mid;
            else hi = mid - 1;
        }
        return lo;
    }

    // Vertices in decreasing order.
    void vertices(SimplexIndex idx, std::size_t dim, std::vector<std::size_t>& out) const {
        out.resize(dim + 1);
        std::size_t top = n() - 1;
        for (std::size_t k = dim + 1; k >= 1; --k) {
            const std::size_t v = max_vertex(idx, k, top);
            out[dim + 1 - k] = v;
            idx -= binom_(v, k);
            top = v == 0 ? 0 : v - 1;
        }
    }

    SimplexIndex index_of(std::span<const std::size_t> descending) const {
        SimplexIndex idx = 0;
        const std::size_t k = descending.size();
        for (std::size_t i = 0; i < k; ++i) idx += binom_(descending[i], k - i);
        return idx;
    }

    double diameter(std::span<const std::size_t> v) const {
        double d = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (std::size_t j = i + 1; j < v.size(); ++j) d = std::max(d, dist_(v[i], v[j]));
        }
        return d;
    }

private:
    const DistanceMatrix& dist_;
    double threshold_;
    Binomials binom_;
};

// Enumerates the cofacets of a simplex in decreasing index order.
class CoboundaryEnumerator {
public:
    CoboundaryEnumerator(const RipsComplex& cx, Entry simplex, std::size_t dim, std::vector<std::size_t>& scratch)
        : cx_(cx), simplex_(simplex), idx_below_(simplex.index), idx_above_(0),
          v_(static_cast<std::ptrdiff_t>(cx.n()) - 1), k_(dim + 1), verts_(scratch) {
        cx.vertices(simplex.index, dim, verts_);
    }

    bool has_next() const { return v_ >= static_cast<std::ptrdiff_t>(k_); }

    Entry next() {
        while (cx_.binom(static_cast<std::size_t>(v_), k_) <= idx_below_) {
            idx_below_ -= cx_.binom(static_cast<std::size_t>(v_), k_);
            idx_above_ += cx_.binom(static_cast<std::size_t>(v_), k_ + 1);
            --v_;
            --k_;
        }
        const auto v = static_cast<std::size_t>(v_);
        double d = simplex_.diameter;
        for (std::size_t w : verts_) d = std::max(d, cx_.dist()(v, w));
        const SimplexIndex idx = idx_above_ + cx_.binom(v, k_ + 1) + idx_below_;
        --v_;
        return {d, idx};
    }

private:
    const RipsComplex& cx_;
    Entry simplex_;
    SimplexIndex idx_below_, idx_above_;
    std::ptrdiff_t v_;
    std::size_t k_;
    std::vector<std::size_t>& verts_;
};

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    // The larger root joins the smaller one.
    void link(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a < b) parent_[b] = a;
        else parent_[a] = b;
    }

private:
    std::vector<std::size_t> parent_;
};

using CoboundaryHeap = std::priority_queue<Entry, std::vector<Entry>, PivotOrder>;

inline bool pop_pivot(CoboundaryHeap& heap, Entry& pivot) {
    while (!heap.empty()) {
        pivot = heap.top();
        heap.pop();
        if (!heap.empty() && heap.top().index == pivot.index) {
            heap.pop();  // two copies cancel over Z/2
            continue;
        }
        return true;
    }
    return false;
}

inline bool peek_pivot(CoboundaryHeap& heap, Entry& pivot) {
    if (!pop_pivot(heap, pivot)) return false;
    heap.push(pivot);
    return true;
}

// Cohomology reduction of one dimension with clearing and the emergent-pair
// shortcut. Columns arrive sorted by decreasing diameter. Returns the pivots
// (cofacets paired with a column), which are cleared from the next dimension.
inline std::unordered_map<SimplexIndex, std::size_t> reduce_dimension(const RipsComplex& cx, const std::vector<Entry>& columns,
                                                                       std::size_t dim, std::vector<PersistencePair>& pairs) {
    std::unordered_map<SimplexIndex, std::size_t> pivot_of;
    pivot_of.reserve(columns.size());
    std::vector<std::size_t> reduction_start;
    std::vector<Entry> reduction;
    std::vector<std::size_t> scratch;
    std::vector<Entry> pending;
    std::vector<Entry> working;

    auto push_coboundary = [&](Entry s, CoboundaryHeap& heap) {
        CoboundaryEnumerator it(cx, s, dim, scratch);
        while (it.has_next()) {
            const Entry c = it.next();
            if (c.diameter <= cx.threshold()) heap.push(c);
        }
    };

    for (std::size_t col = 0; col < columns.size(); ++col) {
        const Entry sigma = columns[col];
        CoboundaryHeap heap;
        working.assign(1, sigma);
        Entry pivot{};
        bool have_pivot = false;

        // Scan the coboundary; the first cofacet with the simplex's own
        // diameter is the pivot, and if it is unclaimed the pair is apparent.
        {
            pending.clear();
            bool check_emergent = true;
            CoboundaryEnumerator it(cx, sigma, dim, scratch);
            while (it.has_next()) {
                const Entry c = it.next();
                if (c.diameter > cx.threshold()) continue;
                pending.push_back(c);
                if (check_emergent && c.diameter == sigma.diameter) {
                    if (!pivot_of.contains(c.index)) {
                        pivot = c;
                        have_pivot = true;
                        break;
                    }
                    check_emergent = false;
                }
            }
            if (!have_pivot) {
                for (const Entry& c : pending) heap.push(c);
                have_pivot = peek_pivot(heap, pivot);
            }
        }

        while (true) {
            if (!have_pivot) {
                pairs.push_back({sigma.diameter, std::numeric_limits<double>::infinity()});
                break;
            }
            const auto found = pivot_of.find(pivot.index);
            if (found == pivot_of.end()) {
                if (pivot.diameter > sigma.diameter) pairs.push_back({sigma.diameter, pivot.diameter});
                pivot_of.emplace(pivot.index, reduction_start.size());
                std::sort(working.begin(), working.end(), [](const Entry& a, const Entry& b) { return a.index < b.index; });
                reduction_start.push_back(reduction.size());
                for (std::size_t i = 0; i < working.size();) {
                    std::size_t j = i;
                    while (j < working.size() && working[j].index == working[i].index) ++j;
                    if ((j - i) % 2 == 1) reduction.push_back(working[i]);
                    i = j;
                }
                break;
            }
            const std::size_t other = found->second;
            const std::size_t begin = reduction_start[other];
            const std::size_t end = other + 1 < reduction_start.size() ? reduction_start[other + 1] : reduction.size();
            for (std::size_t e = begin; e < end; ++e) {
                working.push_back(reduction[e]);
                push_coboundary(reduction[e], heap);
            }
            have_pivot = peek_pivot(heap, pivot);
        }
    }
    return pivot_of;
}

}  // namespace detail

// Vietoris-Rips persistence in dimensions 0..max_dim (at most 2) over Z/2.
// Pairs of zero persistence are dropped in dimensions >= 1; H0 keeps one bar
// per point.
inline PersistenceDiagram rips_persistence(const PointCloud& cloud, const RipsOptions& opt = {}) {
    cloud.validate();
    if (opt.max_dim > 2) throw std::invalid_argument("homology above dimension 2 is not supported");
    if (cloud.size() > opt.max_points) {
        throw SimplexBudgetExceeded("cloud has " + std::to_string(cloud.size()) + " points; the limit is " +
                                    std::to_string(opt.max_points) + " (subsample with fewer landmarks)");
    }
    using namespace detail;
    PersistenceDiagram dgm;
    dgm.points = cloud.size();
    if (cloud.size() == 0) return dgm;
    const DistanceMatrix dist = distance_matrix(cloud);
    const double threshold = opt.max_radius < 0.0 ? enclosing_radius(dist) : opt.max_radius;
    dgm.max_radius = threshold;
    const std::size_t n = dist.n;
    RipsComplex cx(dist, threshold, opt.max_dim);

    // H0 by union-find over edges in filtration order.
    std::vector<Entry> edges;
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (dist(i, j) <= threshold) edges.push_back({dist(i, j), cx.binom(i, 2) + cx.binom(j, 1)});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Entry& a, const Entry& b) {
        return a.diameter < b.diameter || (a.diameter == b.diameter && a.index > b.index);
    });
    UnionFind uf(n);
    std::vector<Entry> columns;
    std::vector<std::size_t> verts;
    for (const Entry& e : edges) {
        cx.vertices(e.index, 1, verts);
        if (uf.find(verts[0]) != uf.find(verts[1])) {
            uf.link(verts[0], verts[1]);
            dgm.dims[0].push_back({0.0, e.diameter});
        } else {
            columns.push_back(e);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (uf.find(i) == i) dgm.dims[0].push_back({0.0, std::numeric_limits<double>::infinity()});
    }
    if (opt.max_dim == 0) return dgm;
    std::reverse(columns.begin(), columns.end());

    auto cleared = reduce_dimension(cx, columns, 1, dgm.dims[1]);
    if (opt.max_dim == 1) return dgm;

    columns.clear();
    std::vector<std::size_t> tri(3);
    for (std::size_t i = 2; i < n; ++i) {
        for (std::size_t j = 1; j < i; ++j) {
            const double dij = dist(i, j);
            if (dij > threshold) continue;
            for (std::size_t k = 0; k < j; ++k) {
                const double d = std::max({dij, dist(i, k), dist(j, k)});
                if (d > threshold) continue;
                const SimplexIndex idx = cx.binom(i, 3) + cx.binom(j, 2) + cx.binom(k, 1);
                if (cleared.contains(idx)) continue;
                columns.push_back({d, idx});
                if (columns.size() > opt.simplex_budget) {
                    throw SimplexBudgetExceeded("more than " + std::to_string(opt.simplex_budget) +
                                                " triangles to reduce; use fewer landmarks");
                }
            }
        }
    }
    cleared = {};
    std::sort(columns.begin(), columns.end(), [](const Entry& a, const Entry& b) {
        return a.diameter > b.diameter || (a.diameter == b.diameter && a.index < b.index);
    });
    reduce_dimension(cx, columns, 2, dgm.dims[2]);
    return dgm;
}

struct BettiVector {
    int b0 = 0, b1 = 0, b2 = 0;
    double scale = 0.0;  // persistence cutoff actually applied
    friend bool operator==(const BettiVector& a, const BettiVector& b) { return a.b0 == b.b0 && a.b1 == b.b1 && a.b2 == b.b2; }
};

struct BettiRule {
    double relative_threshold = 0.3;
    // Bars shorter than this fraction of the filtration cap never count, so
    // a cloud with only noise loops does not promote its longest one.
    double noise_floor = 0.25;
};

// A bar counts when its persistence reaches max(relative * longest finite
// bar in dims 1-2, noise_floor * cap). Essential bars count in every
// dimension; beta0 counts H0 bars still alive at the cutoff.
inline BettiVector betti_from_diagram(const PersistenceDiagram& dgm, const BettiRule& rule = {}) {
    if (dgm.empty()) throw std::invalid_argument("empty persistence diagram");
    double longest = 0.0;
    for (int k = 1; k <= 2; ++k) {
        for (const auto& p : dgm.dims[k]) {
            if (!p.essential()) longest = std::max(longest, p.persistence());
        }
    }
    BettiVector b;
    b.scale = std::max(rule.relative_threshold * longest, rule.noise_floor * dgm.max_radius);
    for (const auto& p : dgm.dims[0]) b.b0 += p.death > b.scale ? 1 : 0;
    for (const auto& p : dgm.dims[1]) b.b1 += (p.essential() || p.persistence() >= b.scale) ? 1 : 0;
    for (const auto& p : dgm.dims[2]) b.b2 += (p.essential() || p.persistence() >= b.scale) ? 1 : 0;
    return b;
}

enum class ShapeClass { Disc, Circle, Torus, Other };

inline std::string_view to_string(ShapeClass s) {
    switch (s) {
        case ShapeClass::Disc: return "disc";
        case ShapeClass::Circle: return "circle";
        case ShapeClass::Torus: return "torus";
        case ShapeClass::Other: return "other";
    }
    return "other";
}

inline ShapeClass classify(const BettiVector& b) {
    if (b.b0 == 1 && b.b1 == 0 && b.b2 == 0) return ShapeClass::Disc;
    if (b.b0 == 1 && b.b1 == 1 && b.b2 == 0) return ShapeClass::Circle;
    if (b.b0 == 1 && b.b1 == 2 && b.b2 == 1) return ShapeClass::Torus;
    return ShapeClass::Other;
}

struct BettiHistogram {
    std::size_t counts[4] = {0, 0, 0, 0};
    void add(ShapeClass s) { ++counts[static_cast<int>(s)]; }
    std::size_t total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
    std::size_t count(ShapeClass s) const { return counts[static_cast<int>(s)]; }
    // Strict plurality; Other when tied.
    ShapeClass mode() const {
        int best = 3;
        for (int i = 0; i < 4; ++i) {
            if (counts[i] > counts[best]) best = i;
        }
        for (int i = 0; i < 4; ++i) {
            if (i != best && counts[i] == counts[best]) return ShapeClass::Other;
        }
        return static_cast<ShapeClass>(best);
    }
};

// Brute-force Betti numbers of the Rips complex at radius r from boundary
// ranks over Z/2. Exponential; meant for clouds of a handful of points.
inline std::vector<int> brute_force_betti(const DistanceMatrix& dist, double r, int max_dim = 2) {
    const std::size_t n = dist.n;
    if (n > 12) throw std::invalid_argument("brute-force oracle is limited to 12 points");
    std::vector<std::vector<std::uint32_t>> simplices(static_cast<std::size_t>(max_dim) + 2);
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        const int size = std::popcount(mask);
        if (size > max_dim + 2) continue;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            if (!(mask >> i & 1u)) continue;
            for (std::size_t j = i + 1; j < n && ok; ++j) {
                if ((mask >> j & 1u) && dist(i, j) > r) ok = false;
            }
        }
        if (ok) simplices[static_cast<std::size_t>(size - 1)].push_back(mask);
    }
    // rank of boundary map from dim k to dim k - 1, Gaussian elimination on bitsets
    auto boundary_rank = [&](std::size_t k) -> int {
        if (k == 0 || k >= simplices.size()) return 0;
        const auto& rows_s = simplices[k - 1];
        std::vector<std::vector<std::uint8_t>> m;
        for (std::uint32_t s : simplices[k]) {
            std::vector<std::uint8_t> col(rows_s.size(), 0);
            for (std::size_t i = 0; i < rows_s.size(); ++i) {
                if ((rows_s[i] & s) == rows_s[i]) col[i] = 1;
            }
            m.push_back(std::move(col));
        }
        int rank = 0;
        const std::size_t rows = rows_s.size();
        for (std::size_t r0 = 0; r0 < rows && static_cast<std::size_t>(rank) < m.size(); ++r0) {
            std::size_t piv = static_cast<std::size_t>(rank);
            while (piv < m.size() && !m[piv][r0]) ++piv;
            if (piv == m.size()) continue;
            std::swap(m[piv], m[static_cast<std::size_t>(rank)]);
            for (std::size_t c = 0; c < m.size(); ++c) {
                if (c != static_cast<std::size_t>(rank) && m[c][r0]) {
                    for (std::size_t i = 0; i < rows; ++i) m[c][i] ^= m[static_cast<std::size_t>(rank)][i];
                }
            }
            ++rank;
        }
        return rank;
    };
    std::vector<int> betti(static_cast<std::size_t>(max_dim) + 1);
    for (int k = 0; k <= max_dim; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        betti[ku] = static_cast<int>(simplices[ku].size()) - boundary_rank(ku) - boundary_rank(ku + 1);
    }
    return betti;
}

// Betti numbers implied by a diagram at radius r: bars with birth <= r < death.
inline std::vector<int> betti_at(const PersistenceDiagram& dgm, double r, int max_dim = 2) {
    std::vector<int> b(static_cast<std::size_t>(max_dim) + 1, 0);
    for (int k = 0; k <= max_dim; ++k) {
        for (const auto& p : dgm.dims[k]) b[static_cast<std::size_t>(k)] += (p.birth <= r && r < p.death) ? 1 : 0;
    }
    return b;
}

}  // namespace modarith
