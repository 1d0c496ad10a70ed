#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modarith/model.hpp"
#include "modarith/parallel.hpp"
#include "modarith/tensor.hpp"

namespace modarith {

class DegenerateLogits : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricSummary {
    std::string metric;
    double mean = 0.0;
    double std = 0.0;          // population spread of the averaged terms
    std::uint64_t count = 0;   // terms averaged
    std::uint64_t skipped = 0; // terms dropped as undefined
};

// Running mean/variance that merges partial results in a fixed order.
struct RunningStats {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    void merge(const RunningStats& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        const double total = static_cast<double>(n + o.n);
        const double d = o.mean - mean;
        mean += d * static_cast<double>(o.n) / total;
        m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / total;
        n += o.n;
    }

    double population_std() const { return n == 0 ? 0.0 : std::sqrt(m2 / static_cast<double>(n)); }
};

inline double cosine_similarity(std::span<const double> u, std::span<const double> v, bool& zero_norm) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    zero_norm = nu == 0.0 || nv == 0.0;
    return zero_norm ? 0.0 : dot / std::sqrt(nu * nv);
}

// Mean over all (a, b, c) of cos(d logit_c / d E_a, d logit_c / d E_b), the
// gradients taken at the two gathered embedding rows. Triples where either
// gradient is exactly zero are skipped and counted.
inline MetricSummary gradient_symmetricity(Model& model, std::size_t jobs = 1, std::size_t pairs_per_chunk = 59) {
    const int n = model.config().modulus;
    const std::size_t pairs = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    const std::size_t chunks = (pairs + pairs_per_chunk - 1) / pairs_per_chunk;
    std::vector<RunningStats> partial(chunks);
    std::vector<std::uint64_t> skipped(chunks, 0);
    jobs = std::min(resolve_jobs(jobs), chunks);
    std::vector<std::unique_ptr<ModelGraph>> graphs;
    for (std::size_t t = 0; t < jobs; ++t) graphs.push_back(wire_model(model));

    parallel_for_workers(chunks, jobs, [&](std::size_t chunk, std::size_t worker) {
        ModelGraph& mg = *graphs[worker];
        const std::size_t p0 = chunk * pairs_per_chunk;
        const std::size_t p1 = std::min(pairs, p0 + pairs_per_chunk);
        const std::size_t rows = (p1 - p0) * static_cast<std::size_t>(n);
        std::vector<int> a(rows), b(rows), y(rows);
        Tensor seed = Tensor::matrix(rows, static_cast<std::size_t>(n), 0.0);
        for (std::size_t p = p0; p < p1; ++p) {
            for (int c = 0; c < n; ++c) {
                const std::size_t r = (p - p0) * static_cast<std::size_t>(n) + static_cast<std::size_t>(c);
                a[r] = static_cast<int>(p) / n;
                b[r] = static_cast<int>(p) % n;
                y[r] = c;
                seed(r, static_cast<std::size_t>(c)) = 1.0;
            }
        }
        mg.bind_inputs(std::move(a), std::move(b), std::move(y));
        mg.graph.forward(mg.logits);
        mg.graph.backward(mg.logits, seed, false);
        const Tensor& ga = mg.graph.grad(mg.embed_left);
        const Tensor& gb = mg.graph.grad(mg.embed_right);
        for (std::size_t r = 0; r < rows; ++r) {
            bool zero = false;
            const double cs = cosine_similarity(ga.row(r), gb.row(r), zero);
            if (zero) {
                ++skipped[chunk];
            } else {
                partial[chunk].add(cs);
            }
        }
    });

    RunningStats total;
    std::uint64_t skip = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        total.merge(partial[c]);
        skip += skipped[c];
    }
    MetricSummary s;
    s.metric = "gradient_symmetricity";
    s.mean = total.mean;
    s.std = total.population_std();
    s.count = total.n;
    s.skipped = skip;
    return s;
}

// L(i, j) = logits[(i, j) row, (i + j) mod n]. For each offset d the set
// {L(i, i + d)} holds inputs with a fixed difference; its spread over the
// global spread is q_d. Reports the mean and spread of q_d over d.
inline MetricSummary distance_irrelevance(const Tensor& logits, int n) {
    if (logits.rows() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n) || logits.cols() != static_cast<std::size_t>(n)) {
        throw ShapeError("logits must be n^2 x n");
    }
    auto L = [&](int i, int j) {
        return logits(static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j),
                      static_cast<std::size_t>((i + j) % n));
    };
    RunningStats all;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) all.add(L(i, j));
    }
    const double global = all.population_std();
    if (!(global >= 1e-12)) throw DegenerateLogits("correct-class logits are constant; distance irrelevance is undefined");
    RunningStats q;
    for (int d = 0; d < n; ++d) {
        RunningStats s;
        for (int i = 0; i < n; ++i) s.add(L(i, (i + d) % n));
        q.add(s.population_std() / global);
    }
    MetricSummary out;
    out.metric = "distance_irrelevance";
    out.mean = q.mean;
    out.std = q.population_std();
    out.count = q.n;
    return out;
}

}  // namespace modarith
