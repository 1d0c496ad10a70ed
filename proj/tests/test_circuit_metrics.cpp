#include <cmath>
#include <functional>
#include <tuple>

#include "catch_amalgamated.hpp"
#include "modarith/activations.hpp"
#include "modarith/circuit_metrics.hpp"
#include "modarith/model.hpp"
#include "modarith/rng.hpp"

using namespace modarith;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig small(Architecture arch, int n) {
    ModelConfig c = ModelConfig::defaults(arch);
    c.modulus = n;
    c.embedding_dim = 8;
    c.hidden_width = 24;
    return c;
}

Tensor logits_from(int n, const std::function<double(int, int)>& correct) {
    Rng rng(1);
    Tensor t = Tensor::matrix(static_cast<std::size_t>(n * n), static_cast<std::size_t>(n));
    for (double& v : t.values()) v = rng.normal();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) t(static_cast<std::size_t>(i * n + j), static_cast<std::size_t>((i + j) % n)) = correct(i, j);
    return t;
}

// d logit_c / d E_a and d E_b by central differences on the embedding table.
std::pair<std::vector<double>, std::vector<double>> fd_embedding_grads(Model& m, int a, int b, int c) {
    const int n = m.config().modulus;
    Tensor& e = m.param("embedding");
    auto logit = [&](int row, std::size_t k, double delta) {
        const double keep = e(static_cast<std::size_t>(row), k);
        e(static_cast<std::size_t>(row), k) = keep + delta;
        auto mg = wire_model(m);
        mg->bind_pairs(std::vector<int>{a * n + b});
        const double v = mg->graph.forward(mg->logits)(0, static_cast<std::size_t>(c));
        e(static_cast<std::size_t>(row), k) = keep;
        return v;
    };
    std::vector<double> ga, gb;
    const double h = 1e-6;
    for (std::size_t k = 0; k < e.cols(); ++k) {
        ga.push_back((logit(a, k, h) - logit(a, k, -h)) / (2 * h));
        gb.push_back((logit(b, k, h) - logit(b, k, -h)) / (2 * h));
    }
    return {ga, gb};
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    double d = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return d / std::sqrt(nu * nv);
}

}  // namespace

TEST_CASE("summed embeddings are perfectly gradient symmetric") {
    Model m = build_model(small(Architecture::MlpAdd, 11), 3);
    const MetricSummary s = gradient_symmetricity(m);
    CHECK(s.count + s.skipped == 11u * 11u * 11u);
    CHECK_THAT(s.mean, WithinAbs(1.0, 1e-9));
    CHECK(s.std < 1e-7);
}

TEST_CASE("triple count is n cubed") {
    Model m = build_model(small(Architecture::MlpConcat, 59), 3);
    const MetricSummary s = gradient_symmetricity(m, 1, 59 * 7);
    CHECK(s.count + s.skipped == 205379u);
    CHECK(s.mean >= -1.0);
    CHECK(s.mean <= 1.0);
}

namespace {

double reverse_cosine(ModelGraph& mg, int n, int a, int b, int c) {
    mg.bind_pairs(std::vector<int>{a * n + b});
    mg.graph.forward(mg.logits);
    Tensor seed = Tensor::matrix(1, static_cast<std::size_t>(n), 0.0);
    seed(0, static_cast<std::size_t>(c)) = 1.0;
    mg.graph.backward(mg.logits, seed);
    bool z = false;
    return cosine_similarity(mg.graph.grad(mg.embed_left).row(0), mg.graph.grad(mg.embed_right).row(0), z);
}

}  // namespace

TEST_CASE("per-triple gradients match finite differences") {
    // With a != b, perturbing table row a moves E_a alone.
    for (Architecture arch : kAllArchitectures) {
        const int n = 5;
        Model m = build_model(small(arch, n), 4);
        auto mg = wire_model(m);
        for (auto [a, b, c] : {std::tuple{0, 1, 2}, {3, 1, 0}, {4, 2, 4}, {1, 4, 3}}) {
            auto [ga, gb] = fd_embedding_grads(m, a, b, c);
            CHECK_THAT(reverse_cosine(*mg, n, a, b, c), WithinAbs(cosine(ga, gb), 1e-6));
        }
    }
}

TEST_CASE("batched metric equals the mean of single-triple cosines") {
    const int n = 7;
    Model m = build_model(small(Architecture::Attention1, n), 9);
    auto mg = wire_model(m);
    double sum = 0.0;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c) sum += reverse_cosine(*mg, n, a, b, c);
    const MetricSummary s = gradient_symmetricity(m, 2, 5);
    CHECK(s.count == 343);
    CHECK_THAT(s.mean, WithinAbs(sum / 343.0, 1e-12));
}

TEST_CASE("a random subsample of triples agrees with the exhaustive mean") {
    Model m = build_model(small(Architecture::MlpConcat, 13), 6);
    const MetricSummary full = gradient_symmetricity(m);
    auto mg = wire_model(m);
    Rng rng(12);
    RunningStats sub;
    for (int t = 0; t < 100; ++t) {
        const int a = static_cast<int>(rng.below(13)), b = static_cast<int>(rng.below(13)), c = static_cast<int>(rng.below(13));
        sub.add(reverse_cosine(*mg, 13, a, b, c));
    }
    // Within four standard errors.
    CHECK(std::abs(sub.mean - full.mean) < 4.0 * full.std / 10.0);
}

TEST_CASE("gradient symmetricity is independent of job count and chunking") {
    Model m = build_model(small(Architecture::Attention0, 11), 2);
    const MetricSummary a = gradient_symmetricity(m, 1, 11);
    const MetricSummary b = gradient_symmetricity(m, 3, 11);
    CHECK(a.mean == b.mean);
    CHECK(a.std == b.std);
    const MetricSummary c = gradient_symmetricity(m, 1, 40);
    CHECK_THAT(c.mean, WithinAbs(a.mean, 1e-12));
}

TEST_CASE("dead networks skip every triple") {
    Model m = build_model(small(Architecture::MlpConcat, 7), 2);
    m.param("W_out").fill(0.0);
    const MetricSummary s = gradient_symmetricity(m);
    CHECK(s.count == 0);
    CHECK(s.skipped == 343);
}

TEST_CASE("relabeling hidden neurons leaves both metrics unchanged") {
    Model m = build_model(small(Architecture::MlpConcat, 11), 8);
    Model p = m.clone();
    const std::size_t w = m.config().hidden_width;
    Tensor& w1 = p.param("W_1");
    Tensor& wo = p.param("W_out");
    const Tensor w1o = m.param("W_1"), woo = m.param("W_out");
    for (std::size_t j = 0; j < w; ++j) {
        const std::size_t src = (j * 7 + 3) % w;  // 7 is coprime to 24
        for (std::size_t r = 0; r < w1.rows(); ++r) w1(r, j) = w1o(r, src);
        for (std::size_t c = 0; c < wo.cols(); ++c) wo(j, c) = woo(src, c);
    }
    CHECK_THAT(gradient_symmetricity(p).mean, WithinAbs(gradient_symmetricity(m).mean, 1e-12));
    CHECK_THAT(distance_irrelevance(grid_logits(p), 11).mean, WithinAbs(distance_irrelevance(grid_logits(m), 11).mean, 1e-12));
}

TEST_CASE("logits that depend only on the difference have zero distance irrelevance") {
    const int n = 59;
    const Tensor t = logits_from(n, [n](int i, int j) { return std::sin(0.3 * ((j - i + n) % n)) + 0.01 * ((j - i + n) % n); });
    const MetricSummary s = distance_irrelevance(t, n);
    CHECK_THAT(s.mean, WithinAbs(0.0, 1e-12));
    CHECK(s.count == 59);
}

TEST_CASE("logits that depend only on the sum have unit distance irrelevance") {
    for (int n : {59, 7}) {
        const Tensor t = logits_from(n, [n](int i, int j) { return std::cos(1.7 * ((i + j) % n)) + 0.2 * ((i + j) % n); });
        const MetricSummary s = distance_irrelevance(t, n);
        CHECK_THAT(s.mean, WithinAbs(1.0, 1e-12));
        CHECK(s.std < 1e-12);
    }
}

TEST_CASE("distance irrelevance stays within the unit interval") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor t = Tensor::matrix(59 * 59, 59);
        for (double& v : t.values()) v = rng.normal() * (1 + rep);
        const MetricSummary s = distance_irrelevance(t, 59);
        CHECK(s.mean >= 0.0);
        CHECK(s.mean <= 1.0 + 1e-9);
    }
}

TEST_CASE("constant correct logits are rejected") {
    const Tensor t = logits_from(7, [](int, int) { return 2.0; });
    CHECK_THROWS_AS(distance_irrelevance(t, 7), DegenerateLogits);
    CHECK_THROWS_AS(distance_irrelevance(Tensor::matrix(10, 7), 7), ShapeError);
}

TEST_CASE("running statistics merge like one pass") {
    Rng rng(3);
    RunningStats whole, left, right;
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.normal() * 3 + 1;
        whole.add(x);
        (i < 377 ? left : right).add(x);
    }
    left.merge(right);
    CHECK(left.n == whole.n);
    CHECK_THAT(left.mean, WithinAbs(whole.mean, 1e-12));
    CHECK_THAT(left.population_std(), WithinAbs(whole.population_std(), 1e-12));
}
