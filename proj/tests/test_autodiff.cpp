#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "catch_amalgamated.hpp"
#include "modarith/adam.hpp"
#include "modarith/autodiff.hpp"
#include "modarith/rng.hpp"

using namespace modarith;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.values()) v = rng.uniform(-scale, scale);
    return t;
}

// Central differences of <seed, out(params)> against the graph's VJP, for
// every entry of every parameter. Written independently of gradcheck.hpp.
double max_fd_error(ComputeGraph& g, NodeId out, const std::vector<std::pair<NodeId, Tensor*>>& params, std::uint64_t seed) {
    Rng rng(seed);
    const Tensor& y0 = g.forward(out);
    Tensor cot = random_matrix(y0.rows(), y0.cols(), rng);
    g.backward(out, cot);
    std::vector<Tensor> grads;
    for (auto& [node, _] : params) grads.push_back(g.grad(node));

    auto objective = [&]() {
        const Tensor& y = g.forward(out);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
        return s;
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k].second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double keep = p[i];
            p[i] = keep + h;
            const double up = objective();
            p[i] = keep - h;
            const double down = objective();
            p[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double ad = grads[k][i];
            worst = std::max(worst, std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-6}));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("relu forward zeroes negatives") {
    ComputeGraph g;
    NodeId x = g.input("x", 3);
    NodeId y = g.relu(x);
    g.bind(x, Tensor::from_rows({{-1, 0, 2}}));
    const Tensor& out = g.forward(y);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);
}

TEST_CASE("cross entropy of uniform logits is log of class count") {
    ComputeGraph g;
    NodeId x = g.input("logits", 59);
    IndexSlot labels = g.indices("labels");
    NodeId loss = g.cross_entropy(x, labels);
    for (int k : {0, 17, 58}) {
        g.bind(x, Tensor::matrix(1, 59, 0.0));
        g.bind(labels, {k});
        CHECK_THAT(g.forward(loss)[0], WithinRel(std::log(59.0), 1e-14));
    }
}

TEST_CASE("identity times A is A") {
    Rng rng(3);
    ComputeGraph g;
    NodeId i3 = g.input("I", 3);
    NodeId a = g.input("A", 4);
    NodeId p = g.matmul(i3, a);
    const Tensor A = random_matrix(3, 4, rng);
    g.bind(i3, Tensor::identity(3));
    g.bind(a, A);
    CHECK(max_abs_diff(g.forward(p), A) == 0.0);
}

TEST_CASE("gradient of summed relu is the step function") {
    Tensor x = Tensor::from_rows({{-1, 2}});
    ComputeGraph g;
    NodeId px = g.parameter("x", &x);
    NodeId y = g.relu(px);
    g.forward(y);
    g.backward(y, Tensor::matrix(1, 2, 1.0));
    const Tensor& dx = g.grad(px);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 1.0);
}

TEST_CASE("cross entropy gradient at uniform logits is softmax minus one-hot") {
    Tensor logits = Tensor::matrix(1, 59, 0.0);
    ComputeGraph g;
    NodeId p = g.parameter("logits", &logits);
    IndexSlot labels = g.indices("y");
    NodeId loss = g.cross_entropy(p, labels);
    g.bind(labels, {7});
    g.forward(loss);
    g.backward(loss);
    const Tensor& d = g.grad(p);
    for (std::size_t c = 0; c < 59; ++c) {
        const double expected = 1.0 / 59.0 - (c == 7 ? 1.0 : 0.0);
        CHECK_THAT(d[c], WithinAbs(expected, 1e-15));
    }
}

TEST_CASE("two layer MLP matches central differences") {
    Rng rng(11);
    Tensor w1 = random_matrix(5, 8, rng), w2 = random_matrix(8, 6, rng);
    ComputeGraph g;
    NodeId x = g.input("x", 5);
    IndexSlot y = g.indices("y");
    NodeId p1 = g.parameter("W1", &w1), p2 = g.parameter("W2", &w2);
    NodeId logits = g.matmul(g.relu(g.matmul(x, p1)), p2);
    NodeId loss = g.cross_entropy(logits, y);
    g.bind(x, random_matrix(7, 5, rng));
    g.bind(y, {0, 1, 2, 3, 4, 5, 0});
    CHECK(max_fd_error(g, loss, {{p1, &w1}, {p2, &w2}}, 1) < 1e-5);
}

TEST_CASE("every primitive matches central differences") {
    Rng rng(5);
    Tensor a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng), w = random_matrix(3, 5, rng);
    Tensor table = random_matrix(6, 3, rng);
    ComputeGraph g;
    NodeId pa = g.parameter("a", &a), pb = g.parameter("b", &b), pw = g.parameter("w", &w), pt = g.parameter("table", &table);
    IndexSlot rows = g.indices("rows");
    IndexSlot y = g.indices("y");
    g.bind(rows, {5, 0, 5, 2});
    g.bind(y, {1, 0, 4, 2});
    const std::vector<std::pair<NodeId, Tensor*>> all = {{pa, &a}, {pb, &b}, {pw, &w}, {pt, &table}};

    SECTION("matmul") { CHECK(max_fd_error(g, g.matmul(pa, pw), all, 1) < 1e-5); }
    SECTION("add") { CHECK(max_fd_error(g, g.add(pa, pb), all, 2) < 1e-5); }
    SECTION("scale") { CHECK(max_fd_error(g, g.scale(pa, -0.7), all, 3) < 1e-5); }
    SECTION("relu") { CHECK(max_fd_error(g, g.relu(g.add(pa, pb)), all, 4) < 1e-5); }
    SECTION("softmax") { CHECK(max_fd_error(g, g.softmax(g.matmul(pa, pw)), all, 5) < 1e-5); }
    SECTION("cross entropy") { CHECK(max_fd_error(g, g.cross_entropy(g.matmul(pa, pw), y), all, 6) < 1e-5); }
    SECTION("concat") { CHECK(max_fd_error(g, g.relu(g.concat({pa, pb, pa})), all, 7) < 1e-5); }
    SECTION("mean over positions") { CHECK(max_fd_error(g, g.mean_positions({pa, pb, pa}), all, 8) < 1e-5); }
    SECTION("gather") { CHECK(max_fd_error(g, g.gather(pt, rows), all, 9) < 1e-5); }
    SECTION("row dot") { CHECK(max_fd_error(g, g.row_dot(pa, pb), all, 10) < 1e-5); }
    SECTION("column") { CHECK(max_fd_error(g, g.column(g.matmul(pa, pw), 3), all, 11) < 1e-5); }
    SECTION("scale rows") { CHECK(max_fd_error(g, g.scale_rows(pa, g.row_dot(pa, pb)), all, 12) < 1e-5); }
}

TEST_CASE("backward before forward is rejected") {
    Tensor w = Tensor::matrix(2, 2, 1.0);
    ComputeGraph g;
    NodeId x = g.input("x", 2);
    IndexSlot y = g.indices("y");
    NodeId loss = g.cross_entropy(g.matmul(x, g.parameter("w", &w)), y);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);
}

TEST_CASE("shape errors name the offending node") {
    Tensor w = Tensor::matrix(3, 2, 1.0);
    ComputeGraph g;
    NodeId x = g.input("x", 4);
    NodeId bad = g.matmul(x, g.parameter("w", &w), "hidden_projection");
    g.bind(x, Tensor::matrix(2, 4));
    CHECK_THROWS_WITH(g.forward(bad), ContainsSubstring("hidden_projection"));
    CHECK_THROWS_AS(g.forward(bad), ShapeError);

    g.bind(x, Tensor::matrix(2, 5));
    CHECK_THROWS_WITH(g.forward(x), ContainsSubstring("'x'"));
}

TEST_CASE("forward is deterministic") {
    Rng rng(2);
    Tensor w = random_matrix(6, 6, rng);
    ComputeGraph g;
    NodeId x = g.input("x", 6);
    NodeId y = g.softmax(g.matmul(x, g.parameter("w", &w)));
    const Tensor in = random_matrix(9, 6, rng);
    g.bind(x, in);
    const Tensor first = g.forward(y);
    g.bind(x, in);
    CHECK(max_abs_diff(first, g.forward(y)) == 0.0);
}

TEST_CASE("first Adam step moves by the learning rate against the gradient sign") {
    for (double gval : {3.0, -0.02, 250.0}) {
        Tensor p = Tensor::matrix(1, 1, 0.5);
        Tensor grad = Tensor::matrix(1, 1, gval);
        std::vector<Tensor*> ps{&p};
        std::vector<const Tensor*> gs{&grad};
        AdamConfig cfg;
        cfg.learning_rate = 0.1;
        AdamState st(cfg, ps);
        adam_step(st, ps, gs);
        CHECK_THAT(p[0] - 0.5, WithinAbs(-0.1 * (gval > 0 ? 1.0 : -1.0), 1e-6));
    }
}

TEST_CASE("zero gradient without decay leaves the parameter alone") {
    Tensor p = Tensor::from_rows({{1.5, -2.0}});
    Tensor grad = Tensor::matrix(1, 2, 0.0);
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&grad};
    AdamState st(AdamConfig{}, ps);
    for (int i = 0; i < 10; ++i) adam_step(st, ps, gs);
    CHECK(p[0] == 1.5);
    CHECK(p[1] == -2.0);
}

TEST_CASE("Adam minimizes a convex scalar quadratic") {
    Tensor w = Tensor::matrix(1, 1, 1.0);
    Tensor grad = Tensor::matrix(1, 1);
    std::vector<Tensor*> ps{&w};
    std::vector<const Tensor*> gs{&grad};
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    AdamState st(cfg, ps);
    std::vector<double> loss{w[0] * w[0]};
    for (int step = 0; step < 500; ++step) {
        grad[0] = 2.0 * w[0];
        adam_step(st, ps, gs);
        loss.push_back(w[0] * w[0]);
    }
    CHECK(std::abs(w[0]) < 0.05);
    // Non-increasing across any 100-step window.
    for (std::size_t t = 0; t + 100 < loss.size(); ++t) CHECK(loss[t + 100] <= loss[t]);
}

TEST_CASE("non-finite gradients abort the step without side effects") {
    Tensor p = Tensor::matrix(1, 2, 1.0);
    Tensor grad = Tensor::from_rows({{0.5, std::nan("")}});
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&grad};
    AdamState st(AdamConfig{}, ps);
    CHECK_THROWS_AS(adam_step(st, ps, gs), NonFiniteError);
    CHECK(st.step == 0);
    CHECK(p[0] == 1.0);
}

TEST_CASE("weight decay adds lambda times the parameter to the gradient") {
    // With g = 0 the first step sees only lambda * p, so it moves by -lr * sign(p).
    Tensor p = Tensor::matrix(1, 1, -2.0);
    Tensor grad = Tensor::matrix(1, 1, 0.0);
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&grad};
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.1;
    AdamState st(cfg, ps);
    adam_step(st, ps, gs);
    CHECK_THAT(p[0], WithinAbs(-2.0 + 0.01, 1e-8));
}
