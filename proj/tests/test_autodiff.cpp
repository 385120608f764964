#include "gradient_suites.hpp"
#include "support.hpp"

#include "zsdg/autodiff.hpp"
#include "zsdg/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace zsdg;
using testing::check_graph;
using testing::project;
using testing::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kTolerance = 1e-4;

Tensor values_of(ad::Var v) { return v.value(); }

}  // namespace

TEST_CASE("matmul by hand") {
    ad::Graph g;
    auto a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    auto b = g.constant(Tensor::matrix(2, 1, {5, 6}));
    CHECK(values_of(ad::matmul(a, b)) == Tensor::matrix(2, 1, {17, 39}));

    std::mt19937_64 rng(3);
    const Tensor mv = random_tensor({3, 4}, rng);
    auto m = g.constant(mv);
    auto eye = g.constant(Tensor::identity(3));
    CHECK(values_of(ad::matmul(eye, m)) == mv);
}

TEST_CASE("relu clips negatives") {
    ad::Graph g;
    auto r = ad::relu(g.constant(Tensor::matrix(1, 3, {-1, 0, 2})));
    CHECK(r.value() == Tensor::matrix(1, 3, {0, 0, 2}));
}

TEST_CASE("mse loss") {
    ad::Graph g;
    auto t = g.constant(Tensor::matrix(1, 2, {0, 0}));
    CHECK(ad::mse_loss(g.constant(Tensor::matrix(1, 2, {1, 2})), t).item() == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(ad::mse_loss(t, t).item() == 0.0);
    auto p = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    auto q = g.constant(Tensor::matrix(2, 2, {0, 1, 2, 3}));
    CHECK(ad::mse_loss(p, q).item() == 1.0);
    CHECK_THROWS_AS(ad::mse_loss(p, t), ShapeError);
}

TEST_CASE("softmax cross entropy values") {
    ad::Graph g;
    std::vector<std::size_t> label{2};
    auto logits = g.constant(Tensor::matrix(1, 3, {1, 2, 3}));
    // -log(e^3 / (e^1 + e^2 + e^3)) evaluated directly
    const double oracle = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    CHECK(ad::softmax_cross_entropy(logits, label).item() == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(oracle == doctest::Approx(0.40761).epsilon(1e-5));

    std::vector<std::size_t> zero{0};
    auto uniform = g.constant(Tensor({1, 10}, 0.3));
    CHECK(ad::softmax_cross_entropy(uniform, zero).item() == doctest::Approx(std::log(10.0)).epsilon(1e-14));

    Tensor sat({1, 4}, 0.0);
    sat[0] = 1000.0;
    CHECK(ad::softmax_cross_entropy(g.constant(sat), zero).item() < 1e-300);

    std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(ad::softmax_cross_entropy(logits, bad), ShapeError);
}

TEST_CASE("shape mismatches are reported with both shapes") {
    ad::Graph g;
    auto a = g.constant(Tensor({2, 3}));
    auto b = g.constant(Tensor({3, 2}));
    try {
        ad::add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[3x2]") != std::string::npos);
    }
    CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
    CHECK_THROWS_AS(ad::add_row(a, g.constant(Tensor({1, 2}))), ShapeError);
    CHECK_THROWS_AS(ad::slice_rows(a, 1, 3), ShapeError);
    CHECK_THROWS_AS(ad::reshape(a, {4, 2}), ShapeError);
}

TEST_CASE("backward basics") {
    ad::Graph g;
    Tensor xv = Tensor::matrix(1, 3, {1.5, -2, 0.25});
    auto x = g.parameter(xv);
    auto unrelated = g.parameter(Tensor({2, 2}, 1.0));
    auto root = ad::sum(ad::mul(x, x));
    g.backward(root);
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * xv[i]);
    for (double v : unrelated.grad().values()) CHECK(v == 0.0);
    CHECK(x.grad().shape() == x.value().shape());

    // A second sweep must be requested explicitly.
    CHECK_THROWS_AS(g.backward(root), Error);
    g.zero_grad();
    g.backward(root);
    CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("backward rejects a non-scalar root") {
    ad::Graph g;
    auto x = g.parameter(Tensor({2, 2}, 1.0));
    CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("every operation passes a finite-difference check") {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto results = testing::op_suite(seed);
        for (const auto& [name, r] : results) {
            INFO(name << " seed " << seed);
            CHECK(r.checked > 0);
            CHECK(r.max_rel < kTolerance);
            worst = std::max(worst, r.max_rel);
        }
    }
    MESSAGE("worst relative error over all ops: " << worst);
}

TEST_CASE("two-layer network gradient matches central differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(77 + seed);
        Tensor x = random_tensor({6, 5}, rng);
        std::vector<std::size_t> y = {0, 1, 2, 3, 1, 0};
        auto r = check_graph({random_tensor({5, 7}, rng), random_tensor({1, 7}, rng),
                              random_tensor({7, 4}, rng), random_tensor({1, 4}, rng)},
                             [&](ad::Graph& g, auto v) {
                                 auto h = ad::relu(ad::add_row(ad::matmul(g.constant(x), v[0]), v[1]));
                                 auto logits = ad::add_row(ad::matmul(h, v[2]), v[3]);
                                 return ad::softmax_cross_entropy(logits, y);
                             });
        INFO("seed " << seed);
        CHECK(r.max_rel < kTolerance);
    }
}

TEST_CASE("backward is linear in the root") {
    std::mt19937_64 rng(5);
    Tensor w = random_tensor({4, 3}, rng);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor t = random_tensor({6, 3}, rng);
    std::vector<std::size_t> y = {0, 1, 2, 0, 1, 2};
    auto grad_of = [&](double a, double b) {
        ad::Graph g;
        auto wv = g.parameter(w);
        auto out = ad::matmul(g.constant(x), wv);
        auto l1 = ad::mse_loss(out, g.constant(t));
        auto l2 = ad::softmax_cross_entropy(out, y);
        g.backward(ad::add(ad::scale(l1, a), ad::scale(l2, b)));
        return wv.grad();
    };
    const Tensor g1 = grad_of(1.0, 0.0);
    const Tensor g2 = grad_of(0.0, 1.0);
    const Tensor combo = grad_of(2.5, -0.75);
    for (std::size_t i = 0; i < combo.size(); ++i) {
        CHECK(combo[i] == doctest::Approx(2.5 * g1[i] - 0.75 * g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("operations on one graph are deterministic") {
    auto run = [] {
        std::mt19937_64 rng(9);
        ad::Graph g;
        auto a = g.parameter(random_tensor({64, 48}, rng));
        auto b = g.parameter(random_tensor({48, 33}, rng));
        auto root = ad::mean(ad::relu(ad::matmul(a, b)));
        g.backward(root);
        return std::make_pair(a.grad(), b.grad());
    };
    CHECK(run() == run());
}
