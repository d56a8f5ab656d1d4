#include <doctest.h>

#include "pour/tensor.hpp"
#include "support/oracles.hpp"

using pour::TensorT;
using Tensor64 = TensorT<double>;

namespace {

Tensor64 leaf(pour::Shape shape, std::uint64_t seed) {
    pour::Rng rng(seed);
    return Tensor64::from(shape, testsup::smooth_random(pour::shape_numel(shape), rng), true);
}

Tensor64 constant(pour::Shape shape, std::uint64_t seed) {
    pour::Rng rng(seed);
    return Tensor64::from(shape, testsup::smooth_random(pour::shape_numel(shape), rng), false);
}

}  // namespace

TEST_CASE("tensor basics") {
    auto t = Tensor64::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.value()[4] == 5.0);
    CHECK_FALSE(t.requires_grad());
    CHECK(Tensor64::scalar(7.0).item() == 7.0);
    CHECK_THROWS_AS(Tensor64::from({2, 2}, {1.0}), pour::ShapeError);
    CHECK_THROWS_AS(Tensor64::from({0, 2}, {}), pour::ShapeError);
    CHECK_THROWS_AS(t.item(), pour::ContractError);
}

TEST_CASE("no graph is recorded without requires_grad") {
    auto a = constant({4}, 1);
    auto b = constant({4}, 2);
    auto c = pour::add(a, b);
    CHECK(c.node()->parents.empty());
    CHECK_FALSE(c.node()->backprop);

    auto d = pour::mul(leaf({4}, 3), b);
    CHECK(d.node()->parents.size() == 2);
    CHECK(bool(d.node()->backprop));
}

TEST_CASE("elementwise gradients match finite differences") {
    std::vector<Tensor64> leaves = {leaf({2, 5}, 10), leaf({2, 5}, 11)};
    auto target = constant({2, 5}, 12);

    auto run = [&](const char* name, std::function<Tensor64()> build) {
        CAPTURE(name);
        auto res = testsup::check_gradients(leaves, build, 6);
        CAPTURE(res.worst);
        CHECK(res.max_rel_err <= 1e-6);
    };

    run("add", [&] { return pour::mse(pour::add(leaves[0], leaves[1]), target); });
    run("mul", [&] { return pour::mse(pour::mul(leaves[0], leaves[1]), target); });
    run("relu", [&] { return pour::mse(pour::relu(leaves[0]), target); });
    run("sigmoid", [&] { return pour::mse(pour::sigmoid(leaves[0]), target); });
    run("tanh", [&] { return pour::mse(pour::tanh(leaves[0]), target); });
    run("chain", [&] {
        auto y = pour::mul(pour::tanh(leaves[0]), pour::sigmoid(leaves[1]));
        return pour::mse(pour::add(y, leaves[0]), target);
    });
}

TEST_CASE("concat and slice gradients") {
    std::vector<Tensor64> leaves = {leaf({1, 2, 2, 2, 2}, 20), leaf({1, 3, 2, 2, 2}, 21)};
    auto target = constant({1, 5, 2, 2, 2}, 22);
    auto res = testsup::check_gradients(leaves, [&] {
        return pour::mse(pour::concat_channels<double>({leaves[0], leaves[1]}), target);
    });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-6);

    auto starget = constant({1, 2, 2, 2, 2}, 23);
    res = testsup::check_gradients(leaves, [&] {
        auto cat = pour::concat_channels<double>({leaves[0], leaves[1]});
        return pour::mse(pour::slice_channels(cat, 1, 2), starget);
    });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-6);

    auto cat = pour::concat_channels<double>({constant({1, 2, 1, 1, 1}, 1), constant({1, 1, 1, 1, 1}, 2)});
    CHECK(cat.shape() == pour::Shape{1, 3, 1, 1, 1});
    CHECK_THROWS_AS(pour::slice_channels(cat, 2, 5), pour::ShapeError);
}

TEST_CASE("pooling, dense, and channel scaling gradients") {
    std::vector<Tensor64> leaves = {leaf({2, 3, 2, 2, 2}, 30), leaf({3, 4}, 31), leaf({4}, 32),
                                    leaf({2, 3}, 33)};
    auto& x = leaves[0];
    auto& w = leaves[1];
    auto& b = leaves[2];
    auto& s = leaves[3];

    auto t_pool = constant({2, 3}, 34);
    auto res = testsup::check_gradients(
        leaves, [&] { return pour::mse(pour::global_avg_pool(x), t_pool); });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-6);

    auto t_dense = constant({2, 4}, 35);
    res = testsup::check_gradients(leaves, [&] {
        return pour::mse(pour::dense(pour::global_avg_pool(x), w, b), t_dense);
    });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-6);

    auto t_scale = constant({2, 3, 2, 2, 2}, 36);
    res = testsup::check_gradients(
        leaves, [&] { return pour::mse(pour::scale_channels(x, pour::sigmoid(s)), t_scale); });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("mse value and gradient") {
    auto p = Tensor64::from({3}, {1.0, 2.0, 3.0}, true);
    auto t = Tensor64::from({3}, {1.0, 0.0, 0.0});
    auto l = pour::mse(p, t);
    CHECK(l.item() == doctest::Approx((0.0 + 4.0 + 9.0) / 3.0).epsilon(1e-12));
    p.zero_grad();
    pour::backward(l);
    CHECK(p.grad()[0] == doctest::Approx(0.0));
    CHECK(p.grad()[1] == doctest::Approx(2.0 * 2.0 / 3.0));
    CHECK(p.grad()[2] == doctest::Approx(2.0 * 3.0 / 3.0));
}

TEST_CASE("gradients accumulate across backward passes and reused leaves") {
    auto x = Tensor64::from({2}, {0.5, -0.25}, true);
    // y = x + x: dy/dx = 2 per element through two graph paths
    auto t = Tensor64::from({2}, {0.0, 0.0});
    x.zero_grad();
    auto l1 = pour::mse(pour::add(x, x), t);
    pour::backward(l1);
    const double g0 = x.grad()[0];
    CHECK(g0 == doctest::Approx(2.0 * (2.0 * 0.5) * 2.0 / 2.0));
    auto l2 = pour::mse(pour::add(x, x), t);
    pour::backward(l2);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * g0));
}

TEST_CASE("interior adjoints are transient") {
    auto x = Tensor64::from({2}, {0.5, 0.25}, true);
    auto h = pour::sigmoid(x);
    auto l = pour::mse(h, Tensor64::from({2}, {0.0, 0.0}));
    x.zero_grad();
    pour::backward(l);
    CHECK(h.grad().empty());      // interior node keeps no adjoint
    CHECK(x.grad().size() == 2);  // leaf keeps its accumulated gradient
}

TEST_CASE("shape mismatches are rejected") {
    auto a = Tensor64::zeros({2, 2});
    auto b = Tensor64::zeros({2, 3});
    CHECK_THROWS_AS(pour::add(a, b), pour::ShapeError);
    CHECK_THROWS_AS(pour::mul(a, b), pour::ShapeError);
    CHECK_THROWS_AS(pour::mse(a, b), pour::ShapeError);
    CHECK_THROWS_AS(pour::concat_channels<double>({}), pour::ContractError);
    CHECK_THROWS_AS(pour::global_avg_pool(a), pour::ShapeError);  // rank 2, needs rank 5
}
