#include <doctest.h>

#include "pour/conv.hpp"
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

TEST_CASE("conv3d forward matches the direct seven-loop oracle") {
    struct Case {
        int batch, cin, n, cout, k, stride, pad;
    };
    for (const Case c : {Case{1, 1, 5, 1, 3, 1, 1}, Case{2, 3, 6, 4, 3, 1, 1},
                         Case{1, 2, 7, 3, 3, 2, 1}, Case{1, 4, 4, 2, 1, 1, 0},
                         Case{1, 1, 8, 2, 5, 1, 2}}) {
        CAPTURE(c.n);
        CAPTURE(c.k);
        CAPTURE(c.stride);
        auto x = constant({c.batch, c.cin, c.n, c.n, c.n}, 100 + c.k);
        auto w = constant({c.cout, c.cin, c.k, c.k, c.k}, 200 + c.k);
        auto b = constant({c.cout}, 300 + c.k);
        auto y = pour::conv3d(x, w, b, c.stride, c.pad);
        auto ref = testsup::oracle_conv3d(x.value(), w.value(), b.value(), c.batch, c.cin, c.n,
                                          c.n, c.n, c.cout, c.k, c.stride, c.pad);
        REQUIRE(y.value().size() == ref.size());
        double max_abs = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i)
            max_abs = std::max(max_abs, std::fabs(y.value()[i] - ref[i]));
        CHECK(max_abs <= 1e-12);
    }
}

TEST_CASE("conv3d gradients match finite differences") {
    for (const auto& [k, stride, pad] :
         std::vector<std::array<int, 3>>{{3, 1, 1}, {1, 1, 0}, {3, 2, 1}}) {
        CAPTURE(k);
        CAPTURE(stride);
        std::vector<Tensor64> leaves = {leaf({2, 2, 5, 5, 5}, 40), leaf({3, 2, k, k, k}, 41),
                                        leaf({3}, 42)};
        const int o = (5 + 2 * pad - k) / stride + 1;
        auto target = constant({2, 3, o, o, o}, 43);
        auto res = testsup::check_gradients(leaves, [&, s = stride, p = pad] {
            return pour::mse(pour::conv3d(leaves[0], leaves[1], leaves[2], s, p), target);
        });
        CAPTURE(res.worst);
        CHECK(res.max_rel_err <= 1e-6);
    }
}

TEST_CASE("conv3d rejects malformed operands") {
    auto x = Tensor64::zeros({1, 2, 4, 4, 4});
    CHECK_THROWS_AS(pour::conv3d(x, Tensor64::zeros({3, 2, 2, 2, 2}), Tensor64::zeros({3}), 1, 1),
                    pour::ShapeError);  // even kernel
    CHECK_THROWS_AS(pour::conv3d(x, Tensor64::zeros({3, 1, 3, 3, 3}), Tensor64::zeros({3}), 1, 1),
                    pour::ShapeError);  // cin mismatch
    CHECK_THROWS_AS(pour::conv3d(x, Tensor64::zeros({3, 2, 3, 3, 3}), Tensor64::zeros({2}), 1, 1),
                    pour::ShapeError);  // bias length
    CHECK_THROWS_AS(pour::conv3d(x, Tensor64::zeros({3, 2, 3, 3, 3}), Tensor64::zeros({3}), 0, 1),
                    pour::ContractError);  // stride
}

TEST_CASE("downsample averages blocks and upsample interpolates linearly") {
    // down2 on a constant-block volume recovers the block values exactly
    std::vector<double> v(1 * 1 * 4 * 4 * 4);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                v[std::size_t((z * 4 + y) * 4 + x)] = (z / 2) * 4 + (y / 2) * 2 + (x / 2);
    auto t = Tensor64::from({1, 1, 4, 4, 4}, v);
    auto d = pour::resample(t, pour::ResampleFactor::down2);
    REQUIRE(d.shape() == pour::Shape{1, 1, 2, 2, 2});
    for (int i = 0; i < 8; ++i) CHECK(d.value()[std::size_t(i)] == doctest::Approx(i));

    // up2 of a linear ramp is the exact ramp at half-pixel positions, with
    // border cells extrapolating the boundary cell's linear model
    std::vector<double> cube(4 * 4 * 4);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) cube[std::size_t((z * 4 + y) * 4 + x)] = double(x);
    auto c = Tensor64::from({1, 1, 4, 4, 4}, cube);
    auto u = pour::resample(c, pour::ResampleFactor::up2);
    REQUIRE(u.shape() == pour::Shape{1, 1, 8, 8, 8});
    for (int x = 0; x < 8; ++x)
        CHECK(u.value()[std::size_t(x)] == doctest::Approx(0.5 * x - 0.25).epsilon(1e-12));
}

TEST_CASE("down-then-up round trip reproduces affine ramps exactly") {
    std::vector<double> v(8 * 8 * 8);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                v[std::size_t((z * 8 + y) * 8 + x)] = 0.1 * x + 0.05 * y + 0.02 * z + 0.3;
    auto t = Tensor64::from({1, 1, 8, 8, 8}, v);
    for (auto [down, up] : {std::pair{pour::ResampleFactor::down2, pour::ResampleFactor::up2},
                            std::pair{pour::ResampleFactor::down4, pour::ResampleFactor::up4}}) {
        auto rt = pour::resample(pour::resample(t, down), up);
        double max_err = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            max_err = std::max(max_err, std::fabs(rt.value()[i] - v[i]));
        CHECK(max_err <= 1e-12);
    }
}

TEST_CASE("resample gradients match finite differences") {
    for (auto f : {pour::ResampleFactor::down2, pour::ResampleFactor::up2,
                   pour::ResampleFactor::down4, pour::ResampleFactor::up4}) {
        CAPTURE(int(f));
        std::vector<Tensor64> leaves = {leaf({1, 2, 4, 4, 4}, 50)};
        auto probe = pour::resample(Tensor64::zeros({1, 2, 4, 4, 4}), f);
        auto target = constant(probe.shape(), 51);
        auto res = testsup::check_gradients(
            leaves, [&] { return pour::mse(pour::resample(leaves[0], f), target); });
        CAPTURE(res.worst);
        CHECK(res.max_rel_err <= 1e-6);
    }
}

TEST_CASE("resample rejects indivisible extents") {
    auto t = Tensor64::zeros({1, 1, 6, 6, 6});
    CHECK_THROWS_AS(pour::resample(t, pour::ResampleFactor::down4), pour::ShapeError);
    CHECK_NOTHROW(pour::resample(t, pour::ResampleFactor::down2));
}
