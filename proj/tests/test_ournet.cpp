#include <doctest.h>

#include <set>

#include "pour/ournet.hpp"
#include "support/oracles.hpp"

using pour::OurNetConfig;
using pour::TensorT;
using Tensor64 = TensorT<double>;

namespace {

Tensor64 rand_t(pour::Shape shape, std::uint64_t seed) {
    pour::Rng rng(seed);
    return Tensor64::from(shape, testsup::smooth_random(pour::shape_numel(shape), rng));
}

pour::RsebParamsT<double> zero_rseb(int c, int hidden) {
    pour::RsebParamsT<double> p;
    p.ex1 = {Tensor64::zeros({c, c, 3, 3, 3}), Tensor64::zeros({c})};
    p.ex2 = {Tensor64::zeros({c, c, 3, 3, 3}), Tensor64::zeros({c})};
    p.fc1_w = Tensor64::zeros({c, hidden});
    p.fc1_b = Tensor64::zeros({hidden});
    p.fc2_w = Tensor64::zeros({hidden, c});
    p.fc2_b = Tensor64::zeros({c});
    return p;
}

}  // namespace

TEST_CASE("branch feature pyramids and heads have the contracted shapes") {
    OurNetConfig cfg;
    cfg.in_channels = 2;
    cfg.base_channels = 8;
    cfg.frb_rseb_count = 2;
    auto net = pour::make_ournet<double>(cfg, 31);
    auto x = rand_t({1, 2, 16, 16, 16}, 1);

    REQUIRE(net.unnet);
    REQUIRE(net.ovnet);
    auto uf = pour::branch_forward(x, *net.unnet, true);
    // context branch: resolution shrinks 16 -> 8 -> 4, channels grow C -> 4C
    CHECK(uf.e1.shape() == pour::Shape{1, 8, 16, 16, 16});
    CHECK(uf.e2.shape() == pour::Shape{1, 16, 8, 8, 8});
    CHECK(uf.e3.shape() == pour::Shape{1, 32, 4, 4, 4});
    CHECK(uf.d1.shape() == pour::Shape{1, 8, 16, 16, 16});
    CHECK(uf.head.shape() == pour::Shape{1, 1, 16, 16, 16});

    auto of = pour::branch_forward(x, *net.ovnet, false);
    // detail branch: resolution grows 16 -> 32 -> 64 at constant width
    CHECK(of.e1.shape() == pour::Shape{1, 8, 16, 16, 16});
    CHECK(of.e2.shape() == pour::Shape{1, 8, 32, 32, 32});
    CHECK(of.e3.shape() == pour::Shape{1, 8, 64, 64, 64});
    CHECK(of.d1.shape() == pour::Shape{1, 8, 16, 16, 16});
    CHECK(of.head.shape() == pour::Shape{1, 1, 16, 16, 16});

    auto out = pour::ournet_forward(x, net);
    CHECK(out.x_f.shape() == pour::Shape{1, 1, 16, 16, 16});
    CHECK(out.x_u.shape() == pour::Shape{1, 1, 16, 16, 16});
    CHECK(out.x_o.shape() == pour::Shape{1, 1, 16, 16, 16});
}

TEST_CASE("all four branch configurations construct and run") {
    for (bool un : {false, true})
        for (bool ov : {false, true}) {
            CAPTURE(un);
            CAPTURE(ov);
            OurNetConfig cfg;
            cfg.in_channels = 2;
            cfg.base_channels = 4;
            cfg.frb_rseb_count = 1;
            cfg.enable_unnet = un;
            cfg.enable_ovnet = ov;
            auto net = pour::make_ournet<double>(cfg, 7);
            CHECK(bool(net.unnet) == un);
            CHECK(bool(net.ovnet) == ov);
            auto out = pour::ournet_forward(rand_t({1, 2, 8, 8, 8}, 2), net);
            CHECK(out.x_f.shape() == pour::Shape{1, 1, 8, 8, 8});
            CHECK(out.x_u.defined() == un);
            CHECK(out.x_o.defined() == ov);
            auto loss = pour::total_loss(out, rand_t({1, 1, 8, 8, 8}, 3));
            CHECK(std::isfinite(loss.item()));
        }
}

TEST_CASE("rseb with zero parameters is the identity") {
    auto p = zero_rseb(3, 2);
    auto x = rand_t({2, 3, 4, 4, 4}, 11);
    auto y = pour::rseb_forward(x, p);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.value().size(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("attention gate with a zeroed head projection is a half-open gate") {
    const int c = 3;
    pour::ConvParamsT<double> p1{rand_t({c, c, 3, 3, 3}, 21), rand_t({c}, 22)};
    pour::ConvParamsT<double> p2{Tensor64::zeros({c, 1, 3, 3, 3}), Tensor64::zeros({c})};
    auto d1 = rand_t({1, c, 6, 6, 6}, 23);
    auto head = rand_t({1, 1, 6, 6, 6}, 24);

    auto y = pour::attention_connect(d1, head, p1, p2);
    // gate = sigmoid(0) = 0.5 everywhere, so y = d1 + 0.5 * conv(d1)
    auto conv = pour::conv3d(d1, p1.w, p1.b, 1, 1);
    for (std::size_t i = 0; i < y.value().size(); ++i)
        CHECK(y.value()[i] ==
              doctest::Approx(d1.value()[i] + 0.5 * conv.value()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(pour::attention_connect(d1, rand_t({1, 2, 6, 6, 6}, 25), p1, p2),
                    pour::ShapeError);
}

TEST_CASE("parameter registry has unique names and deterministic init") {
    OurNetConfig cfg;
    cfg.in_channels = 3;
    cfg.base_channels = 4;
    cfg.frb_rseb_count = 2;
    auto a = pour::make_ournet<float>(cfg, 99);
    auto b = pour::make_ournet<float>(cfg, 99);
    auto c = pour::make_ournet<float>(cfg, 100);

    REQUIRE(a.named.size() == b.named.size());
    std::set<std::string> names;
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.named.size(); ++i) {
        names.insert(a.named[i].first);
        CHECK(a.named[i].first == b.named[i].first);
        all_equal = all_equal && a.named[i].second.value() == b.named[i].second.value();
        any_diff_seed = any_diff_seed || a.named[i].second.value() != c.named[i].second.value();
    }
    CHECK(names.size() == a.named.size());  // no duplicate names
    CHECK(all_equal);                       // same seed, same weights
    CHECK(any_diff_seed);                   // different seed, different weights
    CHECK(pour::param_tensors(a).size() == a.named.size());
}

TEST_CASE("disabling branches strictly shrinks the parameter count") {
    auto count = [](bool un, bool ov) {
        OurNetConfig cfg;
        cfg.in_channels = 2;
        cfg.base_channels = 4;
        cfg.frb_rseb_count = 1;
        cfg.enable_unnet = un;
        cfg.enable_ovnet = ov;
        auto net = pour::make_ournet<float>(cfg, 1);
        std::int64_t n = 0;
        for (const auto& [name, t] : net.named) n += t.numel();
        return n;
    };
    const auto ff = count(false, false), ft = count(false, true), tf = count(true, false),
               tt = count(true, true);
    CHECK(ff < ft);
    CHECK(ff < tf);
    CHECK(ft < tt);
    CHECK(tf < tt);
    // the downsampling branch widens channels per level, so it outweighs the
    // constant-width upsampling branch
    CHECK(ft < tf);
}

TEST_CASE("forward rejects wrong channel counts and indivisible extents") {
    OurNetConfig cfg;
    cfg.in_channels = 2;
    cfg.base_channels = 4;
    cfg.frb_rseb_count = 1;
    auto net = pour::make_ournet<double>(cfg, 5);
    CHECK_THROWS_AS(pour::ournet_forward(rand_t({1, 3, 8, 8, 8}, 1), net), pour::ShapeError);
    CHECK_THROWS_AS(pour::ournet_forward(rand_t({1, 2, 6, 8, 8}, 1), net), pour::ShapeError);
    CHECK_THROWS_AS(pour::ournet_forward(rand_t({1, 2, 8}, 1), net), pour::ShapeError);
}

TEST_CASE("total loss sums the defined per-head errors") {
    OurNetConfig cfg;
    cfg.in_channels = 2;
    cfg.base_channels = 4;
    cfg.frb_rseb_count = 1;
    cfg.enable_unnet = false;
    cfg.enable_ovnet = false;
    auto net = pour::make_ournet<double>(cfg, 5);
    auto x = rand_t({1, 2, 8, 8, 8}, 6);
    auto gt = rand_t({1, 1, 8, 8, 8}, 7);
    auto out = pour::ournet_forward(x, net);
    auto l = pour::total_loss(out, gt);
    auto direct = pour::mse(out.x_f, gt);
    CHECK(l.item() == doctest::Approx(direct.item()).epsilon(1e-12));

    cfg.enable_unnet = true;
    cfg.enable_ovnet = true;
    auto full = pour::make_ournet<double>(cfg, 5);
    auto fout = pour::ournet_forward(x, full);
    auto fl = pour::total_loss(fout, gt);
    const double expect = pour::mse(fout.x_f, gt).item() + pour::mse(fout.x_u, gt).item() +
                          pour::mse(fout.x_o, gt).item();
    CHECK(fl.item() == doctest::Approx(expect).epsilon(1e-12));
}
