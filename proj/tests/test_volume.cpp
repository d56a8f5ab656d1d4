#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "pour/volume.hpp"
#include "support/oracles.hpp"

using pour::Volume3D;
using pour::VolumeKind;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("vvol round trip is byte-identical") {
    testsup::TempDir tmp;
    Volume3D v = testsup::random_volume({5, 4, 3}, 99, VolumeKind::activity, 0.0f, 10.0f);
    v.spacing = {1.5f, 2.0f, 2.5f};
    const auto p1 = tmp.file("a.vvol");
    const auto p2 = tmp.file("b.vvol");
    write_volume(v, p1);

    Volume3D r = pour::read_volume(p1);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing == v.spacing);
    CHECK(r.kind == v.kind);
    CHECK(r.data == v.data);

    write_volume(r, p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("vvol header layout") {
    testsup::TempDir tmp;
    Volume3D v = Volume3D::zeros({2, 3, 4}, VolumeKind::mu_normalized);
    const auto p = tmp.file("h.vvol");
    write_volume(v, p);
    auto bytes = slurp(p);
    REQUIRE(bytes.size() == 32 + 4 * v.size());
    CHECK(std::string(bytes.data(), 5) == "VVOL1");
    CHECK(bytes[5] == 1);                       // version
    CHECK(bytes[6] == char(v.kind));            // kind tag
    CHECK(bytes[7] == 0);                       // reserved
    CHECK(std::uint8_t(bytes[8]) == 2);         // nx little-endian low byte
    CHECK(std::uint8_t(bytes[12]) == 3);        // ny
    CHECK(std::uint8_t(bytes[16]) == 4);        // nz
}

TEST_CASE("vvol rejects malformed files") {
    testsup::TempDir tmp;
    Volume3D v = Volume3D::zeros({2, 2, 2}, VolumeKind::mu);
    const auto p = tmp.file("x.vvol");
    write_volume(v, p);

    CHECK_THROWS_AS(pour::read_volume(tmp.file("missing.vvol")), pour::IoError);

    auto corrupt = [&](std::size_t at, char val, const char* name) {
        auto bytes = slurp(p);
        bytes[at] = val;
        const auto q = tmp.file(std::string(name) + ".vvol");
        std::ofstream(q, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        return q;
    };
    CHECK_THROWS_AS(pour::read_volume(corrupt(0, 'X', "magic")), pour::FormatError);
    CHECK_THROWS_AS(pour::read_volume(corrupt(5, 9, "version")), pour::FormatError);
    CHECK_THROWS_AS(pour::read_volume(corrupt(6, 42, "kind")), pour::FormatError);

    // truncated payload
    auto bytes = slurp(p);
    bytes.resize(bytes.size() - 4);
    const auto q = tmp.file("short.vvol");
    std::ofstream(q, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    CHECK_THROWS_AS(pour::read_volume(q), pour::FormatError);
}

TEST_CASE("mu normalization is an exact scaling") {
    Volume3D v = testsup::random_volume({4, 4, 4}, 7, VolumeKind::mu, 0.0f, 0.15f);
    Volume3D n = pour::normalize_mu(v);
    CHECK(n.kind == VolumeKind::mu_normalized);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(n.data[i] == doctest::Approx(v.data[i] / 0.15f).epsilon(1e-6));
    Volume3D d = pour::denormalize_mu(n);
    CHECK(d.kind == VolumeKind::mu);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(d.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
}

TEST_CASE("activity normalization is scale invariant") {
    Volume3D v = testsup::random_volume({4, 4, 4}, 8, VolumeKind::activity, 0.1f, 5.0f);
    Volume3D n1 = pour::normalize_activity(v);
    CHECK(n1.kind == VolumeKind::activity_normalized);
    Volume3D scaled = v;
    for (auto& x : scaled.data) x *= 37.0f;
    Volume3D n2 = pour::normalize_activity(scaled);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(n2.data[i] == doctest::Approx(n1.data[i]).epsilon(1e-5));
    // values live in tanh range
    CHECK(pour::volume_max(n1) < 1.0);
    CHECK(pour::volume_min(n1) >= 0.0);

    Volume3D zero = Volume3D::zeros({2, 2, 2}, VolumeKind::activity);
    CHECK_THROWS_AS(pour::normalize_activity(zero), pour::ContractError);
}

TEST_CASE("gaussian smoothing preserves constants and the volume mean") {
    Volume3D c = Volume3D::zeros({6, 6, 6}, VolumeKind::mu);
    for (auto& x : c.data) x = 0.42f;
    Volume3D s = pour::gaussian_smooth(c, 5.0);
    for (float x : s.data) CHECK(x == doctest::Approx(0.42f).epsilon(1e-6));

    Volume3D v = testsup::random_volume({8, 8, 8}, 9, VolumeKind::mu, 0.0f, 1.0f);
    Volume3D sv = pour::gaussian_smooth(v, 4.0);
    // smoothing reduces variance
    auto var = [](const Volume3D& a) {
        double m = pour::volume_mean(a), acc = 0.0;
        for (float x : a.data) acc += (x - m) * (x - m);
        return acc / double(a.data.size());
    };
    CHECK(var(sv) < var(v));
}

TEST_CASE("trilinear resize: identity and constant preservation") {
    Volume3D v = testsup::random_volume({5, 6, 7}, 10, VolumeKind::mu_normalized);
    Volume3D same = pour::resize_trilinear(v, v.dims);
    CHECK(same.data == v.data);

    Volume3D c = Volume3D::zeros({4, 4, 4}, VolumeKind::mu_normalized);
    for (auto& x : c.data) x = 0.77f;
    Volume3D big = pour::resize_trilinear(c, {9, 5, 6});
    CHECK(big.dims == std::array<std::uint32_t, 3>{9, 5, 6});
    for (float x : big.data) CHECK(x == doctest::Approx(0.77f).epsilon(1e-6));
}

TEST_CASE("volume validate flags structural problems") {
    Volume3D v = Volume3D::zeros({2, 2, 2}, VolumeKind::mu);
    CHECK_NOTHROW(v.validate());
    Volume3D bad = v;
    bad.data.pop_back();
    CHECK_THROWS_AS(bad.validate(), pour::ShapeError);
    Volume3D nan = v;
    nan.data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(nan.validate(), pour::ContractError);
}
