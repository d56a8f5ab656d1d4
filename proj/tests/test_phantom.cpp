#include <doctest.h>

#include "pour/metrics.hpp"
#include "pour/phantom.hpp"
#include "support/oracles.hpp"

using pour::DegradeParams;
using pour::PhantomSpec;
using pour::Volume3D;

TEST_CASE("phantom generation is deterministic and respects the mu range") {
    PhantomSpec spec;
    spec.size = 32;
    spec.seed = 17;
    auto [mu1, lam1] = pour::generate_phantom(spec);
    auto [mu2, lam2] = pour::generate_phantom(spec);
    CHECK(mu1.data == mu2.data);
    CHECK(lam1.data == lam2.data);
    CHECK(mu1.kind == pour::VolumeKind::mu);
    CHECK(lam1.kind == pour::VolumeKind::activity);
    CHECK(pour::volume_min(mu1) >= 0.0);
    CHECK(pour::volume_max(mu1) <= 0.15 + 1e-6);
    CHECK(pour::volume_min(lam1) >= 0.0);

    spec.seed = 18;
    auto [mu3, lam3] = pour::generate_phantom(spec);
    CHECK(mu3.data != mu1.data);
}

TEST_CASE("tissue attenuation ordering: lung < soft tissue < spine") {
    PhantomSpec spec;
    spec.size = 32;
    for (std::uint64_t seed : {3ULL, 14ULL, 159ULL}) {
        spec.seed = seed;
        CAPTURE(seed);
        auto [mu, lam] = pour::generate_phantom(spec);

        // classify interior voxels by proximity to the configured tissue values
        double lung_acc = 0, soft_acc = 0, bone_acc = 0;
        std::int64_t lung_n = 0, soft_n = 0, bone_n = 0;
        for (float v : mu.data) {
            if (std::fabs(v - spec.mu_lung) < 0.008f) {
                lung_acc += v;
                ++lung_n;
            } else if (std::fabs(v - spec.mu_soft) < 0.008f) {
                soft_acc += v;
                ++soft_n;
            } else if (v > 0.12f) {
                bone_acc += v;
                ++bone_n;
            }
        }
        REQUIRE(lung_n > 0);
        REQUIRE(soft_n > 0);
        REQUIRE(bone_n > 0);
        CHECK(lung_acc / double(lung_n) < soft_acc / double(soft_n));
        CHECK(soft_acc / double(soft_n) < bone_acc / double(bone_n));
    }
}

TEST_CASE("degradation in the noiseless limit reduces to smoothing") {
    PhantomSpec spec;
    spec.size = 16;
    spec.seed = 5;
    auto [mu_gt, lam_gt] = pour::generate_phantom(spec);

    DegradeParams dp;
    dp.count_fraction = 1.0;
    dp.counts_scale = 0.0;  // disable Poisson resampling
    dp.noise_a = 0.0;
    dp.crosstalk_c = 0.0;
    dp.seed = 6;
    auto [lam_mlaa, mu_mlaa] = pour::degrade(mu_gt, lam_gt, dp);

    Volume3D mu_smooth = pour::gaussian_smooth(mu_gt, dp.fwhm_mm);
    Volume3D lam_smooth = pour::gaussian_smooth(lam_gt, dp.fwhm_mm);
    for (std::size_t i = 0; i < mu_smooth.data.size(); ++i) {
        CHECK(mu_mlaa.data[i] == doctest::Approx(mu_smooth.data[i]).epsilon(1e-6));
        CHECK(lam_mlaa.data[i] == doctest::Approx(lam_smooth.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("lower count fractions give noisier attenuation maps") {
    PhantomSpec spec;
    spec.size = 16;
    spec.seed = 21;
    auto [mu_gt, lam_gt] = pour::generate_phantom(spec);

    // Monte-Carlo voxelwise variance over repeated draws at each fraction
    auto mc_variance = [&](double fraction) {
        const int draws = 50;
        const std::size_t n = mu_gt.data.size();
        std::vector<double> sum(n, 0.0), sq(n, 0.0);
        for (int d = 0; d < draws; ++d) {
            DegradeParams dp;
            dp.count_fraction = fraction;
            dp.seed = 9000 + std::uint64_t(d);
            auto [lam_mlaa, mu_mlaa] = pour::degrade(mu_gt, lam_gt, dp);
            for (std::size_t i = 0; i < n; ++i) {
                sum[i] += mu_mlaa.data[i];
                sq[i] += double(mu_mlaa.data[i]) * mu_mlaa.data[i];
            }
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double m = sum[i] / draws;
            acc += sq[i] / draws - m * m;
        }
        return acc / double(n);
    };
    const double v10 = mc_variance(0.10);
    const double v025 = mc_variance(0.025);
    CHECK(v025 > v10);

    // error against ground truth also orders by fraction with a fixed seed
    DegradeParams d1;
    d1.count_fraction = 0.10;
    d1.seed = 77;
    DegradeParams d2;
    d2.count_fraction = 0.025;
    d2.seed = 77;
    auto [l1, m1] = pour::degrade(mu_gt, lam_gt, d1);
    auto [l2, m2] = pour::degrade(mu_gt, lam_gt, d2);
    CHECK(pour::rmse(m2, mu_gt) > pour::rmse(m1, mu_gt));

    DegradeParams bad;
    bad.count_fraction = 0.0;
    CHECK_THROWS_AS(pour::degrade(mu_gt, lam_gt, bad), pour::ContractError);
}

TEST_CASE("atlas generation is disjoint from same-seed phantoms and ordered") {
    PhantomSpec spec;
    spec.size = 16;
    auto atlas = pour::generate_atlas(8, spec, 42);
    REQUIRE(atlas.entries.size() == 8);
    for (std::size_t i = 0; i < atlas.entries.size(); ++i) {
        CHECK(atlas.entries[i].volume.kind == pour::VolumeKind::mu_normalized);
        if (i > 0) CHECK(atlas.entries[i - 1].id < atlas.entries[i].id);
        CHECK(atlas.entries[i].id.size() == atlas.entries[0].id.size());  // zero padded
    }

    // no atlas entry duplicates a phantom drawn with the same root seed
    spec.seed = pour::substream_seed(42, "phantom");
    auto [mu, lam] = pour::generate_phantom(spec);
    Volume3D mu_n = pour::normalize_mu(mu);
    for (const auto& e : atlas.entries) CHECK(e.volume.data != mu_n.data);
}

TEST_CASE("body mask and erosion") {
    PhantomSpec spec;
    spec.size = 32;
    spec.seed = 10;
    auto [mu, lam] = pour::generate_phantom(spec);
    Volume3D mask = pour::body_mask(mu);
    double inside = 0;
    for (float v : mask.data) {
        CHECK((v == 0.0f || v == 1.0f));
        inside += v;
    }
    CHECK(inside > 0);
    CHECK(inside < double(mask.data.size()));

    Volume3D eroded = pour::erode_mask(mask, 2);
    double eroded_n = 0;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        eroded_n += eroded.data[i];
        // erosion only removes voxels
        CHECK(eroded.data[i] <= mask.data[i]);
    }
    CHECK(eroded_n > 0);
    CHECK(eroded_n < inside);
}
