#include <doctest.h>

#include "pour/metrics.hpp"
#include "support/oracles.hpp"

using pour::Volume3D;
using pour::VolumeKind;

TEST_CASE("metrics match the straight-line oracles on random volumes") {
    double max_rmse_err = 0.0, max_psnr_err = 0.0, max_ssim_err = 0.0;
    for (int i = 0; i < 25; ++i) {
        Volume3D a = testsup::random_volume({12, 12, 12}, 1000 + i);
        Volume3D b = testsup::random_volume({12, 12, 12}, 2000 + i);
        max_rmse_err = std::max(max_rmse_err,
                                std::fabs(pour::rmse(a, b) - testsup::oracle_rmse(a, b)));
        max_psnr_err = std::max(max_psnr_err,
                                std::fabs(pour::psnr(a, b) - testsup::oracle_psnr(a, b)));
        max_ssim_err = std::max(max_ssim_err,
                                std::fabs(pour::ssim(a, b) - testsup::oracle_ssim(a, b)));
    }
    CHECK(max_rmse_err <= 1e-9);
    CHECK(max_psnr_err <= 1e-9);
    CHECK(max_ssim_err <= 1e-9);
}

TEST_CASE("metric identities and edge cases") {
    Volume3D a = testsup::random_volume({10, 10, 10}, 3);
    CHECK(pour::rmse(a, a) == 0.0);
    CHECK(pour::psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK(pour::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    // rmse is symmetric; psnr/ssim normalize by the reference range
    Volume3D b = testsup::random_volume({10, 10, 10}, 4, VolumeKind::mu_normalized, 0.0f, 2.0f);
    CHECK(pour::rmse(a, b) == doctest::Approx(pour::rmse(b, a)).epsilon(1e-15));
    CHECK(pour::psnr(a, b) != doctest::Approx(pour::psnr(b, a)).epsilon(1e-6));

    Volume3D flat = Volume3D::zeros({10, 10, 10}, VolumeKind::mu_normalized);
    CHECK_THROWS_AS(pour::psnr(a, flat), pour::ContractError);

    Volume3D small = Volume3D::zeros({4, 4, 4}, VolumeKind::mu_normalized);
    CHECK_THROWS_AS(pour::ssim(small, small, 7), pour::ContractError);

    Volume3D other = Volume3D::zeros({9, 9, 9}, VolumeKind::mu_normalized);
    CHECK_THROWS_AS(pour::rmse(a, other), pour::ShapeError);
}

TEST_CASE("psnr is invariant under joint affine rescaling") {
    Volume3D a = testsup::random_volume({8, 8, 8}, 5);
    Volume3D b = testsup::random_volume({8, 8, 8}, 6);
    const double p0 = pour::psnr(a, b);
    Volume3D a2 = a, b2 = b;
    for (auto& x : a2.data) x = 3.0f * x + 1.0f;
    for (auto& x : b2.data) x = 3.0f * x + 1.0f;
    CHECK(pour::psnr(a2, b2) == doctest::Approx(p0).epsilon(1e-5));
}

TEST_CASE("ssim drops under noise and is bounded") {
    Volume3D ref = testsup::random_volume({10, 10, 10}, 7);
    pour::gaussian_blur_inplace(ref.data, ref.dims, 1.5);  // smooth structure
    Volume3D noisy = ref;
    pour::Rng rng(8);
    for (auto& x : noisy.data) x += float(rng.normal(0.0, 0.1));
    const double s = pour::ssim(noisy, ref);
    CHECK(s < 1.0);
    CHECK(s > -1.0);
    Volume3D noisier = ref;
    pour::Rng rng2(9);
    for (auto& x : noisier.data) x += float(rng2.normal(0.0, 0.4));
    CHECK(pour::ssim(noisier, ref) < s);
}

TEST_CASE("masked evaluation restricts rmse and psnr to selected voxels") {
    Volume3D pred = testsup::random_volume({8, 8, 8}, 10);
    Volume3D ref = testsup::random_volume({8, 8, 8}, 11);
    Volume3D mask = Volume3D::zeros({8, 8, 8}, VolumeKind::mu_normalized);
    for (std::size_t i = 0; i < mask.data.size(); i += 2) mask.data[i] = 1.0f;

    auto rep = pour::evaluate_case(pred, ref, &mask, 7);
    CHECK(rep.n_voxels == std::int64_t(mask.data.size() / 2));

    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (!(mask.data[i] > 0.5f)) continue;
        const double d = double(pred.data[i]) - double(ref.data[i]);
        acc += d * d;
        ++n;
    }
    CHECK(rep.rmse == doctest::Approx(std::sqrt(acc / double(n))).epsilon(1e-12));

    Volume3D empty_mask = Volume3D::zeros({8, 8, 8}, VolumeKind::mu_normalized);
    CHECK_THROWS_AS(pour::evaluate_case(pred, ref, &empty_mask, 7), pour::ContractError);
}

TEST_CASE("aggregate computes mean and sample standard deviation") {
    std::vector<pour::MetricReport> reports(3);
    reports[0].psnr_db = 10.0;
    reports[1].psnr_db = 20.0;
    reports[2].psnr_db = 30.0;
    auto agg = pour::aggregate(reports);
    CHECK(agg.n_cases == 3);
    CHECK(agg.psnr_db.mean == doctest::Approx(20.0));
    CHECK(agg.psnr_db.stddev == doctest::Approx(10.0));
    CHECK_THROWS_AS(pour::aggregate({}), pour::ContractError);

    std::vector<pour::MetricReport> one(1);
    one[0].rmse = 0.5;
    CHECK(pour::aggregate(one).rmse.stddev == 0.0);
}
