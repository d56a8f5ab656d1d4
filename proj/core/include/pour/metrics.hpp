#pragma once

#include <vector>

#include "pour/volume.hpp"

namespace pour {

// Volumetric quality metrics. PSNR's peak and SSIM's dynamic range both use
// the reference's max-min intensity range, so pred/ref order matters for
// everything except rmse.

struct MetricReport {
    double psnr_db = 0.0;  // +infinity when rmse is exactly 0
    double ssim = 0.0;
    double rmse = 0.0;
    std::int64_t n_voxels = 0;
};

double rmse(const Volume3D& pred, const Volume3D& ref);

// 20*log10(range(ref)/rmse). Constant reference volumes have no usable peak
// and are rejected.
double psnr(const Volume3D& pred, const Volume3D& ref);

// Mean over all fully-inside cubic sliding windows with uniform weights.
double ssim(const Volume3D& pred, const Volume3D& ref, int window = 7, double k1 = 0.01,
            double k2 = 0.03);

// mask (optional): voxels with value > 0.5 participate in rmse/psnr; SSIM is
// always computed over the full grid (windowed statistics do not restrict).
MetricReport evaluate_case(const Volume3D& pred, const Volume3D& ref,
                           const Volume3D* mask = nullptr, int ssim_window = 7);

struct MetricStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single case
};

struct MetricAggregate {
    MetricStats psnr_db, ssim, rmse;
    std::size_t n_cases = 0;
};

MetricAggregate aggregate(const std::vector<MetricReport>& reports);

}  // namespace pour
