#pragma once

#include "pour/ppgm.hpp"
#include "pour/rng.hpp"
#include "pour/volume.hpp"

namespace pour {

// Synthetic torso phantoms: a body ellipsoid containing two lungs, a spine
// rod, a few rib rings and optional hot lesions. Geometry is drawn per seed,
// composited back-to-front as piecewise-constant tissue, then softened with a
// 1-voxel Gaussian so edges are not perfectly sharp.

enum class TissueLabel : std::uint8_t {
    background = 0,
    soft = 1,
    lung = 2,
    spine = 3,
    rib = 4,
    lesion = 5,
};

struct PhantomSpec {
    int size = 32;  // cubic extent, divisible by 4
    std::uint64_t seed = 0;

    // linear attenuation at 511 keV, cm^-1
    float mu_soft = 0.096f;
    float mu_lung = 0.030f;
    float mu_bone_min = 0.130f;
    float mu_bone_max = 0.150f;

    // relative tracer uptake
    float act_soft = 1.0f;
    float act_lung = 0.30f;
    float act_bone = 0.60f;
    float act_lesion = 4.0f;

    int lesions_min = 0;
    int lesions_max = 2;

    float edge_sigma_vox = 1.0f;

    void validate() const;
};

struct PhantomVolumes {
    Volume3D mu_gt;      // kind mu
    Volume3D lambda_gt;  // kind activity
    std::vector<std::uint8_t> labels;  // pre-softening tissue labels, x-fastest
};

PhantomVolumes generate_phantom_labeled(const PhantomSpec& spec);

inline std::pair<Volume3D, Volume3D> generate_phantom(const PhantomSpec& spec) {
    auto v = generate_phantom_labeled(spec);
    return {std::move(v.mu_gt), std::move(v.lambda_gt)};
}

struct DegradeParams {
    double count_fraction = 0.10;  // in (0, 1]
    double counts_scale = 2000.0;  // expected events per unit activity at full
                                   // counts; <= 0 disables count resampling
    double noise_a = 0.010;        // attenuation noise amplitude at full counts, cm^-1
    double crosstalk_c = 0.005;    // activity-structure leakage into attenuation, cm^-1
    double noise_sigma_vox = 1.5;  // spatial correlation of the attenuation noise
    double fwhm_mm = 5.0;          // resolution loss applied to both outputs
    std::uint64_t seed = 0;

    void validate() const;
};

// Low-count degradation: activity is count-resampled (Poisson) and rescaled to
// its original mean; attenuation picks up correlated noise growing as
// 1/sqrt(count_fraction) plus an activity-correlated crosstalk term; both are
// blurred to scanner resolution. Stands in for a low-count MLAA
// reconstruction pair — it mimics the noise/artifact behavior, not the
// algorithm.
std::pair<Volume3D, Volume3D> degrade(const Volume3D& mu_gt, const Volume3D& lambda_gt,
                                      const DegradeParams& params);

// n anatomically similar but independent normalized attenuation volumes; ids
// are zero-padded decimal strings so lexicographic order is numeric order.
AtlasDataset generate_atlas(int n, const PhantomSpec& ranges, std::uint64_t seed);

// Voxels with attenuation above the threshold (default: half the lung value,
// catching all tissue); mask volumes store 0/1.
Volume3D body_mask(const Volume3D& mu, float threshold = 0.015f);

// Removes voxels within `radius` (Chebyshev) of any zero voxel.
Volume3D erode_mask(const Volume3D& mask, int radius);

}  // namespace pour
