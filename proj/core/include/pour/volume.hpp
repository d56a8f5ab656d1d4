#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pour/error.hpp"

namespace pour {

// What the voxel values of a volume mean. Stored in the VVOL1 header so that
// files are self-describing and the normalization state is never ambiguous.
enum class VolumeKind : std::uint8_t {
    activity = 0,             // tracer activity, arbitrary units
    mu = 1,                   // linear attenuation, cm^-1
    mu_normalized = 2,        // mu divided by the skull-bone coefficient
    activity_normalized = 3,  // tanh(activity / mean / sigma)
};

const char* kind_name(VolumeKind kind);

// Skull-bone linear attenuation coefficient at 511 keV; the normalizer that
// maps mu volumes to roughly [0, 1].
inline constexpr float kMuNormalizer = 0.15f;

// FWHM of a Gaussian is 2.3548 sigma.
inline constexpr double kFwhmPerSigma = 2.3548;

// Dense scalar 3-D grid. Voxels are stored x-fastest, then y, then z.
// Volumes are immutable by convention: operations return new volumes.
struct Volume3D {
    std::array<std::uint32_t, 3> dims{0, 0, 0};    // nx, ny, nz
    std::array<float, 3> spacing{2.0f, 2.0f, 2.0f};  // mm per voxel
    VolumeKind kind = VolumeKind::mu;
    std::vector<float> data;

    Volume3D() = default;
    Volume3D(std::array<std::uint32_t, 3> d, std::array<float, 3> sp, VolumeKind k,
             std::vector<float> values);

    static Volume3D zeros(std::array<std::uint32_t, 3> dims, std::array<float, 3> spacing,
                          VolumeKind kind);
    static Volume3D zeros(std::array<std::uint32_t, 3> dims, VolumeKind kind) {
        return zeros(dims, {2.0f, 2.0f, 2.0f}, kind);
    }

    std::size_t size() const {
        return std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
    }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return std::size_t(x) + std::size_t(dims[0]) * (std::size_t(y) + std::size_t(dims[1]) * z);
    }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return data[index(x, y, z)];
    }
    float& at(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
        return data[index(x, y, z)];
    }

    // Throws if any structural invariant is violated (dims/data mismatch,
    // non-positive spacing, non-finite voxel).
    void validate() const;

    Volume3D with_data(std::vector<float> values, VolumeKind new_kind) const;
};

double volume_mean(const Volume3D& vol);  // 64-bit accumulation
double volume_min(const Volume3D& vol);
double volume_max(const Volume3D& vol);

// VVOL1 container, little-endian, 32-byte header:
//   0..4   magic "VVOL1"
//   5      version (1)
//   6      kind tag
//   7      reserved (0)
//   8..19  u32 nx, ny, nz
//   20..31 f32 sx, sy, sz  [mm]
//   32..   f32 voxels, x fastest, then y, then z
Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const Volume3D& vol, const std::filesystem::path& path);

// Activity normalization: out = tanh(v / mean(v) / sigma_scale). Invariant
// under positive rescaling of the input. Requires a strictly positive mean.
Volume3D normalize_activity(const Volume3D& vol, double sigma_scale = 10.0);

// Mu normalization: divide / multiply by the skull-bone coefficient 0.15.
Volume3D normalize_mu(const Volume3D& vol);
Volume3D denormalize_mu(const Volume3D& vol);

// Separable Gaussian smoothing with sigma(axis) = fwhm_mm / (2.3548 *
// spacing(axis)). Kernel truncated at 4 sigma; near the borders the weights
// of in-bounds taps are renormalized, so constants are preserved exactly.
Volume3D gaussian_smooth(const Volume3D& vol, double fwhm_mm);

// Same smoothing core with sigma given directly in voxels; also reusable on
// raw buffers (deformation-field components, noise fields).
Volume3D gaussian_smooth_sigma_vox(const Volume3D& vol, std::array<double, 3> sigma_vox);
void gaussian_blur_inplace(std::vector<float>& values, std::array<std::uint32_t, 3> dims,
                           std::array<double, 3> sigma_vox);
inline void gaussian_blur_inplace(std::vector<float>& values, std::array<std::uint32_t, 3> dims,
                                  double sigma_vox) {
    gaussian_blur_inplace(values, dims, {sigma_vox, sigma_vox, sigma_vox});
}

// Trilinear resize to new dims (block-center coordinate mapping, clamped at
// the borders). Used to bring a query volume onto an atlas grid.
Volume3D resize_trilinear(const Volume3D& vol, std::array<std::uint32_t, 3> new_dims);

}  // namespace pour
