#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pour/volume.hpp"

namespace pour {

// Population-prior generation: exhaustive atlas matching by MSE followed by
// diffeomorphic demons registration of the matched entry onto the query.

struct AtlasEntry {
    std::string id;
    Volume3D volume;  // normalized attenuation
};

struct AtlasDataset {
    std::vector<AtlasEntry> entries;  // ordered by id

    void validate() const;
};

// Reads every *.vvol in the directory; id = file stem, lexicographic order.
// Raw attenuation volumes are normalized on load.
AtlasDataset load_atlas_dir(const std::filesystem::path& dir);

// Exhaustive scan; the query is resampled to atlas dims when they differ.
// Ties break to the lowest index. presample 2 halves the comparison grid
// (both operands) to cut search cost; the scan stays exhaustive.
std::pair<std::size_t, double> atlas_match(const Volume3D& x_f, const AtlasDataset& atlas,
                                           int presample = 1);

// Per-voxel displacement in voxel units, stored as three scalar fields.
// output(x) = moving(x + u(x)).
struct DeformationField {
    std::array<std::uint32_t, 3> dims{0, 0, 0};
    std::array<std::vector<float>, 3> comp;  // ux, uy, uz

    static DeformationField zeros(std::array<std::uint32_t, 3> dims);
    std::size_t voxels() const {
        return std::size_t(dims[0]) * dims[1] * dims[2];
    }
    void validate() const;
};

Volume3D warp(const Volume3D& moving, const DeformationField& field);

// Fraction of interior voxels where det(I + grad u) > 0; 1.0 means the map is
// locally invertible everywhere it is checked.
double jacobian_positive_fraction(const DeformationField& field);

struct DemonsConfig {
    int pyramid_levels = 3;
    std::vector<int> iterations_per_level{60, 40, 20};  // coarse to fine
    double fluid_sigma = 1.0;      // smoothing of each velocity update, voxels
    double diffusion_sigma = 1.5;  // smoothing of the accumulated field, voxels
    double sigma_x = 1.0;          // force normalization
    double convergence_tol = 1e-6;  // relative MSE change for early level exit
    int exp_squarings = 4;          // scaling-and-squaring steps

    void validate() const;
};

// Multi-resolution diffeomorphic demons. Returns the displacement field and
// the warped moving volume; the result never has higher MSE against fixed
// than the unregistered moving volume (best full-resolution iterate wins,
// including the zero field).
std::pair<DeformationField, Volume3D> demons_register(const Volume3D& fixed,
                                                      const Volume3D& moving,
                                                      const DemonsConfig& cfg);

struct PpgmReport {
    std::size_t matched_index = 0;
    double matched_mse = 0.0;     // query vs. matched entry, query grid
    double registered_mse = 0.0;  // query vs. registered entry
    double matched_psnr = 0.0;    // both PSNRs measured against the query
    double registered_psnr = 0.0;

    std::string to_text() const;  // flat key=value lines
};

struct PriorResult {
    Volume3D prior;
    std::size_t matched_index = 0;
    PpgmReport report;
};

// Match, then register the matched entry to x_f; the warped entry is the
// population prior for the next cascade stage.
PriorResult generate_prior(const Volume3D& x_f, const AtlasDataset& atlas,
                           const DemonsConfig& cfg, int match_presample = 1);

}  // namespace pour
