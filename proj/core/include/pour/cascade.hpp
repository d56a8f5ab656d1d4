#pragma once

#include <filesystem>

#include "pour/adam.hpp"
#include "pour/checkpoint.hpp"
#include "pour/ournet.hpp"
#include "pour/ppgm.hpp"

namespace pour {

// Cascade orchestration: per-stage training on random co-registered patches,
// whole-volume inference, and the alternation of network stages with
// population-prior generation. Stage 1 consumes (activity, attenuation)
// estimates; stages >= 2 add the registered prior as a third channel.

struct TrainingConfig {
    int steps = 400;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 4;
    int patches_per_volume = 32;
    int patch_size = 16;  // divisible by 4
    double stop_loss_ratio = 0.0;  // > 0: stop once loss < ratio * initial loss
    std::uint64_t seed = 0;

    void validate() const;
};

struct CascadeConfig {
    int n_cascades = 2;
    OurNetConfig ournet;  // template; in_channels is derived per stage
    DemonsConfig demons;
    TrainingConfig training;
    int match_presample = 1;

    void validate() const;
};

struct CaseRecord {
    std::filesystem::path lambda_path;   // degraded activity
    std::filesystem::path mu_mlaa_path;  // degraded attenuation
    std::filesystem::path mu_gt_path;    // reference attenuation
    std::string split;                   // train | val | test
};

struct TrainingManifest {
    std::vector<CaseRecord> cases;

    std::vector<std::size_t> indices_of(const std::string& split) const;
};

// Tab-separated, one case per line: lambda, mu_mlaa, mu_gt, split. Relative
// paths resolve against the manifest's directory.
TrainingManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const TrainingManifest& manifest, const std::filesystem::path& path);

struct LoadedCase {
    Volume3D lambda, mu_mlaa, mu_gt;  // all in normalized units
};

// Reads and normalizes the three volumes; raw kinds are normalized, already
// normalized kinds pass through.
LoadedCase load_case(const CaseRecord& rec);

// n fully-inside corner positions, uniform per axis, deterministic per seed.
std::vector<std::array<int, 3>> patch_sampler(std::array<std::uint32_t, 3> dims, int n, int size,
                                              std::uint64_t seed);

struct TrainResult {
    OurNet net;
    std::vector<float> losses;  // one entry per optimizer step
};

void write_training_log(const std::vector<float>& losses, const std::filesystem::path& path);

// Trains a fresh stage network. priors: one volume per training case, required
// for stage >= 2 (outputs of the frozen previous stage passed through prior
// generation), must be null for stage 1.
TrainResult train_stage(int stage, const std::vector<LoadedCase>& train_cases,
                        const std::vector<Volume3D>* priors, const CascadeConfig& cfg);

// Whole-volume forward pass. Extents not divisible by 4 are padded with edge
// replication and cropped back. Gradient tracking is suspended for the call.
Volume3D infer_volume(const Volume3D& lambda, const Volume3D& mu_mlaa, const Volume3D* prior,
                      const OurNet& net);

// Sliding-patch variant with uniform overlap averaging; patch and stride in
// voxels, patch divisible by 4, 0 < stride <= patch.
Volume3D infer_volume_patched(const Volume3D& lambda, const Volume3D& mu_mlaa,
                              const Volume3D* prior, const OurNet& net, int patch, int stride);

struct PourResult {
    Volume3D final;                      // last stage's estimate
    std::vector<Volume3D> stage_outputs;  // one per stage
    std::vector<PpgmReport> reports;      // one per prior generation (n_cascades - 1)
};

// Runs the full cascade on one case: infer, generate prior, infer again, ...
// stages.size() must equal cfg.n_cascades and channel counts must line up.
PourResult run_pour(const Volume3D& lambda, const Volume3D& mu_mlaa,
                    const std::vector<const OurNet*>& stages, const AtlasDataset& atlas,
                    const CascadeConfig& cfg);

}  // namespace pour
