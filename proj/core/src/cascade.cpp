#include "pour/cascade.hpp"

#include <algorithm>
#include <fstream>

namespace pour {

namespace {

// Temporarily drops gradient tracking on the parameters so forward passes
// build no graph and intermediates are freed as soon as they go out of scope.
class GradSuspend {
  public:
    explicit GradSuspend(const OurNet& net) {
        for (const auto& [name, t] : net.named) {
            auto node = t.node();
            saved_.emplace_back(node, node->requires_grad);
            node->requires_grad = false;
        }
    }
    ~GradSuspend() {
        for (auto& [node, was] : saved_) node->requires_grad = was;
    }
    GradSuspend(const GradSuspend&) = delete;
    GradSuspend& operator=(const GradSuspend&) = delete;

  private:
    std::vector<std::pair<std::shared_ptr<TensorNodeT<float>>, bool>> saved_;
};

Volume3D normalize_by_kind(Volume3D v, const std::filesystem::path& path, bool activity) {
    if (activity) {
        if (v.kind == VolumeKind::activity) return normalize_activity(v);
        if (v.kind == VolumeKind::activity_normalized) return v;
        throw ContractError("manifest: " + path.string() + " is not an activity volume");
    }
    if (v.kind == VolumeKind::mu) return normalize_mu(v);
    if (v.kind == VolumeKind::mu_normalized) return v;
    throw ContractError("manifest: " + path.string() + " is not an attenuation volume");
}

void copy_patch(const Volume3D& vol, const std::array<int, 3>& corner, int size, float* dst) {
    const std::int64_t nx = vol.dims[0], ny = vol.dims[1];
    for (int z = 0; z < size; ++z)
        for (int y = 0; y < size; ++y) {
            const float* src = vol.data.data() +
                               ((std::int64_t(corner[2]) + z) * ny + corner[1] + y) * nx +
                               corner[0];
            std::copy_n(src, size, dst);
            dst += size;
        }
}

// Edge-replicating pad of a single-channel field to target dims.
std::vector<float> pad_replicate(const std::vector<float>& src,
                                 std::array<std::uint32_t, 3> dims,
                                 std::array<std::uint32_t, 3> target) {
    const std::int64_t nx = dims[0], ny = dims[1], nz = dims[2];
    const std::int64_t tx = target[0], ty = target[1], tz = target[2];
    std::vector<float> out(std::size_t(tx * ty * tz));
    std::size_t o = 0;
    for (std::int64_t z = 0; z < tz; ++z) {
        const std::int64_t sz = std::min(z, nz - 1);
        for (std::int64_t y = 0; y < ty; ++y) {
            const std::int64_t sy = std::min(y, ny - 1);
            const float* row = src.data() + (sz * ny + sy) * nx;
            for (std::int64_t x = 0; x < tx; ++x) out[o++] = row[std::min(x, nx - 1)];
        }
    }
    return out;
}

Tensor stack_inputs(const std::vector<const Volume3D*>& channels,
                    std::array<std::uint32_t, 3> dims) {
    std::array<std::uint32_t, 3> padded = dims;
    for (auto& d : padded) d = (d + 3) / 4 * 4;
    const std::size_t vox = std::size_t(padded[0]) * padded[1] * padded[2];
    std::vector<float> data;
    data.reserve(vox * channels.size());
    for (const Volume3D* c : channels) {
        if (padded == dims) {
            data.insert(data.end(), c->data.begin(), c->data.end());
        } else {
            auto p = pad_replicate(c->data, dims, padded);
            data.insert(data.end(), p.begin(), p.end());
        }
    }
    return Tensor::from({1, int(channels.size()), int(padded[2]), int(padded[1]), int(padded[0])},
                        std::move(data));
}

}  // namespace

void TrainingConfig::validate() const {
    if (steps <= 0) throw ContractError("training: steps must be positive");
    if (!(lr > 0.0)) throw ContractError("training: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ContractError("training: betas must lie in [0, 1)");
    if (batch_size <= 0) throw ContractError("training: batch_size must be positive");
    if (patches_per_volume <= 0)
        throw ContractError("training: patches_per_volume must be positive");
    if (patch_size <= 0 || patch_size % 4 != 0)
        throw ContractError("training: patch_size must be positive and divisible by 4");
    if (stop_loss_ratio < 0.0) throw ContractError("training: stop_loss_ratio must be >= 0");
}

void CascadeConfig::validate() const {
    if (n_cascades < 1) throw ContractError("cascade: n_cascades must be >= 1");
    if (match_presample != 1 && match_presample != 2)
        throw ContractError("cascade: match_presample must be 1 or 2");
    ournet.validate();
    demons.validate();
    training.validate();
}

std::vector<std::size_t> TrainingManifest::indices_of(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cases.size(); ++i)
        if (cases[i].split == split) out.push_back(i);
    return out;
}

TrainingManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path.string());
    const std::filesystem::path base = path.parent_path();
    TrainingManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4)
            throw FormatError("manifest: " + path.string() + ":" + std::to_string(lineno) +
                              ": expected 4 tab-separated fields, got " +
                              std::to_string(fields.size()));
        CaseRecord rec;
        auto resolve = [&](const std::string& p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        rec.lambda_path = resolve(fields[0]);
        rec.mu_mlaa_path = resolve(fields[1]);
        rec.mu_gt_path = resolve(fields[2]);
        rec.split = fields[3];
        if (rec.split != "train" && rec.split != "val" && rec.split != "test")
            throw FormatError("manifest: " + path.string() + ":" + std::to_string(lineno) +
                              ": unknown split '" + rec.split + "'");
        m.cases.push_back(std::move(rec));
    }
    return m;
}

void write_manifest(const TrainingManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("manifest: cannot open " + path.string() + " for writing");
    for (const auto& c : manifest.cases)
        out << c.lambda_path.string() << '\t' << c.mu_mlaa_path.string() << '\t'
            << c.mu_gt_path.string() << '\t' << c.split << '\n';
    if (!out) throw IoError("manifest: short write to " + path.string());
}

LoadedCase load_case(const CaseRecord& rec) {
    LoadedCase c;
    c.lambda = normalize_by_kind(read_volume(rec.lambda_path), rec.lambda_path, true);
    c.mu_mlaa = normalize_by_kind(read_volume(rec.mu_mlaa_path), rec.mu_mlaa_path, false);
    c.mu_gt = normalize_by_kind(read_volume(rec.mu_gt_path), rec.mu_gt_path, false);
    if (c.lambda.dims != c.mu_mlaa.dims || c.lambda.dims != c.mu_gt.dims)
        throw ContractError("manifest: case volumes have mismatched dims (" +
                            rec.lambda_path.string() + ")");
    return c;
}

std::vector<std::array<int, 3>> patch_sampler(std::array<std::uint32_t, 3> dims, int n, int size,
                                              std::uint64_t seed) {
    if (n <= 0) throw ContractError("patch_sampler: n must be positive");
    for (int a = 0; a < 3; ++a)
        if (std::uint32_t(size) > dims[std::size_t(a)])
            throw ContractError("patch_sampler: patch size " + std::to_string(size) +
                                " exceeds volume extent " +
                                std::to_string(dims[std::size_t(a)]));
    Rng rng(seed);
    std::vector<std::array<int, 3>> corners;
    corners.resize(std::size_t(n));
    for (auto& c : corners)
        for (int a = 0; a < 3; ++a)
            c[std::size_t(a)] = int(rng.uniform_index(dims[std::size_t(a)] - std::uint32_t(size) + 1));
    return corners;
}

void write_training_log(const std::vector<float>& losses, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("training log: cannot open " + path.string() + " for writing");
    out << "step\tloss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << '\t' << losses[i] << '\n';
    if (!out) throw IoError("training log: short write to " + path.string());
}

TrainResult train_stage(int stage, const std::vector<LoadedCase>& train_cases,
                        const std::vector<Volume3D>* priors, const CascadeConfig& cfg) {
    cfg.validate();
    if (stage < 1) throw ContractError("train_stage: stage must be >= 1");
    if (train_cases.empty()) throw ContractError("train_stage: no training cases");
    if (stage >= 2) {
        if (!priors || priors->size() != train_cases.size())
            throw ContractError("train_stage: stage " + std::to_string(stage) +
                                " requires one prior volume per training case");
        for (std::size_t i = 0; i < priors->size(); ++i)
            if ((*priors)[i].dims != train_cases[i].lambda.dims)
                throw ContractError("train_stage: prior dims mismatch for case " +
                                    std::to_string(i));
    } else if (priors) {
        throw ContractError("train_stage: stage 1 takes no priors");
    }

    const TrainingConfig& tc = cfg.training;
    OurNetConfig ocfg = cfg.ournet;
    ocfg.in_channels = stage == 1 ? 2 : 3;
    TrainResult result{
        make_ournet<float>(ocfg, substream_seed(tc.seed, "stage" + std::to_string(stage))), {}};
    OurNet& net = result.net;
    const std::vector<Tensor> params = param_tensors(net);

    // Fixed patch pool per case, shuffled across epochs.
    struct PoolEntry {
        std::uint32_t case_idx;
        std::array<int, 3> corner;
    };
    std::vector<PoolEntry> pool;
    const std::uint64_t patch_root = substream_seed(tc.seed, "patches");
    for (std::size_t c = 0; c < train_cases.size(); ++c) {
        const auto corners = patch_sampler(
            train_cases[c].lambda.dims, tc.patches_per_volume, tc.patch_size,
            substream_seed(patch_root, std::to_string(stage) + "." + std::to_string(c)));
        for (const auto& corner : corners) pool.push_back({std::uint32_t(c), corner});
    }

    Rng order_rng(substream_seed(tc.seed, "order"));
    AdamState opt;
    opt.lr = float(tc.lr);
    opt.beta1 = float(tc.beta1);
    opt.beta2 = float(tc.beta2);

    const int p = tc.patch_size;
    const int chans = ocfg.in_channels;
    const std::size_t patch_vox = std::size_t(p) * p * p;
    std::size_t cursor = pool.size();  // forces an initial shuffle
    float initial_loss = -1.0f;

    for (int step = 0; step < tc.steps; ++step) {
        std::vector<float> in_data(std::size_t(tc.batch_size) * chans * patch_vox);
        std::vector<float> gt_data(std::size_t(tc.batch_size) * patch_vox);
        for (int b = 0; b < tc.batch_size; ++b) {
            if (cursor >= pool.size()) {
                for (std::size_t i = pool.size(); i > 1; --i)
                    std::swap(pool[i - 1], pool[std::size_t(order_rng.uniform_index(i))]);
                cursor = 0;
            }
            const PoolEntry& e = pool[cursor++];
            const LoadedCase& cs = train_cases[e.case_idx];
            float* dst = in_data.data() + std::size_t(b) * chans * patch_vox;
            copy_patch(cs.lambda, e.corner, p, dst);
            copy_patch(cs.mu_mlaa, e.corner, p, dst + patch_vox);
            if (chans == 3) copy_patch((*priors)[e.case_idx], e.corner, p, dst + 2 * patch_vox);
            copy_patch(cs.mu_gt, e.corner, p, gt_data.data() + std::size_t(b) * patch_vox);
        }
        Tensor input = Tensor::from({tc.batch_size, chans, p, p, p}, std::move(in_data));
        Tensor target = Tensor::from({tc.batch_size, 1, p, p, p}, std::move(gt_data));

        for (const auto& t : params) t.node()->grad.assign(t.node()->value.size(), 0.0f);
        Tensor loss = total_loss(ournet_forward(input, net), target);
        backward(loss);
        adam_step(opt, params);

        const float lv = loss.item();
        result.losses.push_back(lv);
        if (initial_loss < 0.0f) initial_loss = lv;
        if (tc.stop_loss_ratio > 0.0 && lv < float(tc.stop_loss_ratio) * initial_loss) break;
    }
    return result;
}

Volume3D infer_volume(const Volume3D& lambda, const Volume3D& mu_mlaa, const Volume3D* prior,
                      const OurNet& net) {
    if (lambda.dims != mu_mlaa.dims || (prior && prior->dims != lambda.dims))
        throw ShapeError("infer_volume: input volumes have mismatched dims");
    const int want = prior ? 3 : 2;
    if (net.cfg.in_channels != want)
        throw ShapeError("infer_volume: network expects " +
                         std::to_string(net.cfg.in_channels) + " channels, inputs provide " +
                         std::to_string(want));
    std::vector<const Volume3D*> channels{&lambda, &mu_mlaa};
    if (prior) channels.push_back(prior);

    GradSuspend guard(net);
    Tensor input = stack_inputs(channels, lambda.dims);
    Tensor x_f = ournet_forward(input, net).x_f;

    Volume3D out = Volume3D::zeros(lambda.dims, VolumeKind::mu_normalized);
    out.spacing = mu_mlaa.spacing;
    const std::int64_t nx = lambda.dims[0], ny = lambda.dims[1], nz = lambda.dims[2];
    const Shape& os = x_f.shape();
    const std::int64_t px = os[4], py = os[3];
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            std::copy_n(x_f.value().data() + (z * py + y) * px, nx,
                        out.data.data() + (z * ny + y) * nx);
    return out;
}

Volume3D infer_volume_patched(const Volume3D& lambda, const Volume3D& mu_mlaa,
                              const Volume3D* prior, const OurNet& net, int patch, int stride) {
    if (patch <= 0 || patch % 4 != 0)
        throw ContractError("infer_volume_patched: patch must be positive and divisible by 4");
    if (stride <= 0 || stride > patch)
        throw ContractError("infer_volume_patched: stride must lie in (0, patch]");
    if (lambda.dims != mu_mlaa.dims || (prior && prior->dims != lambda.dims))
        throw ShapeError("infer_volume_patched: input volumes have mismatched dims");
    for (int a = 0; a < 3; ++a)
        if (std::uint32_t(patch) > lambda.dims[std::size_t(a)])
            throw ContractError("infer_volume_patched: patch exceeds volume extent");

    // Corner grid: stride steps plus a final clamped position per axis.
    auto axis_corners = [&](std::uint32_t n) {
        std::vector<int> cs;
        for (int c = 0;; c += stride) {
            if (c + patch >= int(n)) {
                cs.push_back(int(n) - patch);
                break;
            }
            cs.push_back(c);
        }
        return cs;
    };
    const auto cx = axis_corners(lambda.dims[0]);
    const auto cy = axis_corners(lambda.dims[1]);
    const auto cz = axis_corners(lambda.dims[2]);

    std::vector<const Volume3D*> channels{&lambda, &mu_mlaa};
    if (prior) channels.push_back(prior);
    if (net.cfg.in_channels != int(channels.size()))
        throw ShapeError("infer_volume_patched: channel count mismatch");

    GradSuspend guard(net);
    const std::int64_t nx = lambda.dims[0], ny = lambda.dims[1];
    std::vector<double> acc(lambda.data.size(), 0.0);
    std::vector<double> weight(lambda.data.size(), 0.0);
    const std::size_t patch_vox = std::size_t(patch) * patch * patch;
    for (int zc : cz)
        for (int yc : cy)
            for (int xc : cx) {
                std::vector<float> in_data(channels.size() * patch_vox);
                for (std::size_t c = 0; c < channels.size(); ++c)
                    copy_patch(*channels[c], {xc, yc, zc}, patch,
                               in_data.data() + c * patch_vox);
                Tensor input = Tensor::from({1, int(channels.size()), patch, patch, patch},
                                            std::move(in_data));
                Tensor x_f = ournet_forward(input, net).x_f;
                const float* src = x_f.value().data();
                for (int z = 0; z < patch; ++z)
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x) {
                            const std::size_t o = std::size_t(
                                ((std::int64_t(zc) + z) * ny + yc + y) * nx + xc + x);
                            acc[o] += double(*src++);
                            weight[o] += 1.0;
                        }
            }
    Volume3D out = Volume3D::zeros(lambda.dims, VolumeKind::mu_normalized);
    out.spacing = mu_mlaa.spacing;
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = float(acc[i] / weight[i]);
    return out;
}

PourResult run_pour(const Volume3D& lambda, const Volume3D& mu_mlaa,
                    const std::vector<const OurNet*>& stages, const AtlasDataset& atlas,
                    const CascadeConfig& cfg) {
    cfg.validate();
    if (int(stages.size()) != cfg.n_cascades)
        throw ContractError("run_pour: expected " + std::to_string(cfg.n_cascades) +
                            " stage networks, got " + std::to_string(stages.size()));
    for (int k = 1; k <= cfg.n_cascades; ++k) {
        const int want = k == 1 ? 2 : 3;
        if (stages[std::size_t(k - 1)]->cfg.in_channels != want)
            throw ContractError("run_pour: stage " + std::to_string(k) + " network expects " +
                                std::to_string(stages[std::size_t(k - 1)]->cfg.in_channels) +
                                " channels, cascade provides " + std::to_string(want));
    }

    PourResult res;
    Volume3D x = infer_volume(lambda, mu_mlaa, nullptr, *stages[0]);
    res.stage_outputs.push_back(x);
    for (int k = 2; k <= cfg.n_cascades; ++k) {
        PriorResult prior = generate_prior(x, atlas, cfg.demons, cfg.match_presample);
        res.reports.push_back(prior.report);
        x = infer_volume(lambda, mu_mlaa, &prior.prior, *stages[std::size_t(k - 1)]);
        res.stage_outputs.push_back(x);
    }
    res.final = res.stage_outputs.back();
    return res;
}

}  // namespace pour
