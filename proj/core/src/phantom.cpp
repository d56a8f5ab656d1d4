#include "pour/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "pour/error.hpp"

namespace pour {

namespace {

struct Ellipsoid {
    double cx, cy, cz;  // center, normalized [-1,1] coordinates
    double ax, ay, az;  // semi-axes

    bool contains(double x, double y, double z) const {
        const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
        return u * u + v * v + w * w <= 1.0;
    }
};

struct RibRing {
    double z;       // slab center
    double half_w;  // slab half-width
    double scale;   // ring radius relative to the body cross-section
    double band;    // radial thickness of the ring
    double gap;     // angular half-gap at the sternum, radians
};

struct Geometry {
    Ellipsoid body, lung_l, lung_r;
    double spine_y, spine_r;
    std::vector<RibRing> ribs;
    std::vector<Ellipsoid> lesions;
    float mu_bone;
};

Geometry draw_geometry(const PhantomSpec& spec) {
    Rng rng(substream_seed(spec.seed, "phantom"));
    Geometry g;
    g.body = {0.0, 0.0, 0.0, rng.uniform(0.74, 0.86), rng.uniform(0.58, 0.72), 0.95};
    const double lung_z = rng.uniform(0.15, 0.3);
    const double lung_ax = rng.uniform(0.22, 0.28);
    const double lung_ay = rng.uniform(0.26, 0.34);
    const double lung_az = rng.uniform(0.3, 0.4);
    const double lung_dx = rng.uniform(0.3, 0.4) * g.body.ax;
    g.lung_l = {-lung_dx, -0.05, lung_z, lung_ax, lung_ay, lung_az};
    g.lung_r = {lung_dx, -0.05, lung_z, lung_ax * rng.uniform(0.9, 1.1),
                lung_ay * rng.uniform(0.9, 1.1), lung_az};
    g.spine_y = rng.uniform(0.4, 0.5) * g.body.ay;
    g.spine_r = rng.uniform(0.09, 0.12);
    const int n_ribs = 2 + int(rng.uniform_index(3));  // 2..4
    for (int i = 0; i < n_ribs; ++i) {
        RibRing r;
        r.z = -0.45 + 1.0 * (i + 0.5) / n_ribs + rng.uniform(-0.04, 0.04);
        r.half_w = rng.uniform(0.035, 0.055);
        r.scale = rng.uniform(0.86, 0.93);
        r.band = rng.uniform(0.05, 0.08);
        r.gap = rng.uniform(0.2, 0.35);
        g.ribs.push_back(r);
    }
    g.mu_bone = float(rng.uniform(spec.mu_bone_min, spec.mu_bone_max));
    const int n_lesions =
        spec.lesions_min +
        int(rng.uniform_index(std::uint64_t(spec.lesions_max - spec.lesions_min + 1)));
    for (int i = 0; i < n_lesions; ++i) {
        // rejection-sample a center well inside the body, away from the spine
        for (int attempt = 0; attempt < 64; ++attempt) {
            const double x = rng.uniform(-0.6, 0.6) * g.body.ax;
            const double y = rng.uniform(-0.6, 0.35) * g.body.ay;
            const double z = rng.uniform(-0.6, 0.6);
            const double rad = rng.uniform(0.07, 0.13);
            Ellipsoid cand{x, y, z, rad, rad, rad};
            const Ellipsoid margin{g.body.cx, g.body.cy, g.body.cz, g.body.ax - rad,
                                   g.body.ay - rad, g.body.az - rad};
            if (margin.contains(x, y, z)) {
                g.lesions.push_back(cand);
                break;
            }
        }
    }
    return g;
}

}  // namespace

void PhantomSpec::validate() const {
    if (size <= 0 || size % 4 != 0)
        throw ContractError("phantom: size must be positive and divisible by 4, got " +
                            std::to_string(size));
    auto in_range = [](float v) { return v >= 0.0f && v <= 0.15f; };
    if (!in_range(mu_soft) || !in_range(mu_lung) || !in_range(mu_bone_min) ||
        !in_range(mu_bone_max) || mu_bone_min > mu_bone_max)
        throw ContractError("phantom: attenuation values must lie in [0, 0.15] cm^-1");
    if (lesions_min < 0 || lesions_max < lesions_min)
        throw ContractError("phantom: lesion count range invalid");
    if (edge_sigma_vox < 0.0f) throw ContractError("phantom: edge_sigma_vox must be >= 0");
}

PhantomVolumes generate_phantom_labeled(const PhantomSpec& spec) {
    spec.validate();
    const Geometry g = draw_geometry(spec);
    const int n = spec.size;
    const std::array<std::uint32_t, 3> dims{std::uint32_t(n), std::uint32_t(n), std::uint32_t(n)};

    PhantomVolumes out;
    out.mu_gt = Volume3D::zeros(dims, VolumeKind::mu);
    out.lambda_gt = Volume3D::zeros(dims, VolumeKind::activity);
    out.labels.assign(out.mu_gt.data.size(), std::uint8_t(TissueLabel::background));

    std::size_t i = 0;
    for (int zi = 0; zi < n; ++zi)
        for (int yi = 0; yi < n; ++yi)
            for (int xi = 0; xi < n; ++xi, ++i) {
                // voxel centers mapped to [-1, 1]
                const double x = (2.0 * xi + 1.0) / n - 1.0;
                const double y = (2.0 * yi + 1.0) / n - 1.0;
                const double z = (2.0 * zi + 1.0) / n - 1.0;
                if (!g.body.contains(x, y, z)) continue;

                TissueLabel label = TissueLabel::soft;
                float mu = spec.mu_soft, act = spec.act_soft;
                if (g.lung_l.contains(x, y, z) || g.lung_r.contains(x, y, z)) {
                    label = TissueLabel::lung;
                    mu = spec.mu_lung;
                    act = spec.act_lung;
                }
                const double sx = x - 0.0, sy = y - g.spine_y;
                if (sx * sx + sy * sy <= g.spine_r * g.spine_r && std::abs(z) <= 0.8) {
                    label = TissueLabel::spine;
                    mu = g.mu_bone;
                    act = spec.act_bone;
                }
                for (const RibRing& r : g.ribs) {
                    if (std::abs(z - r.z) > r.half_w) continue;
                    const double ex = x / (r.scale * g.body.ax);
                    const double ey = y / (r.scale * g.body.ay);
                    const double rad = std::sqrt(ex * ex + ey * ey);
                    if (std::abs(rad - 1.0) > r.band) continue;
                    // leave a sternum gap at the front (-y side)
                    const double ang = std::atan2(-ey, ex);
                    if (std::abs(ang - 1.5707963267948966) < r.gap) continue;
                    label = TissueLabel::rib;
                    mu = g.mu_bone;
                    act = spec.act_bone;
                }
                for (const Ellipsoid& les : g.lesions) {
                    if (les.contains(x, y, z)) {
                        label = TissueLabel::lesion;
                        mu = spec.mu_soft;
                        act = spec.act_lesion;
                    }
                }
                out.labels[i] = std::uint8_t(label);
                out.mu_gt.data[i] = mu;
                out.lambda_gt.data[i] = act;
            }

    if (spec.edge_sigma_vox > 0.0f) {
        gaussian_blur_inplace(out.mu_gt.data, dims, spec.edge_sigma_vox);
        gaussian_blur_inplace(out.lambda_gt.data, dims, spec.edge_sigma_vox);
    }
    return out;
}

void DegradeParams::validate() const {
    if (!(count_fraction > 0.0) || count_fraction > 1.0)
        throw ContractError("degrade: count_fraction must lie in (0, 1], got " +
                            std::to_string(count_fraction));
    if (noise_a < 0.0 || crosstalk_c < 0.0)
        throw ContractError("degrade: noise amplitudes must be >= 0");
    if (fwhm_mm < 0.0) throw ContractError("degrade: fwhm_mm must be >= 0");
    if (noise_sigma_vox < 0.0) throw ContractError("degrade: noise_sigma_vox must be >= 0");
}

std::pair<Volume3D, Volume3D> degrade(const Volume3D& mu_gt, const Volume3D& lambda_gt,
                                      const DegradeParams& params) {
    params.validate();
    if (mu_gt.dims != lambda_gt.dims)
        throw ShapeError("degrade: attenuation and activity dims differ");
    if (mu_gt.kind != VolumeKind::mu || lambda_gt.kind != VolumeKind::activity)
        throw ContractError("degrade: expects raw mu and activity inputs");
    Rng rng(substream_seed(params.seed, "degrade"));

    // Activity: per-voxel count resampling at the reduced dose, rescaled back
    // to the clean mean so count level changes noise, not intensity scale.
    Volume3D lam = lambda_gt;
    if (params.counts_scale > 0.0) {
        const double expected_per_unit = params.counts_scale * params.count_fraction;
        double sum_counts = 0.0;
        for (auto& v : lam.data) {
            const double mean = std::max(0.0, double(v)) * expected_per_unit;
            const double k = mean > 0.0 ? double(rng.poisson(mean)) : 0.0;
            v = float(k);
            sum_counts += k;
        }
        const double target_mean = volume_mean(lambda_gt);
        const double got_mean = sum_counts / double(lam.data.size());
        const float scale = got_mean > 0.0 ? float(target_mean / got_mean) : 0.0f;
        for (auto& v : lam.data) v *= scale;
    }
    Volume3D lambda_mlaa = params.fwhm_mm > 0.0 ? gaussian_smooth(lam, params.fwhm_mm) : lam;
    lambda_mlaa.kind = VolumeKind::activity;

    // Attenuation: correlated noise scaled by 1/sqrt(fraction), plus leakage
    // of activity structure (the coupling artifact), then resolution loss.
    Volume3D mu = mu_gt;
    if (params.noise_a > 0.0) {
        std::vector<float> noise(mu.data.size());
        for (auto& v : noise) v = float(rng.normal());
        if (params.noise_sigma_vox > 0.0)
            gaussian_blur_inplace(noise, mu.dims, params.noise_sigma_vox);
        double m = 0.0, m2 = 0.0;
        for (float v : noise) {
            m += v;
            m2 += double(v) * v;
        }
        m /= double(noise.size());
        const double sd = std::sqrt(std::max(1e-30, m2 / double(noise.size()) - m * m));
        const float amp = float(params.noise_a / std::sqrt(params.count_fraction) / sd);
        for (std::size_t i = 0; i < mu.data.size(); ++i)
            mu.data[i] += amp * (noise[i] - float(m));
    }
    if (params.crosstalk_c > 0.0) {
        const Volume3D lam_norm = normalize_activity(lambda_gt);
        const double lam_mean = volume_mean(lam_norm);
        for (std::size_t i = 0; i < mu.data.size(); ++i)
            mu.data[i] += float(params.crosstalk_c * (double(lam_norm.data[i]) - lam_mean));
    }
    Volume3D mu_mlaa = params.fwhm_mm > 0.0 ? gaussian_smooth(mu, params.fwhm_mm) : mu;
    mu_mlaa.kind = VolumeKind::mu;
    return {std::move(lambda_mlaa), std::move(mu_mlaa)};
}

AtlasDataset generate_atlas(int n, const PhantomSpec& ranges, std::uint64_t seed) {
    if (n < 1) throw ContractError("atlas: need at least one entry");
    int width = 1;
    for (int v = n - 1; v >= 10; v /= 10) ++width;
    width = std::max(width, 3);
    AtlasDataset atlas;
    const std::uint64_t root = substream_seed(seed, "atlas");
    for (int i = 0; i < n; ++i) {
        PhantomSpec spec = ranges;
        spec.seed = substream_seed(root, std::to_string(i));
        auto [mu, lambda] = generate_phantom(spec);
        (void)lambda;
        std::string id = std::to_string(i);
        id.insert(0, std::size_t(width) - id.size(), '0');
        atlas.entries.push_back({std::move(id), normalize_mu(mu)});
    }
    atlas.validate();
    return atlas;
}

Volume3D body_mask(const Volume3D& mu, float threshold) {
    Volume3D mask = mu;
    mask.kind = VolumeKind::mu;
    for (auto& v : mask.data) v = v > threshold ? 1.0f : 0.0f;
    return mask;
}

Volume3D erode_mask(const Volume3D& mask, int radius) {
    if (radius <= 0) return mask;
    Volume3D out = mask;
    const std::int64_t nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
    std::size_t i = 0;
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x, ++i) {
                bool keep = mask.data[i] > 0.5f;
                for (std::int64_t dz = -radius; keep && dz <= radius; ++dz)
                    for (std::int64_t dy = -radius; keep && dy <= radius; ++dy)
                        for (std::int64_t dx = -radius; keep && dx <= radius; ++dx) {
                            const std::int64_t xx = x + dx, yy = y + dy, zz = z + dz;
                            if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) {
                                keep = false;
                                break;
                            }
                            if (!(mask.data[std::size_t((zz * ny + yy) * nx + xx)] > 0.5f))
                                keep = false;
                        }
                out.data[i] = keep ? 1.0f : 0.0f;
            }
    return out;
}

}  // namespace pour
