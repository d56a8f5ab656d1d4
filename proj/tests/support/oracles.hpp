// Independent reference implementations and checking utilities used by the
// test suite. Everything here is deliberately written as plain loops, separate
// from the library's optimized paths, so the two can disagree.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pour/ppgm.hpp"
#include "pour/rng.hpp"
#include "pour/tensor.hpp"
#include "pour/volume.hpp"

namespace testsup {

// ---- finite-difference gradient checking ------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "leaf{i}[{j}] analytic=... numeric=..."
    int checked = 0;
};

// Central finite differences on a sampled subset of every leaf's elements.
// build() must reconstruct the graph from the leaves and return a rank-0 loss.
inline GradCheckResult check_gradients(std::vector<pour::TensorT<double>>& leaves,
                                       const std::function<pour::TensorT<double>()>& build,
                                       int samples_per_leaf = 4, double eps = 1e-5,
                                       std::uint64_t seed = 42) {
    using pour::TensorT;
    for (auto& l : leaves) l.zero_grad();
    TensorT<double> loss = build();
    pour::backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());

    pour::Rng pick(seed);
    GradCheckResult res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        const std::int64_t n = leaf.numel();
        const int samples = int(std::min<std::int64_t>(samples_per_leaf, n));
        for (int s = 0; s < samples; ++s) {
            const std::int64_t j =
                samples == n ? s : std::int64_t(pick.next_u64() % std::uint64_t(n));
            double& slot = leaf.node()->value[std::size_t(j)];
            const double saved = slot;
            slot = saved + eps;
            const double fp = build().item();
            slot = saved - eps;
            const double fm = build().item();
            slot = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[li].empty() ? 0.0 : analytic[li][std::size_t(j)];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
            const double rel = std::fabs(a - numeric) / denom;
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "leaf" + std::to_string(li) + "[" + std::to_string(j) +
                            "] analytic=" + std::to_string(a) +
                            " numeric=" + std::to_string(numeric);
            }
        }
    }
    return res;
}

// Values bounded away from relu/abs kinks: |v| in [0.1, 1.0).
inline std::vector<double> smooth_random(std::int64_t n, pour::Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) {
        const double u = rng.uniform();
        const double mag = 0.1 + 0.9 * rng.uniform();
        x = (u < 0.5 ? -1.0 : 1.0) * mag;
    }
    return v;
}

// ---- straight-line metric oracles --------------------------------------------

inline double oracle_rmse(const pour::Volume3D& a, const pour::Volume3D& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc / double(a.data.size()));
}

inline double oracle_psnr(const pour::Volume3D& pred, const pour::Volume3D& ref) {
    double lo = ref.data[0], hi = ref.data[0];
    for (float v : ref.data) {
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
    }
    const double r = oracle_rmse(pred, ref);
    if (r == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10((hi - lo) / r);
}

// Direct per-window evaluation; no prefix sums.
inline double oracle_ssim(const pour::Volume3D& pred, const pour::Volume3D& ref, int w = 7,
                          double k1 = 0.01, double k2 = 0.03) {
    const std::int64_t nx = ref.dims[0], ny = ref.dims[1], nz = ref.dims[2];
    double lo = ref.data[0], hi = ref.data[0];
    for (float v : ref.data) {
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
    }
    const double L = hi - lo;
    const double c1 = (k1 * L) * (k1 * L), c2 = (k2 * L) * (k2 * L);
    const double n = double(w) * double(w) * double(w);
    auto at = [&](const pour::Volume3D& v, std::int64_t x, std::int64_t y, std::int64_t z) {
        return double(v.data[std::size_t((z * ny + y) * nx + x)]);
    };
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t z0 = 0; z0 + w <= nz; ++z0)
        for (std::int64_t y0 = 0; y0 + w <= ny; ++y0)
            for (std::int64_t x0 = 0; x0 + w <= nx; ++x0) {
                double sf = 0, sg = 0, sff = 0, sgg = 0, sfg = 0;
                for (std::int64_t dz = 0; dz < w; ++dz)
                    for (std::int64_t dy = 0; dy < w; ++dy)
                        for (std::int64_t dx = 0; dx < w; ++dx) {
                            const double f = at(pred, x0 + dx, y0 + dy, z0 + dz);
                            const double g = at(ref, x0 + dx, y0 + dy, z0 + dz);
                            sf += f;
                            sg += g;
                            sff += f * f;
                            sgg += g * g;
                            sfg += f * g;
                        }
                const double mf = sf / n, mg = sg / n;
                const double vf = sff / n - mf * mf, vg = sgg / n - mg * mg;
                const double cov = sfg / n - mf * mg;
                const double lum_den = mf * mf + mg * mg + c1;
                const double cs_den = vf + vg + c2;
                const double lum = lum_den == 0.0 ? 1.0 : (2.0 * mf * mg + c1) / lum_den;
                const double cs = cs_den == 0.0 ? 1.0 : (2.0 * cov + c2) / cs_den;
                total += lum * cs;
                ++count;
            }
    return total / double(count);
}

// ---- brute-force atlas scan ---------------------------------------------------

// Plain full-grid MSE argmin with lowest-index tie-break.
inline std::pair<std::size_t, double> oracle_atlas_scan(const pour::Volume3D& query,
                                                        const pour::AtlasDataset& atlas) {
    std::size_t best = 0;
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < atlas.entries.size(); ++i) {
        const pour::Volume3D& e = atlas.entries[i].volume;
        pour::Volume3D cand = e.dims == query.dims ? e : pour::resize_trilinear(e, query.dims);
        double acc = 0.0;
        for (std::size_t j = 0; j < query.data.size(); ++j) {
            const double d = double(query.data[j]) - double(cand.data[j]);
            acc += d * d;
        }
        const double mse = acc / double(query.data.size());
        if (mse < best_mse) {
            best_mse = mse;
            best = i;
        }
    }
    return {best, best_mse};
}

// ---- conv oracle ---------------------------------------------------------------

// Direct 7-loop convolution, zero padding.
inline std::vector<double> oracle_conv3d(const std::vector<double>& in,
                                         const std::vector<double>& wt,
                                         const std::vector<double>& bias, int batch, int cin,
                                         int d, int h, int w, int cout, int k, int stride,
                                         int pad) {
    const int od = (d + 2 * pad - k) / stride + 1;
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(std::size_t(batch) * cout * od * oh * ow, 0.0);
    auto in_at = [&](int b, int c, int z, int y, int x) {
        return in[std::size_t((((b * cin + c) * d + z) * h + y) * w + x)];
    };
    auto wt_at = [&](int co, int ci, int z, int y, int x) {
        return wt[std::size_t((((co * cin + ci) * k + z) * k + y) * k + x)];
    };
    for (int b = 0; b < batch; ++b)
        for (int co = 0; co < cout; ++co)
            for (int oz = 0; oz < od; ++oz)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double acc = bias.empty() ? 0.0 : bias[std::size_t(co)];
                        for (int ci = 0; ci < cin; ++ci)
                            for (int kz = 0; kz < k; ++kz)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int z = oz * stride + kz - pad;
                                        const int y = oy * stride + ky - pad;
                                        const int x = ox * stride + kx - pad;
                                        if (z < 0 || z >= d || y < 0 || y >= h || x < 0 ||
                                            x >= w)
                                            continue;
                                        acc += in_at(b, ci, z, y, x) * wt_at(co, ci, kz, ky, kx);
                                    }
                        out[std::size_t((((b * cout + co) * od + oz) * oh + oy) * ow + ox)] = acc;
                    }
    return out;
}

// ---- filesystem ------------------------------------------------------------------

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto cand = base / ("pour_test_" + std::to_string(rd()));
            std::error_code ec;
            if (std::filesystem::create_directory(cand, ec)) {
                path = cand;
                return;
            }
        }
        throw std::runtime_error("TempDir: exhausted attempts");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline pour::Volume3D random_volume(std::array<std::uint32_t, 3> dims, std::uint64_t seed,
                                    pour::VolumeKind kind = pour::VolumeKind::mu_normalized,
                                    float lo = 0.0f, float hi = 1.0f) {
    pour::Volume3D v = pour::Volume3D::zeros(dims, kind);
    pour::Rng rng(seed);
    for (auto& x : v.data) x = lo + (hi - lo) * float(rng.uniform());
    return v;
}

}  // namespace testsup
