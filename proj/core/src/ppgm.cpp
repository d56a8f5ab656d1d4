#include "pour/ppgm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pour/error.hpp"
#include "pour/metrics.hpp"

namespace pour {

namespace {

double mse_raw(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return acc / double(a.size());
}

std::array<std::uint32_t, 3> half_dims(std::array<std::uint32_t, 3> dims) {
    for (auto& d : dims) d = std::max<std::uint32_t>(2, (d + 1) / 2);
    return dims;
}

float sample_clamped(const std::vector<float>& v, std::array<std::uint32_t, 3> dims, double x,
                     double y, double z) {
    const std::int64_t nx = dims[0], ny = dims[1], nz = dims[2];
    x = std::clamp(x, 0.0, double(nx - 1));
    y = std::clamp(y, 0.0, double(ny - 1));
    z = std::clamp(z, 0.0, double(nz - 1));
    const std::int64_t x0 = std::min(std::int64_t(x), nx - 2 >= 0 ? nx - 2 : 0);
    const std::int64_t y0 = std::min(std::int64_t(y), ny - 2 >= 0 ? ny - 2 : 0);
    const std::int64_t z0 = std::min(std::int64_t(z), nz - 2 >= 0 ? nz - 2 : 0);
    const double fx = nx > 1 ? x - double(x0) : 0.0;
    const double fy = ny > 1 ? y - double(y0) : 0.0;
    const double fz = nz > 1 ? z - double(z0) : 0.0;
    const std::int64_t x1 = std::min(x0 + 1, nx - 1);
    const std::int64_t y1 = std::min(y0 + 1, ny - 1);
    const std::int64_t z1 = std::min(z0 + 1, nz - 1);
    auto at = [&](std::int64_t xi, std::int64_t yi, std::int64_t zi) {
        return double(v[std::size_t((zi * ny + yi) * nx + xi)]);
    };
    const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
    const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
    const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
    const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
    return float((c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz);
}

// out(x) = b(x) + a(x + b(x)): applies b first, then a, in displacement form.
DeformationField compose_fields(const DeformationField& a, const DeformationField& b) {
    DeformationField out = DeformationField::zeros(a.dims);
    const std::int64_t nx = a.dims[0], ny = a.dims[1], nz = a.dims[2];
    std::size_t i = 0;
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x, ++i) {
                const double px = double(x) + b.comp[0][i];
                const double py = double(y) + b.comp[1][i];
                const double pz = double(z) + b.comp[2][i];
                out.comp[0][i] = b.comp[0][i] + sample_clamped(a.comp[0], a.dims, px, py, pz);
                out.comp[1][i] = b.comp[1][i] + sample_clamped(a.comp[1], a.dims, px, py, pz);
                out.comp[2][i] = b.comp[2][i] + sample_clamped(a.comp[2], a.dims, px, py, pz);
            }
    return out;
}

// exp(v) by scaling and squaring: halve the field k times, then compose the
// small displacement with itself k times.
DeformationField exp_field(const DeformationField& v, int squarings) {
    DeformationField e = v;
    const float scale = float(1.0 / double(std::int64_t(1) << squarings));
    for (int c = 0; c < 3; ++c)
        for (auto& u : e.comp[c]) u *= scale;
    for (int s = 0; s < squarings; ++s) e = compose_fields(e, e);
    return e;
}

void smooth_field(DeformationField& f, double sigma) {
    if (sigma <= 0.0) return;
    for (int c = 0; c < 3; ++c) gaussian_blur_inplace(f.comp[c], f.dims, sigma);
}

DeformationField upsample_field(const DeformationField& f, std::array<std::uint32_t, 3> dims) {
    DeformationField out = DeformationField::zeros(dims);
    for (int c = 0; c < 3; ++c) {
        Volume3D tmp;
        tmp.dims = f.dims;
        tmp.data = f.comp[c];
        Volume3D up = resize_trilinear(tmp, dims);
        // displacements are in voxel units of their own grid
        const float scale = float(double(dims[c]) / double(f.dims[c]));
        out.comp[c] = std::move(up.data);
        for (auto& u : out.comp[c]) u *= scale;
    }
    return out;
}

Volume3D downsample_volume(const Volume3D& vol, std::array<std::uint32_t, 3> dims) {
    Volume3D blurred = vol;
    gaussian_blur_inplace(blurred.data, blurred.dims, 1.0);
    return resize_trilinear(blurred, dims);
}

// One demons pass at a fixed resolution. Mutates `field`; returns the MSE
// trace (entry 0 is the starting error).
std::vector<double> demons_level(const Volume3D& fixed, const Volume3D& moving,
                                 DeformationField& field, int iterations,
                                 const DemonsConfig& cfg) {
    const std::int64_t nx = fixed.dims[0], ny = fixed.dims[1], nz = fixed.dims[2];
    const double sx2 = cfg.sigma_x * cfg.sigma_x;
    std::vector<double> trace;
    Volume3D warped = warp(moving, field);
    trace.push_back(mse_raw(fixed.data, warped.data));

    DeformationField force = DeformationField::zeros(fixed.dims);
    for (int it = 0; it < iterations; ++it) {
        // force u = diff * grad(warped) / (|grad|^2 + diff^2 / sigma_x^2)
        std::size_t i = 0;
        for (std::int64_t z = 0; z < nz; ++z)
            for (std::int64_t y = 0; y < ny; ++y)
                for (std::int64_t x = 0; x < nx; ++x, ++i) {
                    auto at = [&](std::int64_t xi, std::int64_t yi, std::int64_t zi) {
                        return double(warped.data[std::size_t((zi * ny + yi) * nx + xi)]);
                    };
                    const double gx = nx > 1 ? (at(std::min(x + 1, nx - 1), y, z) -
                                                at(std::max<std::int64_t>(x - 1, 0), y, z)) /
                                                   double(std::min(x + 1, nx - 1) -
                                                          std::max<std::int64_t>(x - 1, 0))
                                             : 0.0;
                    const double gy = ny > 1 ? (at(x, std::min(y + 1, ny - 1), z) -
                                                at(x, std::max<std::int64_t>(y - 1, 0), z)) /
                                                   double(std::min(y + 1, ny - 1) -
                                                          std::max<std::int64_t>(y - 1, 0))
                                             : 0.0;
                    const double gz = nz > 1 ? (at(x, y, std::min(z + 1, nz - 1)) -
                                                at(x, y, std::max<std::int64_t>(z - 1, 0))) /
                                                   double(std::min(z + 1, nz - 1) -
                                                          std::max<std::int64_t>(z - 1, 0))
                                             : 0.0;
                    const double diff = double(fixed.data[i]) - double(warped.data[i]);
                    const double denom = gx * gx + gy * gy + gz * gz + diff * diff / sx2;
                    const double s = denom > 1e-12 ? diff / denom : 0.0;
                    force.comp[0][i] = float(s * gx);
                    force.comp[1][i] = float(s * gy);
                    force.comp[2][i] = float(s * gz);
                }
        smooth_field(force, cfg.fluid_sigma);
        const DeformationField step = exp_field(force, cfg.exp_squarings);
        field = compose_fields(field, step);
        smooth_field(field, cfg.diffusion_sigma);

        warped = warp(moving, field);
        const double mse = mse_raw(fixed.data, warped.data);
        const double prev = trace.back();
        trace.push_back(mse);
        if (prev > 0.0 && std::abs(prev - mse) / prev < cfg.convergence_tol) break;
        if (mse == 0.0) break;
    }
    return trace;
}

}  // namespace

void AtlasDataset::validate() const {
    if (entries.empty()) throw ContractError("atlas: dataset is empty");
    const auto dims = entries.front().volume.dims;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].volume.dims != dims)
            throw ContractError("atlas: entry '" + entries[i].id +
                                "' dims differ from entry '" + entries.front().id + "'");
        if (i > 0 && !(entries[i - 1].id < entries[i].id))
            throw ContractError("atlas: entries not strictly ordered by id near '" +
                                entries[i].id + "'");
    }
}

AtlasDataset load_atlas_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoError("atlas: not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".vvol") files.push_back(e.path());
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.stem().string() < b.stem().string(); });
    AtlasDataset atlas;
    for (const auto& f : files) {
        Volume3D v = read_volume(f);
        if (v.kind == VolumeKind::mu)
            v = normalize_mu(v);
        else if (v.kind != VolumeKind::mu_normalized)
            throw FormatError("atlas: " + f.string() + " is not an attenuation volume");
        atlas.entries.push_back({f.stem().string(), std::move(v)});
    }
    atlas.validate();
    return atlas;
}

std::pair<std::size_t, double> atlas_match(const Volume3D& x_f, const AtlasDataset& atlas,
                                           int presample) {
    atlas.validate();
    if (presample != 1 && presample != 2)
        throw ContractError("atlas_match: presample must be 1 or 2");
    const auto adims = atlas.entries.front().volume.dims;
    Volume3D query = x_f.dims == adims ? x_f : resize_trilinear(x_f, adims);
    const auto cdims = presample == 2 ? half_dims(adims) : adims;
    if (presample == 2) query = resize_trilinear(query, cdims);

    std::size_t best = 0;
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < atlas.entries.size(); ++i) {
        const Volume3D& entry = atlas.entries[i].volume;
        const double m = presample == 2
                             ? mse_raw(query.data, resize_trilinear(entry, cdims).data)
                             : mse_raw(query.data, entry.data);
        if (m < best_mse) {  // strict: ties keep the lowest index
            best_mse = m;
            best = i;
        }
    }
    return {best, best_mse};
}

DeformationField DeformationField::zeros(std::array<std::uint32_t, 3> dims) {
    DeformationField f;
    f.dims = dims;
    const std::size_t n = std::size_t(dims[0]) * dims[1] * dims[2];
    for (auto& c : f.comp) c.assign(n, 0.0f);
    return f;
}

void DeformationField::validate() const {
    const std::size_t n = voxels();
    if (n == 0) throw ContractError("deformation field: empty dims");
    for (const auto& c : comp) {
        if (c.size() != n) throw ContractError("deformation field: component size mismatch");
        for (float v : c)
            if (!std::isfinite(v)) throw ContractError("deformation field: non-finite value");
    }
}

Volume3D warp(const Volume3D& moving, const DeformationField& field) {
    if (moving.dims != field.dims)
        throw ShapeError("warp: moving dims != field dims");
    Volume3D out = moving;
    const std::int64_t nx = moving.dims[0], ny = moving.dims[1], nz = moving.dims[2];
    std::size_t i = 0;
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x, ++i)
                out.data[i] = sample_clamped(moving.data, moving.dims, double(x) + field.comp[0][i],
                                             double(y) + field.comp[1][i],
                                             double(z) + field.comp[2][i]);
    return out;
}

double jacobian_positive_fraction(const DeformationField& field) {
    const std::int64_t nx = field.dims[0], ny = field.dims[1], nz = field.dims[2];
    if (nx < 3 || ny < 3 || nz < 3)
        throw ContractError("jacobian: field too small for interior derivatives");
    auto at = [&](int c, std::int64_t x, std::int64_t y, std::int64_t z) {
        return double(field.comp[c][std::size_t((z * ny + y) * nx + x)]);
    };
    std::int64_t positive = 0, total = 0;
    for (std::int64_t z = 1; z < nz - 1; ++z)
        for (std::int64_t y = 1; y < ny - 1; ++y)
            for (std::int64_t x = 1; x < nx - 1; ++x) {
                double j[3][3];
                for (int c = 0; c < 3; ++c) {
                    j[c][0] = 0.5 * (at(c, x + 1, y, z) - at(c, x - 1, y, z));
                    j[c][1] = 0.5 * (at(c, x, y + 1, z) - at(c, x, y - 1, z));
                    j[c][2] = 0.5 * (at(c, x, y, z + 1) - at(c, x, y, z - 1));
                }
                for (int c = 0; c < 3; ++c) j[c][c] += 1.0;
                const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                                   j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                                   j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                positive += det > 0.0;
                ++total;
            }
    return double(positive) / double(total);
}

void DemonsConfig::validate() const {
    if (pyramid_levels <= 0) throw ContractError("demons: pyramid_levels must be positive");
    if (int(iterations_per_level.size()) != pyramid_levels)
        throw ContractError("demons: iterations_per_level must list one count per level");
    for (int it : iterations_per_level)
        if (it <= 0) throw ContractError("demons: iteration counts must be positive");
    if (fluid_sigma <= 0.0 || diffusion_sigma <= 0.0 || sigma_x <= 0.0)
        throw ContractError("demons: sigmas must be positive");
    if (convergence_tol < 0.0) throw ContractError("demons: convergence_tol must be >= 0");
    if (exp_squarings < 0) throw ContractError("demons: exp_squarings must be >= 0");
}

std::pair<DeformationField, Volume3D> demons_register(const Volume3D& fixed,
                                                      const Volume3D& moving,
                                                      const DemonsConfig& cfg) {
    cfg.validate();
    if (fixed.dims != moving.dims)
        throw ShapeError("demons_register: fixed and moving dims differ");
    for (float v : fixed.data)
        if (!std::isfinite(v)) throw ContractError("demons_register: non-finite fixed volume");
    for (float v : moving.data)
        if (!std::isfinite(v)) throw ContractError("demons_register: non-finite moving volume");

    // Pyramid geometry, coarse to fine.
    std::vector<std::array<std::uint32_t, 3>> level_dims(std::size_t(cfg.pyramid_levels));
    level_dims.back() = fixed.dims;
    for (int l = cfg.pyramid_levels - 2; l >= 0; --l)
        level_dims[std::size_t(l)] = half_dims(level_dims[std::size_t(l + 1)]);

    DeformationField field = DeformationField::zeros(level_dims.front());
    for (int l = 0; l < cfg.pyramid_levels; ++l) {
        const auto dims = level_dims[std::size_t(l)];
        const Volume3D f_l = dims == fixed.dims ? fixed : downsample_volume(fixed, dims);
        const Volume3D m_l = dims == moving.dims ? moving : downsample_volume(moving, dims);
        if (field.dims != dims) field = upsample_field(field, dims);

        if (l + 1 < cfg.pyramid_levels) {
            demons_level(f_l, m_l, field, cfg.iterations_per_level[std::size_t(l)], cfg);
            continue;
        }

        // Finest level: keep the best iterate seen at full resolution, with
        // the zero field as a candidate so registration can never lose to
        // doing nothing.
        DeformationField best = DeformationField::zeros(dims);
        double best_mse = mse_raw(f_l.data, m_l.data);
        {
            const Volume3D start = warp(m_l, field);
            const double start_mse = mse_raw(f_l.data, start.data);
            if (start_mse < best_mse) {
                best = field;
                best_mse = start_mse;
            }
        }
        const int iters = cfg.iterations_per_level[std::size_t(l)];
        for (int it = 0; it < iters; ++it) {
            const std::vector<double> tr = demons_level(f_l, m_l, field, 1, cfg);
            const double mse = tr.back();
            if (mse < best_mse) {
                best_mse = mse;
                best = field;
            }
            if (tr.size() >= 2 && tr[0] > 0.0 &&
                std::abs(tr[0] - tr[1]) / tr[0] < cfg.convergence_tol)
                break;
        }
        field = std::move(best);
    }
    field.validate();
    Volume3D warped = warp(moving, field);
    return {std::move(field), std::move(warped)};
}

std::string PpgmReport::to_text() const {
    std::string s;
    s += "matched_index=" + std::to_string(matched_index) + "\n";
    s += "matched_mse=" + std::to_string(matched_mse) + "\n";
    s += "registered_mse=" + std::to_string(registered_mse) + "\n";
    s += "matched_psnr=" + std::to_string(matched_psnr) + "\n";
    s += "registered_psnr=" + std::to_string(registered_psnr) + "\n";
    return s;
}

PriorResult generate_prior(const Volume3D& x_f, const AtlasDataset& atlas,
                           const DemonsConfig& cfg, int match_presample) {
    const auto [index, match_mse] = atlas_match(x_f, atlas, match_presample);
    (void)match_mse;  // report uses query-grid errors so the MSE ordering is comparable
    const Volume3D& entry = atlas.entries[index].volume;
    Volume3D moving = entry.dims == x_f.dims ? entry : resize_trilinear(entry, x_f.dims);
    auto [field, registered] = demons_register(x_f, moving, cfg);

    PriorResult out;
    out.matched_index = index;
    out.report.matched_index = index;
    out.report.matched_mse = mse_raw(x_f.data, moving.data);
    out.report.registered_mse = mse_raw(x_f.data, registered.data);
    out.report.matched_psnr = psnr(moving, x_f);
    out.report.registered_psnr = psnr(registered, x_f);
    out.prior = std::move(registered);
    out.prior.kind = VolumeKind::mu_normalized;
    return out;
}

}  // namespace pour
