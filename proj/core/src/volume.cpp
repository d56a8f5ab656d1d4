#include "pour/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace pour {

namespace {

constexpr char kMagic[5] = {'V', 'V', 'O', 'L', '1'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 32;

void put_u32(std::uint8_t* p, std::uint32_t v) {
    p[0] = std::uint8_t(v);
    p[1] = std::uint8_t(v >> 8);
    p[2] = std::uint8_t(v >> 16);
    p[3] = std::uint8_t(v >> 24);
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

void put_f32(std::uint8_t* p, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(p, bits);
}

float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

const char* kind_name(VolumeKind kind) {
    switch (kind) {
        case VolumeKind::activity: return "activity";
        case VolumeKind::mu: return "mu";
        case VolumeKind::mu_normalized: return "mu-normalized";
        case VolumeKind::activity_normalized: return "activity-normalized";
    }
    return "unknown";
}

Volume3D::Volume3D(std::array<std::uint32_t, 3> d, std::array<float, 3> sp, VolumeKind k,
                   std::vector<float> values)
    : dims(d), spacing(sp), kind(k), data(std::move(values)) {
    validate();
}

Volume3D Volume3D::zeros(std::array<std::uint32_t, 3> dims, std::array<float, 3> spacing,
                         VolumeKind kind) {
    std::size_t n = std::size_t(dims[0]) * dims[1] * dims[2];
    return Volume3D(dims, spacing, kind, std::vector<float>(n, 0.0f));
}

void Volume3D::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] == 0)
            throw ShapeError("volume: dims[" + std::to_string(a) + "] must be positive");
        if (!(spacing[a] > 0.0f) || !std::isfinite(spacing[a]))
            throw ContractError("volume: spacing[" + std::to_string(a) +
                                "] must be strictly positive");
    }
    if (data.size() != size())
        throw ShapeError("volume: data length " + std::to_string(data.size()) +
                         " does not match dims product " + std::to_string(size()));
    for (float v : data)
        if (!std::isfinite(v)) throw ContractError("volume: non-finite voxel value");
}

Volume3D Volume3D::with_data(std::vector<float> values, VolumeKind new_kind) const {
    return Volume3D(dims, spacing, new_kind, std::move(values));
}

double volume_mean(const Volume3D& vol) {
    double sum = 0.0;
    for (float v : vol.data) sum += v;
    return sum / double(vol.size());
}

double volume_min(const Volume3D& vol) {
    return *std::min_element(vol.data.begin(), vol.data.end());
}

double volume_max(const Volume3D& vol) {
    return *std::max_element(vol.data.begin(), vol.data.end());
}

Volume3D read_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    std::uint8_t hdr[kHeaderBytes];
    in.read(reinterpret_cast<char*>(hdr), kHeaderBytes);
    if (std::size_t(in.gcount()) != kHeaderBytes)
        throw FormatError(path.string() + ": truncated header");

    if (std::memcmp(hdr, kMagic, 5) != 0) throw FormatError(path.string() + ": bad magic");
    if (hdr[5] != kVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(hdr[5]));
    if (hdr[6] > 3) throw FormatError(path.string() + ": bad kind tag " + std::to_string(hdr[6]));
    if (hdr[7] != 0) throw FormatError(path.string() + ": reserved byte not zero");

    std::array<std::uint32_t, 3> dims{get_u32(hdr + 8), get_u32(hdr + 12), get_u32(hdr + 16)};
    std::array<float, 3> spacing{get_f32(hdr + 20), get_f32(hdr + 24), get_f32(hdr + 28)};
    for (int a = 0; a < 3; ++a) {
        if (dims[a] == 0)
            throw FormatError(path.string() + ": dims[" + std::to_string(a) + "] is zero");
        if (!(spacing[a] > 0.0f))
            throw FormatError(path.string() + ": spacing[" + std::to_string(a) +
                              "] is not positive");
    }

    std::size_t n = std::size_t(dims[0]) * dims[1] * dims[2];
    std::vector<std::uint8_t> payload(n * 4);
    in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size()));
    if (std::size_t(in.gcount()) != payload.size())
        throw FormatError(path.string() + ": payload size mismatch, expected " +
                          std::to_string(n) + " voxels, file is truncated");
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(path.string() + ": trailing bytes after payload");

    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = get_f32(payload.data() + i * 4);
        if (!std::isfinite(values[i]))
            throw FormatError(path.string() + ": non-finite voxel at index " + std::to_string(i));
    }
    return Volume3D(dims, spacing, static_cast<VolumeKind>(hdr[6]), std::move(values));
}

void write_volume(const Volume3D& vol, const std::filesystem::path& path) {
    vol.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    std::uint8_t hdr[kHeaderBytes] = {};
    std::memcpy(hdr, kMagic, 5);
    hdr[5] = kVersion;
    hdr[6] = static_cast<std::uint8_t>(vol.kind);
    hdr[7] = 0;
    for (int a = 0; a < 3; ++a) {
        put_u32(hdr + 8 + 4 * a, vol.dims[a]);
        put_f32(hdr + 20 + 4 * a, vol.spacing[a]);
    }
    out.write(reinterpret_cast<const char*>(hdr), kHeaderBytes);

    std::vector<std::uint8_t> payload(vol.data.size() * 4);
    for (std::size_t i = 0; i < vol.data.size(); ++i) put_f32(payload.data() + i * 4, vol.data[i]);
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Volume3D normalize_activity(const Volume3D& vol, double sigma_scale) {
    if (vol.kind != VolumeKind::activity)
        throw ContractError(std::string("normalize_activity: expected an activity volume, got ") +
                            kind_name(vol.kind));
    if (!(sigma_scale > 0.0)) throw ContractError("normalize_activity: sigma_scale must be > 0");
    double mean = volume_mean(vol);
    if (!(mean > 0.0))
        throw ContractError("normalize_activity: degenerate input, volume mean is not positive");
    std::vector<float> out(vol.size());
    const double inv = 1.0 / (mean * sigma_scale);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = float(std::tanh(double(vol.data[i]) * inv));
    return vol.with_data(std::move(out), VolumeKind::activity_normalized);
}

Volume3D normalize_mu(const Volume3D& vol) {
    if (vol.kind != VolumeKind::mu)
        throw ContractError(std::string("normalize_mu: expected a mu volume, got ") +
                            kind_name(vol.kind));
    std::vector<float> out(vol.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vol.data[i] / kMuNormalizer;
    return vol.with_data(std::move(out), VolumeKind::mu_normalized);
}

Volume3D denormalize_mu(const Volume3D& vol) {
    if (vol.kind != VolumeKind::mu_normalized)
        throw ContractError(std::string("denormalize_mu: expected a mu-normalized volume, got ") +
                            kind_name(vol.kind));
    std::vector<float> out(vol.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vol.data[i] * kMuNormalizer;
    return vol.with_data(std::move(out), VolumeKind::mu);
}

namespace {

// One separable pass along `axis`. Border positions renormalize over the
// in-bounds taps, so a constant signal stays constant to the last ulp.
void blur_axis(std::vector<float>& v, std::array<std::uint32_t, 3> dims, int axis, double sigma) {
    if (sigma <= 1e-6) return;
    const int n = int(dims[axis]);
    const int radius = std::max(1, int(std::ceil(4.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * double(k) * double(k) / (sigma * sigma));
        ksum += kernel[k + radius];
    }
    for (double& w : kernel) w /= ksum;

    const std::size_t nx = dims[0], ny = dims[1];
    std::size_t stride = 1;
    if (axis == 1) stride = nx;
    if (axis == 2) stride = nx * ny;

    // Count of lines and how to step through them.
    std::array<std::uint32_t, 3> od = dims;
    od[axis] = 1;
    std::vector<double> line(n), blurred(n);
    for (std::uint32_t z = 0; z < od[2]; ++z) {
        for (std::uint32_t y = 0; y < od[1]; ++y) {
            for (std::uint32_t x = 0; x < od[0]; ++x) {
                std::size_t base = std::size_t(x) + nx * (std::size_t(y) + ny * z);
                for (int i = 0; i < n; ++i) line[i] = v[base + std::size_t(i) * stride];
                for (int i = 0; i < n; ++i) {
                    const int k0 = std::max(-radius, -i);
                    const int k1 = std::min(radius, n - 1 - i);
                    double acc = 0.0;
                    double wsum = 0.0;
                    for (int k = k0; k <= k1; ++k) {
                        acc += kernel[k + radius] * line[i + k];
                        wsum += kernel[k + radius];
                    }
                    blurred[i] = (k0 == -radius && k1 == radius) ? acc : acc / wsum;
                }
                for (int i = 0; i < n; ++i) v[base + std::size_t(i) * stride] = float(blurred[i]);
            }
        }
    }
}

}  // namespace

void gaussian_blur_inplace(std::vector<float>& values, std::array<std::uint32_t, 3> dims,
                           std::array<double, 3> sigma_vox) {
    for (int axis = 0; axis < 3; ++axis) blur_axis(values, dims, axis, sigma_vox[axis]);
}

Volume3D gaussian_smooth_sigma_vox(const Volume3D& vol, std::array<double, 3> sigma_vox) {
    std::vector<float> out = vol.data;
    gaussian_blur_inplace(out, vol.dims, sigma_vox);
    return vol.with_data(std::move(out), vol.kind);
}

Volume3D gaussian_smooth(const Volume3D& vol, double fwhm_mm) {
    if (!(fwhm_mm > 0.0)) throw ContractError("gaussian_smooth: fwhm_mm must be > 0");
    std::array<double, 3> sigma{};
    for (int a = 0; a < 3; ++a) sigma[a] = fwhm_mm / (kFwhmPerSigma * double(vol.spacing[a]));
    return gaussian_smooth_sigma_vox(vol, sigma);
}

Volume3D resize_trilinear(const Volume3D& vol, std::array<std::uint32_t, 3> new_dims) {
    for (int a = 0; a < 3; ++a)
        if (new_dims[a] == 0) throw ShapeError("resize_trilinear: new dims must be positive");
    if (new_dims == vol.dims) return vol;

    const int nx = int(vol.dims[0]), ny = int(vol.dims[1]), nz = int(vol.dims[2]);
    std::vector<float> out(std::size_t(new_dims[0]) * new_dims[1] * new_dims[2]);

    auto sample_axis = [](std::uint32_t out_i, std::uint32_t out_n, int in_n, int& i0,
                          double& frac) {
        double t = (double(out_i) + 0.5) * double(in_n) / double(out_n) - 0.5;
        t = std::clamp(t, 0.0, double(in_n - 1));
        i0 = std::min(int(t), std::max(in_n - 2, 0));
        frac = t - double(i0);
    };

    std::size_t o = 0;
    for (std::uint32_t z = 0; z < new_dims[2]; ++z) {
        int z0;
        double fz;
        sample_axis(z, new_dims[2], nz, z0, fz);
        int z1 = std::min(z0 + 1, nz - 1);
        for (std::uint32_t y = 0; y < new_dims[1]; ++y) {
            int y0;
            double fy;
            sample_axis(y, new_dims[1], ny, y0, fy);
            int y1 = std::min(y0 + 1, ny - 1);
            for (std::uint32_t x = 0; x < new_dims[0]; ++x, ++o) {
                int x0;
                double fx;
                sample_axis(x, new_dims[0], nx, x0, fx);
                int x1 = std::min(x0 + 1, nx - 1);
                auto v = [&](int xx, int yy, int zz) {
                    return double(vol.data[vol.index(std::uint32_t(xx), std::uint32_t(yy),
                                                     std::uint32_t(zz))]);
                };
                double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
                double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
                double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
                double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
                double c0 = c00 * (1 - fy) + c10 * fy;
                double c1 = c01 * (1 - fy) + c11 * fy;
                out[o] = float(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return Volume3D(new_dims, vol.spacing, vol.kind, std::move(out));
}

}  // namespace pour
