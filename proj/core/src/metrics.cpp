#include "pour/metrics.hpp"

#include <cmath>
#include <limits>

#include "pour/error.hpp"

namespace pour {

namespace {

void check_dims(const Volume3D& pred, const Volume3D& ref, const char* op) {
    if (pred.dims != ref.dims)
        throw ShapeError(std::string(op) + ": pred dims (" + std::to_string(pred.dims[0]) + "," +
                         std::to_string(pred.dims[1]) + "," + std::to_string(pred.dims[2]) +
                         ") != ref dims (" + std::to_string(ref.dims[0]) + "," +
                         std::to_string(ref.dims[1]) + "," + std::to_string(ref.dims[2]) + ")");
}

struct MaskedError {
    double rmse;
    double range;
    std::int64_t n;
};

MaskedError masked_error(const Volume3D& pred, const Volume3D& ref, const Volume3D* mask,
                         const char* op) {
    check_dims(pred, ref, op);
    if (mask) check_dims(*mask, ref, op);
    double acc = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        if (mask && !(mask->data[i] > 0.5f)) continue;
        const double d = double(pred.data[i]) - double(ref.data[i]);
        acc += d * d;
        lo = std::min(lo, double(ref.data[i]));
        hi = std::max(hi, double(ref.data[i]));
        ++n;
    }
    if (n == 0) throw ContractError(std::string(op) + ": mask selects no voxels");
    return {std::sqrt(acc / double(n)), hi - lo, n};
}

// Inclusive prefix sums with a zero border: P(x,y,z) = sum over [0,x)×[0,y)×[0,z).
struct PrefixVolume {
    std::int64_t nx, ny, nz;
    std::vector<double> p;

    PrefixVolume(const float* a, const float* b, std::int64_t nx_, std::int64_t ny_,
                 std::int64_t nz_)
        : nx(nx_), ny(ny_), nz(nz_), p(std::size_t((nx + 1) * (ny + 1) * (nz + 1)), 0.0) {
        const std::int64_t sx = 1, sy = nx + 1, sz = (nx + 1) * (ny + 1);
        for (std::int64_t z = 0; z < nz; ++z)
            for (std::int64_t y = 0; y < ny; ++y) {
                const float* arow = a + (z * ny + y) * nx;
                const float* brow = b ? b + (z * ny + y) * nx : nullptr;
                double* prow = p.data() + (z + 1) * sz + (y + 1) * sy + 1;
                const double* up = prow - sy;
                const double* back = prow - sz;
                const double* upback = prow - sy - sz;
                double run = 0.0;
                for (std::int64_t x = 0; x < nx; ++x) {
                    run += b ? double(arow[x]) * double(brow[x]) : double(arow[x]);
                    prow[x] = run + up[x] + back[x] - upback[x];
                }
            }
        (void)sx;
    }

    double box(std::int64_t x0, std::int64_t y0, std::int64_t z0, std::int64_t w) const {
        const std::int64_t sy = nx + 1, sz = (nx + 1) * (ny + 1);
        const std::int64_t x1 = x0 + w, y1 = y0 + w, z1 = z0 + w;
        auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
            return p[std::size_t(z * sz + y * sy + x)];
        };
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) +
               at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
    }
};

}  // namespace

double rmse(const Volume3D& pred, const Volume3D& ref) {
    return masked_error(pred, ref, nullptr, "rmse").rmse;
}

double psnr(const Volume3D& pred, const Volume3D& ref) {
    const MaskedError e = masked_error(pred, ref, nullptr, "psnr");
    if (e.range <= 0.0)
        throw ContractError("psnr: reference volume has zero intensity range");
    if (e.rmse == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(e.range / e.rmse);
}

double ssim(const Volume3D& pred, const Volume3D& ref, int window, double k1, double k2) {
    check_dims(pred, ref, "ssim");
    if (window <= 0) throw ContractError("ssim: window must be positive");
    const std::int64_t nx = ref.dims[0], ny = ref.dims[1], nz = ref.dims[2], w = window;
    if (nx < w || ny < w || nz < w)
        throw ContractError("ssim: volume (" + std::to_string(nx) + "," + std::to_string(ny) +
                            "," + std::to_string(nz) + ") smaller than window " +
                            std::to_string(window));

    double lo = double(ref.data[0]), hi = lo;
    for (float v : ref.data) {
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
    }
    const double L = hi - lo;
    const double c1 = (k1 * L) * (k1 * L);
    const double c2 = (k2 * L) * (k2 * L);

    const float* f = pred.data.data();
    const float* g = ref.data.data();
    const PrefixVolume sf(f, nullptr, nx, ny, nz), sg(g, nullptr, nx, ny, nz);
    const PrefixVolume sff(f, f, nx, ny, nz), sgg(g, g, nx, ny, nz), sfg(f, g, nx, ny, nz);

    const double n = double(w) * double(w) * double(w);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t z = 0; z + w <= nz; ++z)
        for (std::int64_t y = 0; y + w <= ny; ++y)
            for (std::int64_t x = 0; x + w <= nx; ++x) {
                const double mf = sf.box(x, y, z, w) / n;
                const double mg = sg.box(x, y, z, w) / n;
                const double vf = sff.box(x, y, z, w) / n - mf * mf;
                const double vg = sgg.box(x, y, z, w) / n - mg * mg;
                const double cov = sfg.box(x, y, z, w) / n - mf * mg;
                const double lum_den = mf * mf + mg * mg + c1;
                const double cs_den = vf + vg + c2;
                const double lum = lum_den == 0.0 ? 1.0 : (2.0 * mf * mg + c1) / lum_den;
                const double cs = cs_den == 0.0 ? 1.0 : (2.0 * cov + c2) / cs_den;
                total += lum * cs;
                ++count;
            }
    return total / double(count);
}

MetricReport evaluate_case(const Volume3D& pred, const Volume3D& ref, const Volume3D* mask,
                           int ssim_window) {
    const MaskedError e = masked_error(pred, ref, mask, "evaluate_case");
    if (e.range <= 0.0)
        throw ContractError("evaluate_case: reference has zero intensity range");
    MetricReport r;
    r.rmse = e.rmse;
    r.psnr_db = e.rmse == 0.0 ? std::numeric_limits<double>::infinity()
                              : 20.0 * std::log10(e.range / e.rmse);
    r.ssim = ssim(pred, ref, ssim_window);
    r.n_voxels = e.n;
    return r;
}

MetricAggregate aggregate(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ContractError("aggregate: no reports");
    MetricAggregate agg;
    agg.n_cases = reports.size();
    auto stats = [&](auto pick) {
        MetricStats s;
        double sum = 0.0;
        for (const auto& r : reports) sum += pick(r);
        s.mean = sum / double(reports.size());
        if (reports.size() > 1) {
            double sq = 0.0;
            for (const auto& r : reports) {
                const double d = pick(r) - s.mean;
                sq += d * d;
            }
            s.stddev = std::sqrt(sq / double(reports.size() - 1));
        }
        return s;
    };
    agg.psnr_db = stats([](const MetricReport& r) { return r.psnr_db; });
    agg.ssim = stats([](const MetricReport& r) { return r.ssim; });
    agg.rmse = stats([](const MetricReport& r) { return r.rmse; });
    return agg;
}

}  // namespace pour
