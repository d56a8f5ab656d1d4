#pragma once

#include <array>

#include "pour/tensor.hpp"

namespace pour {

// 3-D cross-correlation and the up/down resampling ops. These carry nearly
// all of the training cost, so the stride-1 paths are written as contiguous
// row updates the compiler can vectorize; each output element keeps a fixed
// summation order, which makes results reproducible run to run.

namespace detail {

struct Conv3dDims {
    std::int64_t batch, cin, d, h, w;
    std::int64_t cout, k;
    std::int64_t od, oh, ow;
    int stride, padding;
};

template <class S>
Conv3dDims conv3d_check(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                        int stride, int padding) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 5) throw ShapeError("conv3d: input must be rank-5, got " + shape_str(is));
    if (ws.size() != 5) throw ShapeError("conv3d: weight must be rank-5, got " + shape_str(ws));
    if (ws[2] != ws[3] || ws[2] != ws[4])
        throw ShapeError("conv3d: kernel must be cubic, got " + shape_str(ws));
    if (ws[2] % 2 == 0) throw ShapeError("conv3d: kernel extent must be odd, got " + shape_str(ws));
    if (is[1] != ws[1])
        throw ShapeError("conv3d: input channels " + std::to_string(is[1]) +
                         " != weight channels " + std::to_string(ws[1]));
    if (bias.shape() != Shape{ws[0]})
        throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) + " != (" +
                         std::to_string(ws[0]) + ")");
    if (stride <= 0) throw ContractError("conv3d: stride must be positive");
    if (padding < 0) throw ContractError("conv3d: padding must be non-negative");

    Conv3dDims dm;
    dm.batch = is[0];
    dm.cin = is[1];
    dm.d = is[2];
    dm.h = is[3];
    dm.w = is[4];
    dm.cout = ws[0];
    dm.k = ws[2];
    dm.stride = stride;
    dm.padding = padding;
    auto out_extent = [&](std::int64_t n) {
        std::int64_t num = n + 2 * padding - dm.k;
        if (num < 0 || num % stride != 0)
            throw ShapeError("conv3d: extent " + std::to_string(n) + " with k=" +
                             std::to_string(dm.k) + " stride=" + std::to_string(stride) +
                             " padding=" + std::to_string(padding) +
                             " gives a non-integral output extent");
        return num / stride + 1;
    };
    dm.od = out_extent(dm.d);
    dm.oh = out_extent(dm.h);
    dm.ow = out_extent(dm.w);
    return dm;
}

// Stride-1 kernel used by both the forward pass and the input gradient (the
// latter is the same correlation with a channel-transposed, tap-flipped
// weight block and complementary padding). For each output row every
// contributing input row is copied once into a zero-padded scratch row and
// applied across all output channels while it sits in L1; the per-row
// accumulators keep a fixed summation order, so results are reproducible.
// Accumulate=true adds into `out` (bias must then be null).
template <class S, bool Accumulate>
void conv3d_rows_s1(std::int64_t batch, std::int64_t cin, std::int64_t d, std::int64_t h,
                    std::int64_t w, std::int64_t cout, std::int64_t k, std::int64_t p,
                    const S* __restrict in, const S* __restrict wt, const S* bias,
                    S* __restrict out) {
    const std::int64_t od = d + 2 * p - k + 1;
    const std::int64_t oh = h + 2 * p - k + 1;
    const std::int64_t ow = w + 2 * p - k + 1;
    const std::int64_t in_plane = h * w, in_chan = d * in_plane;
    const std::int64_t out_plane = oh * ow, out_chan = od * out_plane;
    std::vector<S> padrow(std::size_t(w + 2 * p), S(0));
    std::vector<S> acc(std::size_t(cout * ow));
    for (std::int64_t b = 0; b < batch; ++b) {
        const S* in_b = in + b * cin * in_chan;
        S* out_b = out + b * cout * out_chan;
        for (std::int64_t zo = 0; zo < od; ++zo)
            for (std::int64_t yo = 0; yo < oh; ++yo) {
                if (bias)
                    for (std::int64_t co = 0; co < cout; ++co)
                        std::fill_n(acc.data() + co * ow, ow, bias[co]);
                else
                    std::fill(acc.begin(), acc.end(), S(0));
                for (std::int64_t kz = 0; kz < k; ++kz) {
                    const std::int64_t zi = zo + kz - p;
                    if (zi < 0 || zi >= d) continue;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t yi = yo + ky - p;
                        if (yi < 0 || yi >= h) continue;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const S* irow = in_b + ci * in_chan + zi * in_plane + yi * w;
                            std::copy(irow, irow + w, padrow.data() + p);
                            const S* __restrict pr = padrow.data();
                            for (std::int64_t co = 0; co < cout; ++co) {
                                const S* wk = wt + (((co * cin + ci) * k + kz) * k + ky) * k;
                                S* __restrict arow = acc.data() + co * ow;
                                if (k == 3) {
                                    const S w0 = wk[0], w1 = wk[1], w2 = wk[2];
                                    for (std::int64_t x = 0; x < ow; ++x)
                                        arow[x] += w0 * pr[x] + w1 * pr[x + 1] + w2 * pr[x + 2];
                                } else if (k == 1) {
                                    const S w0 = wk[0];
                                    for (std::int64_t x = 0; x < ow; ++x) arow[x] += w0 * pr[x];
                                } else {
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        const S wv = wk[kx];
                                        const S* prx = pr + kx;
                                        for (std::int64_t x = 0; x < ow; ++x)
                                            arow[x] += wv * prx[x];
                                    }
                                }
                            }
                        }
                    }
                }
                for (std::int64_t co = 0; co < cout; ++co) {
                    S* orow = out_b + co * out_chan + zo * out_plane + yo * ow;
                    const S* arow = acc.data() + co * ow;
                    if constexpr (Accumulate)
                        for (std::int64_t x = 0; x < ow; ++x) orow[x] += arow[x];
                    else
                        std::copy(arow, arow + ow, orow);
                }
            }
    }
}

template <class S>
void conv3d_forward_s1(const Conv3dDims& dm, const S* in, const S* w, const S* bias, S* out) {
    conv3d_rows_s1<S, false>(dm.batch, dm.cin, dm.d, dm.h, dm.w, dm.cout, dm.k, dm.padding, in, w,
                             bias, out);
}

// Stride-1 weight gradient. Walks output rows once; for each tap row the
// k partial dot products run over fixed 8-wide lanes (reduced at the row
// end), which vectorizes without reassociating across rows. Tap totals
// accumulate in double.
template <class S>
void conv3d_dw_s1(const Conv3dDims& dm, const S* __restrict in, const S* __restrict g,
                  double* __restrict dw) {
    const std::int64_t k = dm.k, p = dm.padding;
    const std::int64_t in_plane = dm.h * dm.w, in_chan = dm.d * in_plane;
    const std::int64_t out_plane = dm.oh * dm.ow, out_chan = dm.od * out_plane;
    const std::int64_t ow = dm.ow;
    std::vector<S> padrow(std::size_t(dm.w + 2 * p), S(0));
    constexpr std::int64_t L = 8;
    for (std::int64_t b = 0; b < dm.batch; ++b) {
        const S* in_b = in + b * dm.cin * in_chan;
        const S* g_b = g + b * dm.cout * out_chan;
        for (std::int64_t zo = 0; zo < dm.od; ++zo)
            for (std::int64_t yo = 0; yo < dm.oh; ++yo)
                for (std::int64_t kz = 0; kz < k; ++kz) {
                    const std::int64_t zi = zo + kz - p;
                    if (zi < 0 || zi >= dm.d) continue;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t yi = yo + ky - p;
                        if (yi < 0 || yi >= dm.h) continue;
                        for (std::int64_t ci = 0; ci < dm.cin; ++ci) {
                            const S* irow = in_b + ci * in_chan + zi * in_plane + yi * dm.w;
                            std::copy(irow, irow + dm.w, padrow.data() + p);
                            const S* __restrict pr = padrow.data();
                            for (std::int64_t co = 0; co < dm.cout; ++co) {
                                const S* __restrict grow =
                                    g_b + co * out_chan + zo * out_plane + yo * ow;
                                double* dwt = dw + (((co * dm.cin + ci) * k + kz) * k + ky) * k;
                                if (k == 3) {
                                    S a0[L] = {}, a1[L] = {}, a2[L] = {};
                                    std::int64_t x = 0;
                                    for (; x + L <= ow; x += L)
                                        for (std::int64_t l = 0; l < L; ++l) {
                                            const S gv = grow[x + l];
                                            a0[l] += gv * pr[x + l];
                                            a1[l] += gv * pr[x + l + 1];
                                            a2[l] += gv * pr[x + l + 2];
                                        }
                                    S t0 = S(0), t1 = S(0), t2 = S(0);
                                    for (; x < ow; ++x) {
                                        const S gv = grow[x];
                                        t0 += gv * pr[x];
                                        t1 += gv * pr[x + 1];
                                        t2 += gv * pr[x + 2];
                                    }
                                    for (std::int64_t l = 0; l < L; ++l) {
                                        t0 += a0[l];
                                        t1 += a1[l];
                                        t2 += a2[l];
                                    }
                                    dwt[0] += double(t0);
                                    dwt[1] += double(t1);
                                    dwt[2] += double(t2);
                                } else {
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        S a[L] = {};
                                        std::int64_t x = 0;
                                        for (; x + L <= ow; x += L)
                                            for (std::int64_t l = 0; l < L; ++l)
                                                a[l] += grow[x + l] * pr[x + l + kx];
                                        S t = S(0);
                                        for (; x < ow; ++x) t += grow[x] * pr[x + kx];
                                        for (std::int64_t l = 0; l < L; ++l) t += a[l];
                                        dwt[kx] += double(t);
                                    }
                                }
                            }
                        }
                    }
                }
    }
}

// General-stride forward (rarely used; kept simple).
template <class S>
void conv3d_forward_generic(const Conv3dDims& dm, const S* in, const S* w, const S* bias, S* out) {
    const std::int64_t k = dm.k, p = dm.padding, s = dm.stride;
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < dm.batch; ++b)
        for (std::int64_t co = 0; co < dm.cout; ++co)
            for (std::int64_t zo = 0; zo < dm.od; ++zo)
                for (std::int64_t yo = 0; yo < dm.oh; ++yo)
                    for (std::int64_t xo = 0; xo < dm.ow; ++xo, ++o) {
                        double acc = double(bias[co]);
                        for (std::int64_t ci = 0; ci < dm.cin; ++ci)
                            for (std::int64_t kz = 0; kz < k; ++kz) {
                                const std::int64_t zi = zo * s - p + kz;
                                if (zi < 0 || zi >= dm.d) continue;
                                for (std::int64_t ky = 0; ky < k; ++ky) {
                                    const std::int64_t yi = yo * s - p + ky;
                                    if (yi < 0 || yi >= dm.h) continue;
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        const std::int64_t xi = xo * s - p + kx;
                                        if (xi < 0 || xi >= dm.w) continue;
                                        acc += double(w[((co * dm.cin + ci) * k * k + kz * k + ky) *
                                                            k +
                                                        kx]) *
                                               double(in[((b * dm.cin + ci) * dm.d + zi) * dm.h *
                                                             dm.w +
                                                         yi * dm.w + xi]);
                                    }
                                }
                            }
                        out[o] = S(acc);
                    }
}

}  // namespace detail

// input [B,Cin,D,H,W] (*) weight [Cout,Cin,k,k,k] + bias [Cout], odd cubic
// kernel. Differentiable with respect to all three operands.
template <class S>
TensorT<S> conv3d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  int stride, int padding) {
    const detail::Conv3dDims dm = detail::conv3d_check(input, weight, bias, stride, padding);
    std::vector<S> out(std::size_t(dm.batch * dm.cout * dm.od * dm.oh * dm.ow));
    if (dm.stride == 1)
        detail::conv3d_forward_s1(dm, input.value().data(), weight.value().data(),
                                  bias.value().data(), out.data());
    else
        detail::conv3d_forward_generic(dm, input.value().data(), weight.value().data(),
                                       bias.value().data(), out.data());

    auto in_node = input.node();
    auto w_node = weight.node();
    return detail::make_op_node<S>(
        {int(dm.batch), int(dm.cout), int(dm.od), int(dm.oh), int(dm.ow)}, std::move(out),
        {input, weight, bias},
        [dm, in_node, w_node](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            const std::int64_t k = dm.k, p = dm.padding, s = dm.stride;
            const std::int64_t in_plane = dm.h * dm.w, in_chan = dm.d * in_plane;
            const std::int64_t out_plane = dm.oh * dm.ow, out_chan = dm.od * out_plane;
            const S* w = w_node->value.data();
            const S* in = in_node->value.data();

            if (pg[2]) {  // bias
                for (std::int64_t b = 0; b < dm.batch; ++b)
                    for (std::int64_t co = 0; co < dm.cout; ++co) {
                        const S* grow = g.data() + (b * dm.cout + co) * out_chan;
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < out_chan; ++i) acc += double(grow[i]);
                        (*pg[2])[std::size_t(co)] += S(acc);
                    }
            }

            if (pg[0] && s == 1 && p < k) {
                // d(input) is the same correlation applied to the adjoint with
                // the weight block transposed over channels, taps flipped, and
                // padding k-1-p.
                std::vector<S> wt(std::size_t(dm.cout * dm.cin * k * k * k));
                for (std::int64_t co = 0; co < dm.cout; ++co)
                    for (std::int64_t ci = 0; ci < dm.cin; ++ci)
                        for (std::int64_t kz = 0; kz < k; ++kz)
                            for (std::int64_t ky = 0; ky < k; ++ky)
                                for (std::int64_t kx = 0; kx < k; ++kx)
                                    wt[std::size_t(
                                        (((ci * dm.cout + co) * k + (k - 1 - kz)) * k +
                                         (k - 1 - ky)) *
                                            k +
                                        (k - 1 - kx))] =
                                        w[(((co * dm.cin + ci) * k + kz) * k + ky) * k + kx];
                detail::conv3d_rows_s1<S, true>(dm.batch, dm.cout, dm.od, dm.oh, dm.ow, dm.cin, k,
                                                k - 1 - p, g.data(), wt.data(), nullptr,
                                                pg[0]->data());
            } else if (pg[0]) {  // generic stride / over-padded
                S* din = pg[0]->data();
                for (std::int64_t b = 0; b < dm.batch; ++b)
                    for (std::int64_t co = 0; co < dm.cout; ++co)
                        for (std::int64_t zo = 0; zo < dm.od; ++zo)
                            for (std::int64_t yo = 0; yo < dm.oh; ++yo)
                                for (std::int64_t xo = 0; xo < dm.ow; ++xo) {
                                    const S gv = g[std::size_t((b * dm.cout + co) * out_chan +
                                                               zo * out_plane + yo * dm.ow + xo)];
                                    for (std::int64_t ci = 0; ci < dm.cin; ++ci)
                                        for (std::int64_t kz = 0; kz < k; ++kz) {
                                            const std::int64_t zi = zo * s - p + kz;
                                            if (zi < 0 || zi >= dm.d) continue;
                                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                                const std::int64_t yi = yo * s - p + ky;
                                                if (yi < 0 || yi >= dm.h) continue;
                                                for (std::int64_t kx = 0; kx < k; ++kx) {
                                                    const std::int64_t xi = xo * s - p + kx;
                                                    if (xi < 0 || xi >= dm.w) continue;
                                                    din[(b * dm.cin + ci) * in_chan + zi * in_plane +
                                                        yi * dm.w + xi] +=
                                                        gv * w[((co * dm.cin + ci) * k * k +
                                                                kz * k + ky) *
                                                                   k +
                                                               kx];
                                                }
                                            }
                                        }
                                }
            }

            if (pg[1]) {
                std::vector<double> dw(std::size_t(dm.cout * dm.cin * k * k * k), 0.0);
                if (s == 1) {
                    detail::conv3d_dw_s1(dm, in, g.data(), dw.data());
                } else {
                    for (std::int64_t co = 0; co < dm.cout; ++co)
                        for (std::int64_t ci = 0; ci < dm.cin; ++ci)
                            for (std::int64_t kz = 0; kz < k; ++kz)
                                for (std::int64_t ky = 0; ky < k; ++ky)
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        double acc = 0.0;
                                        for (std::int64_t b = 0; b < dm.batch; ++b) {
                                            const S* g_c =
                                                g.data() + (b * dm.cout + co) * out_chan;
                                            const S* in_c = in + (b * dm.cin + ci) * in_chan;
                                            for (std::int64_t zo = 0; zo < dm.od; ++zo) {
                                                const std::int64_t zi = zo * s - p + kz;
                                                if (zi < 0 || zi >= dm.d) continue;
                                                for (std::int64_t yo = 0; yo < dm.oh; ++yo) {
                                                    const std::int64_t yi = yo * s - p + ky;
                                                    if (yi < 0 || yi >= dm.h) continue;
                                                    for (std::int64_t xo = 0; xo < dm.ow; ++xo) {
                                                        const std::int64_t xi = xo * s - p + kx;
                                                        if (xi < 0 || xi >= dm.w) continue;
                                                        acc += double(g_c[zo * out_plane +
                                                                          yo * dm.ow + xo]) *
                                                               double(in_c[zi * in_plane +
                                                                           yi * dm.w + xi]);
                                                    }
                                                }
                                            }
                                        }
                                        dw[std::size_t(
                                            ((co * dm.cin + ci) * k * k + kz * k + ky) * k +
                                            kx)] = acc;
                                    }
                }
                S* dst = pg[1]->data();
                for (std::size_t i = 0; i < dw.size(); ++i) dst[i] += S(dw[i]);
            }
        });
}

enum class ResampleFactor { up2, up4, down2, down4 };

inline int resample_scale(ResampleFactor f) {
    switch (f) {
        case ResampleFactor::up2: return 2;
        case ResampleFactor::up4: return 4;
        case ResampleFactor::down2: return 2;
        case ResampleFactor::down4: return 4;
    }
    return 0;
}

inline bool resample_is_up(ResampleFactor f) {
    return f == ResampleFactor::up2 || f == ResampleFactor::up4;
}

namespace detail {

// Per-axis interpolation taps for trilinear upsampling. Output sample xo maps
// to input coordinate (xo + 0.5)/f - 0.5 (block centers); the cell index is
// clamped so border samples extrapolate the boundary cell's linear model,
// which makes upsampling an exact inverse of block averaging on affine ramps.
struct UpTaps {
    std::vector<int> i0;
    std::vector<double> frac;
};

inline UpTaps up_taps(std::int64_t n_in, int factor) {
    UpTaps taps;
    const std::int64_t n_out = n_in * factor;
    taps.i0.resize(std::size_t(n_out));
    taps.frac.resize(std::size_t(n_out));
    for (std::int64_t o = 0; o < n_out; ++o) {
        double t = (double(o) + 0.5) / double(factor) - 0.5;
        std::int64_t c = std::min<std::int64_t>(std::max<std::int64_t>(0, std::int64_t(std::floor(t))),
                                                std::max<std::int64_t>(n_in - 2, 0));
        taps.i0[std::size_t(o)] = int(c);
        taps.frac[std::size_t(o)] = (n_in == 1) ? 0.0 : t - double(c);
    }
    return taps;
}

}  // namespace detail

// Up: trilinear interpolation to factor x the spatial extents. Down: average
// pooling over factor^3 blocks (extents must divide evenly).
template <class S>
TensorT<S> resample(const TensorT<S>& input, ResampleFactor factor) {
    const Shape& is = input.shape();
    if (is.size() != 5) throw ShapeError("resample: expected rank-5, got " + shape_str(is));
    const int f = resample_scale(factor);
    const std::int64_t bc = std::int64_t(is[0]) * is[1];
    const std::int64_t d = is[2], h = is[3], w = is[4];

    if (!resample_is_up(factor)) {
        if (d % f || h % f || w % f)
            throw ShapeError("resample: extents " + shape_str(is) + " not divisible by " +
                             std::to_string(f));
        const std::int64_t od = d / f, oh = h / f, ow = w / f;
        std::vector<S> out(std::size_t(bc * od * oh * ow));
        const S inv = S(1) / S(f * f * f);
        std::int64_t o = 0;
        for (std::int64_t i = 0; i < bc; ++i) {
            const S* src = input.value().data() + i * d * h * w;
            for (std::int64_t zo = 0; zo < od; ++zo)
                for (std::int64_t yo = 0; yo < oh; ++yo)
                    for (std::int64_t xo = 0; xo < ow; ++xo, ++o) {
                        S acc = S(0);
                        for (int dz = 0; dz < f; ++dz)
                            for (int dy = 0; dy < f; ++dy) {
                                const S* row =
                                    src + (zo * f + dz) * h * w + (yo * f + dy) * w + xo * f;
                                for (int dx = 0; dx < f; ++dx) acc += row[dx];
                            }
                        out[std::size_t(o)] = acc * inv;
                    }
        }
        return detail::make_op_node<S>(
            {is[0], is[1], int(od), int(oh), int(ow)}, std::move(out), {input},
            [bc, d, h, w, od, oh, ow, f, inv](const std::vector<S>& g,
                                              const std::vector<std::vector<S>*>& pg) {
                if (!pg[0]) return;
                std::int64_t o = 0;
                for (std::int64_t i = 0; i < bc; ++i) {
                    S* dst = pg[0]->data() + i * d * h * w;
                    for (std::int64_t zo = 0; zo < od; ++zo)
                        for (std::int64_t yo = 0; yo < oh; ++yo)
                            for (std::int64_t xo = 0; xo < ow; ++xo, ++o) {
                                const S gv = g[std::size_t(o)] * inv;
                                for (int dz = 0; dz < f; ++dz)
                                    for (int dy = 0; dy < f; ++dy) {
                                        S* row = dst + (zo * f + dz) * h * w + (yo * f + dy) * w +
                                                 xo * f;
                                        for (int dx = 0; dx < f; ++dx) row[dx] += gv;
                                    }
                            }
                }
            });
    }

    const std::int64_t od = d * f, oh = h * f, ow = w * f;
    const auto tz = detail::up_taps(d, f), ty = detail::up_taps(h, f), tx = detail::up_taps(w, f);
    std::vector<S> out(std::size_t(bc * od * oh * ow));
    std::int64_t o = 0;
    for (std::int64_t i = 0; i < bc; ++i) {
        const S* src = input.value().data() + i * d * h * w;
        for (std::int64_t zo = 0; zo < od; ++zo) {
            const std::int64_t z0 = tz.i0[std::size_t(zo)];
            const std::int64_t z1 = std::min(z0 + 1, d - 1);
            const double fz = tz.frac[std::size_t(zo)];
            for (std::int64_t yo = 0; yo < oh; ++yo) {
                const std::int64_t y0 = ty.i0[std::size_t(yo)];
                const std::int64_t y1 = std::min(y0 + 1, h - 1);
                const double fy = ty.frac[std::size_t(yo)];
                const S* r00 = src + z0 * h * w + y0 * w;
                const S* r10 = src + z0 * h * w + y1 * w;
                const S* r01 = src + z1 * h * w + y0 * w;
                const S* r11 = src + z1 * h * w + y1 * w;
                for (std::int64_t xo = 0; xo < ow; ++xo, ++o) {
                    const std::int64_t x0 = tx.i0[std::size_t(xo)];
                    const std::int64_t x1 = std::min(x0 + 1, w - 1);
                    const double fx = tx.frac[std::size_t(xo)];
                    const double c00 = double(r00[x0]) * (1 - fx) + double(r00[x1]) * fx;
                    const double c10 = double(r10[x0]) * (1 - fx) + double(r10[x1]) * fx;
                    const double c01 = double(r01[x0]) * (1 - fx) + double(r01[x1]) * fx;
                    const double c11 = double(r11[x0]) * (1 - fx) + double(r11[x1]) * fx;
                    out[std::size_t(o)] =
                        S((c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz);
                }
            }
        }
    }
    return detail::make_op_node<S>(
        {is[0], is[1], int(od), int(oh), int(ow)}, std::move(out), {input},
        [bc, d, h, w, od, oh, ow, tz, ty, tx](const std::vector<S>& g,
                                              const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            std::int64_t o = 0;
            for (std::int64_t i = 0; i < bc; ++i) {
                S* dst = pg[0]->data() + i * d * h * w;
                for (std::int64_t zo = 0; zo < od; ++zo) {
                    const std::int64_t z0 = tz.i0[std::size_t(zo)];
                    const std::int64_t z1 = std::min(z0 + 1, d - 1);
                    const double fz = tz.frac[std::size_t(zo)];
                    for (std::int64_t yo = 0; yo < oh; ++yo) {
                        const std::int64_t y0 = ty.i0[std::size_t(yo)];
                        const std::int64_t y1 = std::min(y0 + 1, h - 1);
                        const double fy = ty.frac[std::size_t(yo)];
                        for (std::int64_t xo = 0; xo < ow; ++xo, ++o) {
                            const std::int64_t x0 = tx.i0[std::size_t(xo)];
                            const std::int64_t x1 = std::min(x0 + 1, w - 1);
                            const double fx = tx.frac[std::size_t(xo)];
                            const double gv = double(g[std::size_t(o)]);
                            dst[z0 * h * w + y0 * w + x0] += S(gv * (1 - fx) * (1 - fy) * (1 - fz));
                            dst[z0 * h * w + y0 * w + x1] += S(gv * fx * (1 - fy) * (1 - fz));
                            dst[z0 * h * w + y1 * w + x0] += S(gv * (1 - fx) * fy * (1 - fz));
                            dst[z0 * h * w + y1 * w + x1] += S(gv * fx * fy * (1 - fz));
                            dst[z1 * h * w + y0 * w + x0] += S(gv * (1 - fx) * (1 - fy) * fz);
                            dst[z1 * h * w + y0 * w + x1] += S(gv * fx * (1 - fy) * fz);
                            dst[z1 * h * w + y1 * w + x0] += S(gv * (1 - fx) * fy * fz);
                            dst[z1 * h * w + y1 * w + x1] += S(gv * fx * fy * fz);
                        }
                    }
                }
            }
        });
}

}  // namespace pour
