#pragma once

#include <optional>
#include <utility>

#include "pour/conv.hpp"
#include "pour/rng.hpp"

namespace pour {

// OUR-Net: three cooperating branches over a shared input volume.
//   UnNet — downsample-first U-shape (channels C, 2C, 4C) for abstracted
//           low-resolution context;
//   OvNet — upsample-first U-shape (constant C channels) for over-represented
//           fine detail;
//   FuNet — full-resolution chain of restoration blocks that concatenates both
//           branches' gated outputs with its own stem features and absorbs
//           their multi-scale encoder/decoder features additively.
// Every head (x_u, x_o, x_f) predicts a 1-channel volume at input resolution
// and is supervised; the training loss is the sum of the three MSE terms.

struct OurNetConfig {
    int in_channels = 2;
    int base_channels = 8;
    int frb_rseb_count = 4;
    int se_reduction = 2;
    bool enable_unnet = true;
    bool enable_ovnet = true;
    static constexpr int levels = 3;  // fusion wiring below is written for 3

    void validate() const {
        if (in_channels <= 0) throw ContractError("ournet: in_channels must be positive");
        if (base_channels <= 0) throw ContractError("ournet: base_channels must be positive");
        if (frb_rseb_count <= 0) throw ContractError("ournet: frb_rseb_count must be positive");
        if (se_reduction <= 0) throw ContractError("ournet: se_reduction must be positive");
        if (base_channels < se_reduction)
            throw ContractError("ournet: base_channels must be >= se_reduction");
    }

    int fused_channels() const {
        return base_channels * (1 + int(enable_unnet) + int(enable_ovnet));
    }
};

template <class S>
struct ConvParamsT {
    TensorT<S> w, b;
};

template <class S>
struct RsebParamsT {
    ConvParamsT<S> ex1, ex2;               // two feature convs (3^3)
    TensorT<S> fc1_w, fc1_b, fc2_w, fc2_b;  // squeeze-and-excitation gate
};

template <class S>
struct BranchParamsT {
    ConvParamsT<S> stem;
    RsebParamsT<S> stem_rseb;
    RsebParamsT<S> enc1[2], enc2[2], enc3[2];
    ConvParamsT<S> t12, t23;  // encoder transitions (resample + conv)
    RsebParamsT<S> dec3[2], dec2[2], dec1[2];
    ConvParamsT<S> t32, t21;      // decoder transitions
    ConvParamsT<S> fuse2, fuse1;  // skip-concat reducers
    ConvParamsT<S> head;          // 1x1x1, channels -> 1
    ConvParamsT<S> att1, att2;    // gated connection into FuNet
};

template <class S>
struct FunetParamsT {
    ConvParamsT<S> init;
    RsebParamsT<S> init_rseb;
    std::vector<RsebParamsT<S>> frb[3];
    // fuse_u*[l], fuse_o*[l]: level l+1 feature projections into the fused
    // width; created only for enabled branches.
    ConvParamsT<S> fuse_ue[3], fuse_ud[3], fuse_oe[3], fuse_od[3];
    ConvParamsT<S> head;  // 1x1x1, fused channels -> 1
};

template <class S>
struct OurNetT {
    OurNetConfig cfg;
    std::optional<BranchParamsT<S>> unnet, ovnet;
    FunetParamsT<S> funet;
    // Creation-order registry; checkpoint layout and optimizer state follow it.
    std::vector<std::pair<std::string, TensorT<S>>> named;
};

using OurNet = OurNetT<float>;

template <class S>
std::vector<TensorT<S>> param_tensors(const OurNetT<S>& net) {
    std::vector<TensorT<S>> out;
    out.reserve(net.named.size());
    for (const auto& [name, t] : net.named) out.push_back(t);
    return out;
}

namespace detail {

// Draws every parameter from one sequential stream, so a given (seed, config)
// always produces bit-identical weights.
template <class S>
class ParamInit {
  public:
    ParamInit(std::uint64_t seed, std::vector<std::pair<std::string, TensorT<S>>>& registry)
        : rng_(seed), registry_(registry) {}

    TensorT<S> tensor(const std::string& name, Shape shape, std::int64_t fan_in) {
        std::vector<S> v(std::size_t(shape_numel(shape)));
        const double bound = 1.0 / std::sqrt(double(fan_in));
        for (auto& x : v) x = S(rng_.uniform(-bound, bound));
        auto t = TensorT<S>::from(std::move(shape), std::move(v), true);
        registry_.emplace_back(name, t);
        return t;
    }

    ConvParamsT<S> conv(const std::string& name, int cin, int cout, int k) {
        ConvParamsT<S> c;
        const std::int64_t fan_in = std::int64_t(cin) * k * k * k;
        c.w = tensor(name + ".w", {cout, cin, k, k, k}, fan_in);
        c.b = tensor(name + ".b", {cout}, fan_in);
        return c;
    }

    RsebParamsT<S> rseb(const std::string& name, int c, int reduction) {
        RsebParamsT<S> r;
        r.ex1 = conv(name + ".ex1", c, c, 3);
        r.ex2 = conv(name + ".ex2", c, c, 3);
        const int hidden = std::max(1, c / reduction);
        r.fc1_w = tensor(name + ".se.fc1.w", {c, hidden}, c);
        r.fc1_b = tensor(name + ".se.fc1.b", {hidden}, c);
        r.fc2_w = tensor(name + ".se.fc2.w", {hidden, c}, hidden);
        r.fc2_b = tensor(name + ".se.fc2.b", {c}, hidden);
        return r;
    }

  private:
    Rng rng_;
    std::vector<std::pair<std::string, TensorT<S>>>& registry_;
};

template <class S>
BranchParamsT<S> make_branch(ParamInit<S>& f, const std::string& prefix, int in_channels,
                             std::array<int, 3> ch, int red) {
    BranchParamsT<S> p;
    p.stem = f.conv(prefix + ".stem.conv", in_channels, ch[0], 3);
    p.stem_rseb = f.rseb(prefix + ".stem.rseb", ch[0], red);
    for (int i = 0; i < 2; ++i)
        p.enc1[i] = f.rseb(prefix + ".enc1.rseb" + std::to_string(i + 1), ch[0], red);
    p.t12 = f.conv(prefix + ".t12.conv", ch[0], ch[1], 3);
    for (int i = 0; i < 2; ++i)
        p.enc2[i] = f.rseb(prefix + ".enc2.rseb" + std::to_string(i + 1), ch[1], red);
    p.t23 = f.conv(prefix + ".t23.conv", ch[1], ch[2], 3);
    for (int i = 0; i < 2; ++i)
        p.enc3[i] = f.rseb(prefix + ".enc3.rseb" + std::to_string(i + 1), ch[2], red);
    for (int i = 0; i < 2; ++i)
        p.dec3[i] = f.rseb(prefix + ".dec3.rseb" + std::to_string(i + 1), ch[2], red);
    p.t32 = f.conv(prefix + ".t32.conv", ch[2], ch[1], 3);
    p.fuse2 = f.conv(prefix + ".fuse2.conv", 2 * ch[1], ch[1], 3);
    for (int i = 0; i < 2; ++i)
        p.dec2[i] = f.rseb(prefix + ".dec2.rseb" + std::to_string(i + 1), ch[1], red);
    p.t21 = f.conv(prefix + ".t21.conv", ch[1], ch[0], 3);
    p.fuse1 = f.conv(prefix + ".fuse1.conv", 2 * ch[0], ch[0], 3);
    for (int i = 0; i < 2; ++i)
        p.dec1[i] = f.rseb(prefix + ".dec1.rseb" + std::to_string(i + 1), ch[0], red);
    p.head = f.conv(prefix + ".head.conv", ch[0], 1, 1);
    p.att1 = f.conv(prefix + ".att1.conv", ch[0], ch[0], 3);
    p.att2 = f.conv(prefix + ".att2.conv", 1, ch[0], 3);
    return p;
}

}  // namespace detail

template <class S>
OurNetT<S> make_ournet(const OurNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    OurNetT<S> net;
    net.cfg = cfg;
    detail::ParamInit<S> f(substream_seed(seed, "init"), net.named);
    const int C = cfg.base_channels;
    if (cfg.enable_unnet)
        net.unnet = detail::make_branch(f, "unnet", cfg.in_channels, {C, 2 * C, 4 * C},
                                        cfg.se_reduction);
    if (cfg.enable_ovnet)
        net.ovnet = detail::make_branch(f, "ovnet", cfg.in_channels, {C, C, C}, cfg.se_reduction);

    const int cf = cfg.fused_channels();
    auto& fu = net.funet;
    fu.init = f.conv("funet.init.conv", cfg.in_channels, C, 3);
    fu.init_rseb = f.rseb("funet.init.rseb", C, cfg.se_reduction);
    const int u_ch[3] = {C, 2 * C, 4 * C};
    for (int lvl = 0; lvl < 3; ++lvl) {
        const std::string fn = "funet.frb" + std::to_string(lvl + 1);
        for (int i = 0; i < cfg.frb_rseb_count; ++i)
            fu.frb[lvl].push_back(f.rseb(fn + ".rseb" + std::to_string(i + 1), cf,
                                         cfg.se_reduction));
        // Fusion taps run deepest level first (frb1 absorbs level-3 features).
        const int tap = 2 - lvl;
        const std::string ts = std::to_string(tap + 1);
        if (cfg.enable_ovnet) {
            fu.fuse_oe[tap] = f.conv("funet.fuse_oe" + ts + ".conv", C, cf, 3);
            fu.fuse_od[tap] = f.conv("funet.fuse_od" + ts + ".conv", C, cf, 3);
        }
        if (cfg.enable_unnet) {
            fu.fuse_ue[tap] = f.conv("funet.fuse_ue" + ts + ".conv", u_ch[tap], cf, 3);
            fu.fuse_ud[tap] = f.conv("funet.fuse_ud" + ts + ".conv", u_ch[tap], cf, 3);
        }
    }
    fu.head = f.conv("funet.head.conv", cf, 1, 1);
    return net;
}

// ---- forward ----------------------------------------------------------------

namespace detail {

template <class S>
TensorT<S> conv_apply(const TensorT<S>& x, const ConvParamsT<S>& p) {
    const int k = p.w.shape()[2];
    return conv3d(x, p.w, p.b, 1, k / 2);
}

}  // namespace detail

// Channel gate: per-channel scale from pooled statistics, squeezed through a
// two-layer bottleneck and a sigmoid.
template <class S>
TensorT<S> se_layer(const TensorT<S>& f, const RsebParamsT<S>& p) {
    auto pooled = global_avg_pool(f);
    auto scales = sigmoid(dense(relu(dense(pooled, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b));
    return scale_channels(f, scales);
}

// Residual squeeze-and-excitation block: two convs, channel-gated, added back
// onto the input.
template <class S>
TensorT<S> rseb_forward(const TensorT<S>& f_in, const RsebParamsT<S>& p) {
    auto feat = detail::conv_apply(relu(detail::conv_apply(f_in, p.ex1)), p.ex2);
    return add(f_in, se_layer(feat, p));
}

template <class S>
struct BranchFeaturesT {
    TensorT<S> e1, e2, e3, d3, d2, d1, head;
};

// One U-shaped branch. down_first=true gives the context branch (encoder
// shrinks, channels grow); down_first=false gives the detail branch (encoder
// expands at constant width). Decoder mirrors back with skip concat at each
// level; head is a linear 1-channel projection of d1.
template <class S>
BranchFeaturesT<S> branch_forward(const TensorT<S>& x, const BranchParamsT<S>& p,
                                  bool down_first) {
    const Shape& xs = x.shape();
    if (xs.size() != 5)
        throw ShapeError("branch_forward: expected rank-5 input, got " + shape_str(xs));
    if (xs[2] % 4 || xs[3] % 4 || xs[4] % 4)
        throw ShapeError("branch_forward: spatial extents must be divisible by 4, got " +
                         shape_str(xs));
    const auto enc_step = down_first ? ResampleFactor::down2 : ResampleFactor::up2;
    const auto dec_step = down_first ? ResampleFactor::up2 : ResampleFactor::down2;

    BranchFeaturesT<S> out;
    auto s = rseb_forward(relu(detail::conv_apply(x, p.stem)), p.stem_rseb);
    out.e1 = rseb_forward(rseb_forward(s, p.enc1[0]), p.enc1[1]);
    auto t2 = relu(detail::conv_apply(resample(out.e1, enc_step), p.t12));
    out.e2 = rseb_forward(rseb_forward(t2, p.enc2[0]), p.enc2[1]);
    auto t3 = relu(detail::conv_apply(resample(out.e2, enc_step), p.t23));
    out.e3 = rseb_forward(rseb_forward(t3, p.enc3[0]), p.enc3[1]);

    out.d3 = rseb_forward(rseb_forward(out.e3, p.dec3[0]), p.dec3[1]);
    auto u2 = relu(detail::conv_apply(resample(out.d3, dec_step), p.t32));
    auto c2 = relu(detail::conv_apply(concat_channels<S>({u2, out.e2}), p.fuse2));
    out.d2 = rseb_forward(rseb_forward(c2, p.dec2[0]), p.dec2[1]);
    auto u1 = relu(detail::conv_apply(resample(out.d2, dec_step), p.t21));
    auto c1 = relu(detail::conv_apply(concat_channels<S>({u1, out.e1}), p.fuse1));
    out.d1 = rseb_forward(rseb_forward(c1, p.dec1[0]), p.dec1[1]);
    out.head = detail::conv_apply(out.d1, p.head);
    return out;
}

// Gated hand-off into FuNet: d1 plus a linear feature map modulated by a
// sigmoid attention map derived from the branch's own 1-channel head.
template <class S>
TensorT<S> attention_connect(const TensorT<S>& d1, const TensorT<S>& head,
                             const ConvParamsT<S>& p1, const ConvParamsT<S>& p2) {
    const Shape& ds = d1.shape();
    const Shape& hs = head.shape();
    if (hs.size() != 5 || hs[1] != 1)
        throw ShapeError("attention_connect: head must have 1 channel, got " + shape_str(hs));
    if (ds.size() != 5 || ds[0] != hs[0] || ds[2] != hs[2] || ds[3] != hs[3] || ds[4] != hs[4])
        throw ShapeError("attention_connect: spatial mismatch " + shape_str(ds) + " vs " +
                         shape_str(hs));
    return add(d1, mul(detail::conv_apply(d1, p1), sigmoid(detail::conv_apply(head, p2))));
}

// Chain of RSEBs with an input-to-output residual.
template <class S>
TensorT<S> frb_forward(const TensorT<S>& x, const std::vector<RsebParamsT<S>>& blocks) {
    auto y = x;
    for (const auto& b : blocks) y = rseb_forward(y, b);
    return add(x, y);
}

// Full-resolution branch. Concatenates the gated branch features with stem
// features of the input, then runs three restoration blocks, each followed by
// additive multi-scale fusion: level-3 features arrive resampled by 4, level-2
// by 2, level-1 through a plain conv.
template <class S>
TensorT<S> funet_forward(const TensorT<S>& x_in, const TensorT<S>* u_att,
                         const BranchFeaturesT<S>* uf, const TensorT<S>* o_att,
                         const BranchFeaturesT<S>* of, const FunetParamsT<S>& p) {
    std::vector<TensorT<S>> parts;
    if (u_att) parts.push_back(*u_att);
    if (o_att) parts.push_back(*o_att);
    parts.push_back(rseb_forward(relu(detail::conv_apply(x_in, p.init)), p.init_rseb));
    auto f = parts.size() == 1 ? parts[0] : concat_channels<S>(parts);

    static constexpr ResampleFactor up[3] = {ResampleFactor::up2 /*unused*/, ResampleFactor::up2,
                                             ResampleFactor::up4};
    static constexpr ResampleFactor down[3] = {ResampleFactor::down2 /*unused*/,
                                               ResampleFactor::down2, ResampleFactor::down4};
    for (int lvl = 0; lvl < 3; ++lvl) {
        f = frb_forward(f, p.frb[lvl]);
        const int tap = 2 - lvl;
        auto proj = [&](const TensorT<S>& feat, const ConvParamsT<S>& cp, bool is_over) {
            if (tap == 0) return detail::conv_apply(feat, cp);
            const ResampleFactor step = is_over ? down[tap] : up[tap];
            return detail::conv_apply(resample(feat, step), cp);
        };
        if (of) {
            const TensorT<S>& e = tap == 2 ? of->e3 : tap == 1 ? of->e2 : of->e1;
            const TensorT<S>& d = tap == 2 ? of->d3 : tap == 1 ? of->d2 : of->d1;
            f = add(f, proj(e, p.fuse_oe[tap], true));
            f = add(f, proj(d, p.fuse_od[tap], true));
        }
        if (uf) {
            const TensorT<S>& e = tap == 2 ? uf->e3 : tap == 1 ? uf->e2 : uf->e1;
            const TensorT<S>& d = tap == 2 ? uf->d3 : tap == 1 ? uf->d2 : uf->d1;
            f = add(f, proj(e, p.fuse_ue[tap], false));
            f = add(f, proj(d, p.fuse_ud[tap], false));
        }
    }
    return detail::conv_apply(f, p.head);
}

template <class S>
struct OurNetOutputT {
    TensorT<S> x_f;        // full-resolution head (the map estimate)
    TensorT<S> x_u, x_o;   // branch heads; undefined when the branch is off
};

using OurNetOutput = OurNetOutputT<float>;

template <class S>
OurNetOutputT<S> ournet_forward(const TensorT<S>& x, const OurNetT<S>& net) {
    const Shape& xs = x.shape();
    if (xs.size() != 5)
        throw ShapeError("ournet_forward: expected rank-5 input, got " + shape_str(xs));
    if (xs[1] != net.cfg.in_channels)
        throw ShapeError("ournet_forward: input has " + std::to_string(xs[1]) +
                         " channels, config expects " + std::to_string(net.cfg.in_channels));
    if (xs[2] % 4 || xs[3] % 4 || xs[4] % 4)
        throw ShapeError("ournet_forward: spatial extents must be divisible by 4, got " +
                         shape_str(xs));

    std::optional<BranchFeaturesT<S>> uf, of;
    TensorT<S> u_att, o_att;
    if (net.unnet) {
        uf = branch_forward(x, *net.unnet, true);
        u_att = attention_connect(uf->d1, uf->head, net.unnet->att1, net.unnet->att2);
    }
    if (net.ovnet) {
        of = branch_forward(x, *net.ovnet, false);
        o_att = attention_connect(of->d1, of->head, net.ovnet->att1, net.ovnet->att2);
    }
    OurNetOutputT<S> out;
    out.x_f = funet_forward(x, uf ? &u_att : nullptr, uf ? &*uf : nullptr,
                            of ? &o_att : nullptr, of ? &*of : nullptr, net.funet);
    if (uf) out.x_u = uf->head;
    if (of) out.x_o = of->head;
    return out;
}

// Sum of per-head MSE terms; heads of disabled branches contribute nothing.
template <class S>
TensorT<S> total_loss(const OurNetOutputT<S>& out, const TensorT<S>& x_gt) {
    auto loss = mse(out.x_f, x_gt);
    if (out.x_u.defined()) loss = add(loss, mse(out.x_u, x_gt));
    if (out.x_o.defined()) loss = add(loss, mse(out.x_o, x_gt));
    return loss;
}

}  // namespace pour
