#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pour/error.hpp"

namespace pour {

// Dense N-D tensors participating in a reverse-mode differentiation graph.
// The scalar type is a template parameter: training runs on float, gradient
// verification runs the same code on double.
//
// Graph semantics follow the usual define-by-run model: every op computes its
// value eagerly and, if any input requires gradients, records a closure that
// scatters the output adjoint back to its parents. backward() walks the graph
// in reverse topological order with transient adjoint buffers and accumulates
// persistent gradients only into leaves, so repeated backward calls without
// zero_grad() add up.

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

template <class S>
struct TensorNodeT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // leaves only; lazily allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    // Accumulates parent adjoints from this node's adjoint. parent_grads[i]
    // is null when parent i does not require gradients.
    std::function<void(const std::vector<S>&, const std::vector<std::vector<S>*>&)> backprop;

    bool is_leaf() const { return parents.empty() && !backprop; }
};

template <class S>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return from(std::move(shape), {}, requires_grad, true);
    }

    static TensorT from(Shape shape, std::vector<S> data, bool requires_grad = false,
                        bool fill_zero = false) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(shape));
        auto node = std::make_shared<TensorNodeT<S>>();
        std::size_t n = std::size_t(shape_numel(shape));
        if (fill_zero)
            node->value.assign(n, S(0));
        else {
            if (data.size() != n)
                throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
            node->value = std::move(data);
        }
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        TensorT t;
        t.node_ = std::move(node);
        return t;
    }

    static TensorT scalar(S v) { return from({}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return shape_numel(node_->shape); }
    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& value() { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }

    // Persistent accumulated gradient of a leaf; empty until the first
    // backward pass reaches it.
    const std::vector<S>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

    S item() const {
        if (numel() != 1) throw ContractError("tensor: item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

    std::shared_ptr<TensorNodeT<S>> node() const { return node_; }

  private:
    std::shared_ptr<TensorNodeT<S>> node_;
};

namespace detail {

template <class S>
TensorT<S> make_op_node(Shape shape, std::vector<S> value, std::vector<TensorT<S>> inputs,
                        std::function<void(const std::vector<S>&,
                                           const std::vector<std::vector<S>*>&)> backprop) {
    TensorT<S> out = TensorT<S>::from(std::move(shape), std::move(value));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        auto node = out.node();
        node->requires_grad = true;
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backprop = std::move(backprop);
    }
    return out;
}

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise suite ----------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<S> v(a.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    return detail::make_op_node<S>(
        a.shape(), std::move(v), {a, b},
        [](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            for (int p = 0; p < 2; ++p)
                if (pg[p])
                    for (std::size_t i = 0; i < g.size(); ++i) (*pg[p])[i] += g[i];
        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<S> v(a.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_node<S>(
        a.shape(), std::move(v), {a, b},
        [an, bn](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            if (pg[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bn->value[i];
            if (pg[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * an->value[i];
        });
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    std::vector<S> v(x.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] > S(0) ? x.value()[i] : S(0);
    auto xn = x.node();
    return detail::make_op_node<S>(
        x.shape(), std::move(v), {x},
        [xn](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xn->value[i] > S(0)) (*pg[0])[i] += g[i];
        });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    std::vector<S> v(x.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = S(1) / (S(1) + std::exp(-x.value()[i]));
    auto out = detail::make_op_node<S>(x.shape(), std::move(v), {x}, nullptr);
    if (out.requires_grad()) {
        // Raw self-pointer: a shared_ptr here would pin the node (and the
        // whole upstream graph) in a reference cycle.
        TensorNodeT<S>* on = out.node().get();
        on->backprop = [on](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                S y = on->value[i];
                (*pg[0])[i] += g[i] * y * (S(1) - y);
            }
        };
    }
    return out;
}

template <class S>
TensorT<S> tanh(const TensorT<S>& x) {
    std::vector<S> v(x.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.value()[i]);
    auto out = detail::make_op_node<S>(x.shape(), std::move(v), {x}, nullptr);
    if (out.requires_grad()) {
        TensorNodeT<S>* on = out.node().get();
        on->backprop = [on](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                S y = on->value[i];
                (*pg[0])[i] += g[i] * (S(1) - y * y);
            }
        };
    }
    return out;
}

// Concatenation along the channel axis (axis 1). All other extents must agree.
template <class S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: empty input list");
    const Shape& s0 = parts[0].shape();
    if (s0.size() < 2) throw ShapeError("concat_channels: rank must be >= 2");
    int total_c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw ShapeError("concat_channels: rank mismatch " + shape_str(s) + " vs " +
                             shape_str(s0));
        for (std::size_t a = 0; a < s.size(); ++a)
            if (a != 1 && s[a] != s0[a])
                throw ShapeError("concat_channels: non-channel extent mismatch " + shape_str(s) +
                                 " vs " + shape_str(s0));
        total_c += s[1];
    }
    Shape out_shape = s0;
    out_shape[1] = total_c;

    const std::int64_t batch = s0[0];
    std::int64_t inner = 1;
    for (std::size_t a = 2; a < s0.size(); ++a) inner *= s0[a];

    std::vector<S> v(std::size_t(shape_numel(out_shape)));
    std::int64_t c_off = 0;
    for (const auto& p : parts) {
        const std::int64_t c = p.shape()[1];
        for (std::int64_t b = 0; b < batch; ++b)
            std::copy_n(p.value().data() + b * c * inner, std::size_t(c * inner),
                        v.data() + (b * total_c + c_off) * inner);
        c_off += c;
    }

    std::vector<std::int64_t> channels;
    for (const auto& p : parts) channels.push_back(p.shape()[1]);
    return detail::make_op_node<S>(
        out_shape, std::move(v), parts,
        [batch, inner, total_c, channels](const std::vector<S>& g,
                                          const std::vector<std::vector<S>*>& pg) {
            std::int64_t c_off = 0;
            for (std::size_t p = 0; p < channels.size(); ++p) {
                const std::int64_t c = channels[p];
                if (pg[p]) {
                    for (std::int64_t b = 0; b < batch; ++b) {
                        const S* src = g.data() + (b * total_c + c_off) * inner;
                        S* dst = pg[p]->data() + b * c * inner;
                        for (std::int64_t i = 0; i < c * inner; ++i) dst[i] += src[i];
                    }
                }
                c_off += c;
            }
        });
}

// Channel slice [begin, begin+count). Exact inverse of concat_channels.
template <class S>
TensorT<S> slice_channels(const TensorT<S>& x, int begin, int count) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("slice_channels: rank must be >= 2");
    if (begin < 0 || count <= 0 || begin + count > s[1])
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of " + std::to_string(s[1]) +
                         " channels");
    Shape out_shape = s;
    out_shape[1] = count;
    const std::int64_t batch = s[0], c_in = s[1];
    std::int64_t inner = 1;
    for (std::size_t a = 2; a < s.size(); ++a) inner *= s[a];

    std::vector<S> v(std::size_t(shape_numel(out_shape)));
    for (std::int64_t b = 0; b < batch; ++b)
        std::copy_n(x.value().data() + (b * c_in + begin) * inner, std::size_t(count * inner),
                    v.data() + b * count * inner);
    return detail::make_op_node<S>(
        out_shape, std::move(v), {x},
        [batch, inner, c_in, begin, count](const std::vector<S>& g,
                                           const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            for (std::int64_t b = 0; b < batch; ++b) {
                const S* src = g.data() + b * count * inner;
                S* dst = pg[0]->data() + (b * c_in + begin) * inner;
                for (std::int64_t i = 0; i < std::int64_t(count) * inner; ++i) dst[i] += src[i];
            }
        });
}

// [B,C,D,H,W] -> [B,C] spatial mean.
template <class S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
    const Shape& s = x.shape();
    if (s.size() != 5) throw ShapeError("global_avg_pool: expected rank-5, got " + shape_str(s));
    const std::int64_t batch = s[0], c = s[1];
    const std::int64_t vox = std::int64_t(s[2]) * s[3] * s[4];
    std::vector<S> v(std::size_t(batch * c));
    for (std::int64_t bc = 0; bc < batch * c; ++bc) {
        double acc = 0.0;
        const S* src = x.value().data() + bc * vox;
        for (std::int64_t i = 0; i < vox; ++i) acc += double(src[i]);
        v[std::size_t(bc)] = S(acc / double(vox));
    }
    return detail::make_op_node<S>(
        {int(batch), int(c)}, std::move(v), {x},
        [batch, c, vox](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            if (!pg[0]) return;
            for (std::int64_t bc = 0; bc < batch * c; ++bc) {
                const S gv = g[std::size_t(bc)] / S(vox);
                S* dst = pg[0]->data() + bc * vox;
                for (std::int64_t i = 0; i < vox; ++i) dst[i] += gv;
            }
        });
}

// Fully-connected layer: x [B,Cin] x weight [Cin,Cout] + bias [Cout].
template <class S>
TensorT<S> dense(const TensorT<S>& x, const TensorT<S>& weight, const TensorT<S>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || bias.shape().size() != 1)
        throw ShapeError("dense: expected x rank-2, weight rank-2, bias rank-1");
    if (xs[1] != ws[0] || bias.shape()[0] != ws[1])
        throw ShapeError("dense: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) +
                         " b" + shape_str(bias.shape()));
    const std::int64_t batch = xs[0], cin = xs[1], cout = ws[1];
    std::vector<S> v(std::size_t(batch * cout));
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t j = 0; j < cout; ++j) {
            S acc = bias.value()[std::size_t(j)];
            for (std::int64_t i = 0; i < cin; ++i)
                acc += x.value()[std::size_t(b * cin + i)] * weight.value()[std::size_t(i * cout + j)];
            v[std::size_t(b * cout + j)] = acc;
        }
    auto xn = x.node();
    auto wn = weight.node();
    return detail::make_op_node<S>(
        {int(batch), int(cout)}, std::move(v), {x, weight, bias},
        [xn, wn, batch, cin, cout](const std::vector<S>& g,
                                   const std::vector<std::vector<S>*>& pg) {
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t j = 0; j < cout; ++j) {
                    const S gv = g[std::size_t(b * cout + j)];
                    if (pg[0])
                        for (std::int64_t i = 0; i < cin; ++i)
                            (*pg[0])[std::size_t(b * cin + i)] +=
                                gv * wn->value[std::size_t(i * cout + j)];
                    if (pg[1])
                        for (std::int64_t i = 0; i < cin; ++i)
                            (*pg[1])[std::size_t(i * cout + j)] +=
                                gv * xn->value[std::size_t(b * cin + i)];
                    if (pg[2]) (*pg[2])[std::size_t(j)] += gv;
                }
        });
}

// Multiplies feature map x [B,C,D,H,W] by per-channel scales s [B,C].
template <class S>
TensorT<S> scale_channels(const TensorT<S>& x, const TensorT<S>& scales) {
    const Shape& xs = x.shape();
    if (xs.size() != 5 || scales.shape() != Shape{xs[0], xs[1]})
        throw ShapeError("scale_channels: x " + shape_str(xs) + " incompatible with scales " +
                         shape_str(scales.shape()));
    const std::int64_t bc = std::int64_t(xs[0]) * xs[1];
    const std::int64_t vox = std::int64_t(xs[2]) * xs[3] * xs[4];
    std::vector<S> v(x.value().size());
    for (std::int64_t i = 0; i < bc; ++i) {
        const S sc = scales.value()[std::size_t(i)];
        const S* src = x.value().data() + i * vox;
        S* dst = v.data() + i * vox;
        for (std::int64_t k = 0; k < vox; ++k) dst[k] = src[k] * sc;
    }
    auto xn = x.node();
    auto sn = scales.node();
    return detail::make_op_node<S>(
        xs, std::move(v), {x, scales},
        [xn, sn, bc, vox](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            for (std::int64_t i = 0; i < bc; ++i) {
                const S* grow = g.data() + i * vox;
                if (pg[0]) {
                    const S sc = sn->value[std::size_t(i)];
                    S* dst = pg[0]->data() + i * vox;
                    for (std::int64_t k = 0; k < vox; ++k) dst[k] += grow[k] * sc;
                }
                if (pg[1]) {
                    const S* xrow = xn->value.data() + i * vox;
                    double acc = 0.0;
                    for (std::int64_t k = 0; k < vox; ++k) acc += double(grow[k]) * double(xrow[k]);
                    (*pg[1])[std::size_t(i)] += S(acc);
                }
            }
        });
}

// Mean of squared differences, returned as a rank-0 scalar.
template <class S>
TensorT<S> mse(const TensorT<S>& pred, const TensorT<S>& target) {
    detail::check_same_shape(pred, target, "mse");
    const std::size_t n = pred.value().size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = double(pred.value()[i]) - double(target.value()[i]);
        acc += d * d;
    }
    auto pn = pred.node();
    auto tn = target.node();
    return detail::make_op_node<S>(
        {}, {S(acc / double(n))}, {pred, target},
        [pn, tn, n](const std::vector<S>& g, const std::vector<std::vector<S>*>& pg) {
            const S scale = g[0] * S(2) / S(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S d = pn->value[i] - tn->value[i];
                if (pg[0]) (*pg[0])[i] += scale * d;
                if (pg[1]) (*pg[1])[i] -= scale * d;
            }
        });
}

// ---- reverse pass ----------------------------------------------------------

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// the scalar loss. Interior adjoints are transient.
template <class S>
void backward(const TensorT<S>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order over requires_grad nodes.
    std::vector<TensorNodeT<S>*> order;
    std::unordered_map<TensorNodeT<S>*, int> state;  // 0 new, 1 open, 2 done
    std::vector<TensorNodeT<S>*> stack{root.get()};
    while (!stack.empty()) {
        TensorNodeT<S>* n = stack.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (auto& p : n->parents)
                if (p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                order.push_back(n);
            }
        }
    }

    std::unordered_map<TensorNodeT<S>*, std::vector<S>> adjoint;
    adjoint[root.get()] = {S(1)};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNodeT<S>* n = *it;
        auto found = adjoint.find(n);
        if (found == adjoint.end()) continue;
        std::vector<S>& g = found->second;
        if (n->is_leaf()) {
            if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
            for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
            continue;
        }
        std::vector<std::vector<S>*> parent_grads(n->parents.size(), nullptr);
        for (std::size_t p = 0; p < n->parents.size(); ++p) {
            TensorNodeT<S>* pn = n->parents[p].get();
            if (!pn->requires_grad) continue;
            auto& buf = adjoint[pn];
            if (buf.empty()) buf.assign(pn->value.size(), S(0));
            parent_grads[p] = &buf;
        }
        n->backprop(g, parent_grads);
        adjoint.erase(n);  // interior adjoints are not retained
    }
}

using Tensor = TensorT<float>;

}  // namespace pour
