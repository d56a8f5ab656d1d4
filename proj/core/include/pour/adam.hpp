#pragma once

#include <cmath>

#include "pour/tensor.hpp"

namespace pour {

// Adam with bias correction. Moment buffers are allocated lazily on the first
// step and stay bound to the parameter list order, which must not change
// between steps.
template <class S>
struct AdamStateT {
    S lr = S(1e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    std::int64_t step = 0;
    std::vector<std::vector<S>> m, v;
};

using AdamState = AdamStateT<float>;

template <class S>
void adam_step(AdamStateT<S>& st, const std::vector<TensorT<S>>& params) {
    if (st.m.empty()) {
        st.m.resize(params.size());
        st.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            st.m[i].assign(params[i].numel(), S(0));
            st.v[i].assign(params[i].numel(), S(0));
        }
    }
    if (st.m.size() != params.size())
        throw ContractError("adam_step: parameter count changed between steps");
    ++st.step;
    const double bc1 = 1.0 - std::pow(double(st.beta1), double(st.step));
    const double bc2 = 1.0 - std::pow(double(st.beta2), double(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.requires_grad())
            throw ContractError("adam_step: parameter without gradient tracking");
        if (st.m[i].size() != std::size_t(p.numel()))
            throw ContractError("adam_step: parameter size changed between steps");
        const std::vector<S>& grad = p.node()->grad;
        if (grad.empty()) continue;  // parameter untouched by this backward pass
        std::vector<S>& val = p.node()->value;
        S* m = st.m[i].data();
        S* v = st.v[i].data();
        for (std::size_t j = 0; j < grad.size(); ++j) {
            const double gj = double(grad[j]);
            const double mj = double(st.beta1) * double(m[j]) + (1.0 - double(st.beta1)) * gj;
            const double vj = double(st.beta2) * double(v[j]) + (1.0 - double(st.beta2)) * gj * gj;
            m[j] = S(mj);
            v[j] = S(vj);
            val[j] -= S(double(st.lr) * (mj / bc1) / (std::sqrt(vj / bc2) + double(st.eps)));
        }
    }
}

}  // namespace pour
