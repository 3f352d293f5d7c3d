#pragma once

#include <cmath>
#include <vector>

#include "lab/tape.hpp"

namespace lab {

// Bias-corrected Adam (Kingma & Ba defaults). Weight decay and gradient
// clipping are off unless configured.
template <typename T>
struct AdamState {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T lr = T(1e-3);
    T weight_decay = T(0);
    T grad_clip = T(0);  // global-norm clip when > 0
    int64_t t = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    static AdamState init(const ParamStore<T>& params) {
        AdamState st;
        for (const auto& e : params.entries) {
            st.m.push_back(Tensor<T>(e.value.shape));
            st.v.push_back(Tensor<T>(e.value.shape));
        }
        return st;
    }
};

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& st) {
    check(st.m.size() == params.entries.size(), "adam state does not match params");
    for (size_t i = 0; i < params.entries.size(); ++i)
        check(st.m[i].shape == params.entries[i].value.shape, "adam moment shape mismatch");

    if (st.grad_clip > T(0)) {
        double norm_sq = 0;
        for (const auto& e : params.entries)
            for (const T g : e.grad.data) norm_sq += double(g) * double(g);
        const double norm = std::sqrt(norm_sq);
        if (norm > double(st.grad_clip)) {
            const T s = T(double(st.grad_clip) / norm);
            for (auto& e : params.entries)
                for (T& g : e.grad.data) g *= s;
        }
    }

    st.t += 1;
    const T bc1 = T(1) - std::pow(st.beta1, T(st.t));
    const T bc2 = T(1) - std::pow(st.beta2, T(st.t));
    for (size_t i = 0; i < params.entries.size(); ++i) {
        auto& e = params.entries[i];
        T* p = e.value.ptr();
        T* g = e.grad.ptr();
        T* m = st.m[i].ptr();
        T* v = st.v[i].ptr();
        const int64_t n = e.value.numel();
        for (int64_t j = 0; j < n; ++j) {
            T gj = g[j];
            if (st.weight_decay > T(0)) gj += st.weight_decay * p[j];
            m[j] = st.beta1 * m[j] + (T(1) - st.beta1) * gj;
            v[j] = st.beta2 * v[j] + (T(1) - st.beta2) * gj * gj;
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

}  // namespace lab
