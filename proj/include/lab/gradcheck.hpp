#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lab/tape.hpp"

namespace lab {

// Central finite differences (f(p+h) - f(p-h)) / 2h, one coordinate at a
// time. This is the independent oracle the reverse-mode engine is checked
// against; keep it free of any Tape machinery.
template <typename T>
std::vector<Tensor<T>> finite_difference_gradient(
    const std::function<T(const ParamStore<T>&)>& loss, ParamStore<T>& params, T h) {
    check(h > T(0), "finite difference step must be positive");
    std::vector<Tensor<T>> out;
    for (auto& e : params.entries) {
        Tensor<T> g(e.value.shape);
        for (int64_t j = 0; j < e.value.numel(); ++j) {
            const T orig = e.value.data[j];
            e.value.data[j] = orig + h;
            const T fp = loss(params);
            e.value.data[j] = orig - h;
            const T fm = loss(params);
            e.value.data[j] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericsError("non-finite loss at perturbed parameters");
            g.data[j] = (fp - fm) / (T(2) * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

// Largest coordinate gap between two gradient sets (autodiff vs the finite
// difference oracle), normalized by the oracle's magnitude.
template <typename T>
double gradient_relative_error(const std::vector<Tensor<T>>& ad,
                               const std::vector<Tensor<T>>& fd) {
    double max_abs_diff = 0, max_ref = 0;
    for (size_t i = 0; i < fd.size(); ++i) {
        for (int64_t j = 0; j < fd[i].numel(); ++j) {
            max_abs_diff =
                std::max(max_abs_diff, std::abs(double(ad[i].data[j]) - double(fd[i].data[j])));
            max_ref = std::max(max_ref, std::abs(double(fd[i].data[j])));
        }
    }
    return max_abs_diff / std::max(max_ref, 1e-12);
}

}  // namespace lab
