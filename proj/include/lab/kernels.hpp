#pragma once

#include <cmath>
#include <cstdint>

namespace lab {

// C [m x n] = opA(A) * opB(B) (+ C when accumulate), all row-major.
// opA(A) is logically [m x k]; with ta the physical buffer is [k x m].
// opB(B) is logically [k x n]; with tb the physical buffer is [n x k].
template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c,
          bool accumulate);

// Elementwise exp/tanh over a buffer. The float overloads use an AVX2 path
// (polynomial exp, ~1e-7 relative error); double stays on libm for the
// gradient-check precision path.
void vec_exp(const float* x, float* y, int64_t n);
void vec_exp(const double* x, double* y, int64_t n);
void vec_tanh(const float* x, float* y, int64_t n);
void vec_tanh(const double* x, double* y, int64_t n);

template <typename T>
bool has_nonfinite(const T* x, int64_t n);

}  // namespace lab
