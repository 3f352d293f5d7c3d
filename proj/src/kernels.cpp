#include "lab/kernels.hpp"

#include <algorithm>
#include <cstring>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define LAB_AVX2 1
#endif

namespace lab {

namespace {

// Generic reference path; handles every transpose combination.
template <typename T>
void gemm_generic(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
                  T* c, bool accumulate) {
    auto a_at = [&](int64_t i, int64_t p) { return ta ? a[p * m + i] : a[i * k + p]; };
    auto b_at = [&](int64_t p, int64_t j) { return tb ? b[j * k + p] : b[p * n + j]; };
    if (!accumulate) std::fill(c, c + m * n, T(0));
    if (!ta && !tb) {
        for (int64_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            const T* arow = a + i * k;
            for (int64_t p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b + p * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                T acc = 0;
                for (int64_t p = 0; p < k; ++p) acc += a_at(i, p) * b_at(p, j);
                c[i * n + j] += acc;
            }
        }
    }
}

#ifdef LAB_AVX2

// A row-broadcast micro kernel covering both the nn case and the tn case;
// the two differ only in the stride used to walk A along k.
// Computes a 4 x 16 tile of C accumulating over the full k extent.
template <bool kTransA>
inline void micro_4x16(int64_t i0, int64_t j0, int64_t m, int64_t n, int64_t k, const float* a,
                       const float* b, float* c, bool accumulate) {
    (void)m;
    __m256 c00, c01, c10, c11, c20, c21, c30, c31;
    if (accumulate) {
        c00 = _mm256_loadu_ps(c + (i0 + 0) * n + j0);
        c01 = _mm256_loadu_ps(c + (i0 + 0) * n + j0 + 8);
        c10 = _mm256_loadu_ps(c + (i0 + 1) * n + j0);
        c11 = _mm256_loadu_ps(c + (i0 + 1) * n + j0 + 8);
        c20 = _mm256_loadu_ps(c + (i0 + 2) * n + j0);
        c21 = _mm256_loadu_ps(c + (i0 + 2) * n + j0 + 8);
        c30 = _mm256_loadu_ps(c + (i0 + 3) * n + j0);
        c31 = _mm256_loadu_ps(c + (i0 + 3) * n + j0 + 8);
    } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_ps();
    }
    for (int64_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * n + j0);
        const __m256 b1 = _mm256_loadu_ps(b + p * n + j0 + 8);
        const float* acol = kTransA ? (a + p * m + i0) : (a + i0 * k + p);
        const int64_t astride = kTransA ? 1 : k;
        const __m256 a0 = _mm256_set1_ps(acol[0 * astride]);
        const __m256 a1 = _mm256_set1_ps(acol[1 * astride]);
        const __m256 a2 = _mm256_set1_ps(acol[2 * astride]);
        const __m256 a3 = _mm256_set1_ps(acol[3 * astride]);
        c00 = _mm256_fmadd_ps(a0, b0, c00);
        c01 = _mm256_fmadd_ps(a0, b1, c01);
        c10 = _mm256_fmadd_ps(a1, b0, c10);
        c11 = _mm256_fmadd_ps(a1, b1, c11);
        c20 = _mm256_fmadd_ps(a2, b0, c20);
        c21 = _mm256_fmadd_ps(a2, b1, c21);
        c30 = _mm256_fmadd_ps(a3, b0, c30);
        c31 = _mm256_fmadd_ps(a3, b1, c31);
    }
    _mm256_storeu_ps(c + (i0 + 0) * n + j0, c00);
    _mm256_storeu_ps(c + (i0 + 0) * n + j0 + 8, c01);
    _mm256_storeu_ps(c + (i0 + 1) * n + j0, c10);
    _mm256_storeu_ps(c + (i0 + 1) * n + j0 + 8, c11);
    _mm256_storeu_ps(c + (i0 + 2) * n + j0, c20);
    _mm256_storeu_ps(c + (i0 + 2) * n + j0 + 8, c21);
    _mm256_storeu_ps(c + (i0 + 3) * n + j0, c30);
    _mm256_storeu_ps(c + (i0 + 3) * n + j0 + 8, c31);
}

template <bool kTransA>
void gemm_broadcast_f32(int64_t m, int64_t n, int64_t k, const float* a, const float* b,
                        float* c, bool accumulate) {
    const int64_t mb = m & ~int64_t(3);
    const int64_t nb = n & ~int64_t(15);
    for (int64_t i0 = 0; i0 < mb; i0 += 4)
        for (int64_t j0 = 0; j0 < nb; j0 += 16)
            micro_4x16<kTransA>(i0, j0, m, n, k, a, b, c, accumulate);
    auto a_at = [&](int64_t i, int64_t p) { return kTransA ? a[p * m + i] : a[i * k + p]; };
    // right edge
    for (int64_t i = 0; i < mb; ++i) {
        for (int64_t j = nb; j < n; ++j) {
            float acc = accumulate ? c[i * n + j] : 0.0f;
            for (int64_t p = 0; p < k; ++p) acc += a_at(i, p) * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
    // bottom edge
    for (int64_t i = mb; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            float acc = accumulate ? c[i * n + j] : 0.0f;
            for (int64_t p = 0; p < k; ++p) acc += a_at(i, p) * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

// C = A * B^T: rows of A dotted with rows of B, vectorized along k.
void gemm_nt_f32(int64_t m, int64_t n, int64_t k, const float* a, const float* b, float* c,
                 bool accumulate) {
    const int64_t kb = k & ~int64_t(7);
    const int64_t nb = n & ~int64_t(3);
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        for (int64_t j0 = 0; j0 < nb; j0 += 4) {
            __m256 s0 = _mm256_setzero_ps();
            __m256 s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps();
            __m256 s3 = _mm256_setzero_ps();
            const float* b0 = b + (j0 + 0) * k;
            const float* b1 = b + (j0 + 1) * k;
            const float* b2 = b + (j0 + 2) * k;
            const float* b3 = b + (j0 + 3) * k;
            for (int64_t p = 0; p < kb; p += 8) {
                const __m256 av = _mm256_loadu_ps(arow + p);
                s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
                s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
                s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
                s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
            }
            float d0 = hsum256(s0), d1 = hsum256(s1), d2 = hsum256(s2), d3 = hsum256(s3);
            for (int64_t p = kb; p < k; ++p) {
                d0 += arow[p] * b0[p];
                d1 += arow[p] * b1[p];
                d2 += arow[p] * b2[p];
                d3 += arow[p] * b3[p];
            }
            float* crow = c + i * n + j0;
            if (accumulate) {
                crow[0] += d0; crow[1] += d1; crow[2] += d2; crow[3] += d3;
            } else {
                crow[0] = d0; crow[1] = d1; crow[2] = d2; crow[3] = d3;
            }
        }
        for (int64_t j = nb; j < n; ++j) {
            const float* brow = b + j * k;
            float d = 0.0f;
            for (int64_t p = 0; p < k; ++p) d += arow[p] * brow[p];
            if (accumulate) c[i * n + j] += d; else c[i * n + j] = d;
        }
    }
}

#endif  // LAB_AVX2

}  // namespace

template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    gemm_generic<T>(ta, tb, m, n, k, a, b, c, accumulate);
}

template <>
void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a,
                 const float* b, float* c, bool accumulate) {
#ifdef LAB_AVX2
    if (!ta && !tb) {
        gemm_broadcast_f32<false>(m, n, k, a, b, c, accumulate);
        return;
    }
    if (ta && !tb) {
        gemm_broadcast_f32<true>(m, n, k, a, b, c, accumulate);
        return;
    }
    if (!ta && tb) {
        gemm_nt_f32(m, n, k, a, b, c, accumulate);
        return;
    }
#endif
    gemm_generic<float>(ta, tb, m, n, k, a, b, c, accumulate);
}

template void gemm<double>(bool, bool, int64_t, int64_t, int64_t, const double*, const double*,
                           double*, bool);

#ifdef LAB_AVX2
namespace {

// exp for 8 floats, cephes-style polynomial on the reduced argument.
inline __m256 exp256_ps(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647950f);
    const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
    x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);

    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 half = _mm256_set1_ps(0.5f);
    __m256 fx = _mm256_fmadd_ps(x, log2e, half);
    fx = _mm256_floor_ps(fx);

    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
    x = _mm256_fnmadd_ps(fx, c1, x);
    x = _mm256_fnmadd_ps(fx, c2, x);

    const __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));

    const __m256i n = _mm256_cvtps_epi32(fx);
    const __m256i pow2n = _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}

}  // namespace
#endif

void vec_exp(const float* x, float* y, int64_t n) {
#ifdef LAB_AVX2
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp256_ps(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = std::exp(x[i]);
#else
    for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
#endif
}

void vec_exp(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void vec_tanh(const float* x, float* y, int64_t n) {
#ifdef LAB_AVX2
    // tanh(t) = 1 - 2 / (exp(2t) + 1), saturated well inside float range
    const __m256 two = _mm256_set1_ps(2.0f);
    const __m256 one = _mm256_set1_ps(1.0f);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 t = _mm256_loadu_ps(x + i);
        const __m256 e = exp256_ps(_mm256_mul_ps(t, two));
        const __m256 r = _mm256_div_ps(two, _mm256_add_ps(e, one));
        _mm256_storeu_ps(y + i, _mm256_sub_ps(one, r));
    }
    for (; i < n; ++i) y[i] = std::tanh(x[i]);
#else
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
#endif
}

void vec_tanh(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <>
bool has_nonfinite<float>(const float* x, int64_t n) {
    // all-ones exponent field -> Inf or NaN; integer form vectorizes
    int64_t bad = 0;
    for (int64_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, x + i, 4);
        bad += ((bits & 0x7f800000u) == 0x7f800000u);
    }
    return bad != 0;
}

template <>
bool has_nonfinite<double>(const double* x, int64_t n) {
    int64_t bad = 0;
    for (int64_t i = 0; i < n; ++i) {
        uint64_t bits;
        std::memcpy(&bits, x + i, 8);
        bad += ((bits & 0x7ff0000000000000ull) == 0x7ff0000000000000ull);
    }
    return bad != 0;
}

}  // namespace lab
