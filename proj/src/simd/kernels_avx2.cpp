// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <cmath>

#include "kernels_impl.hpp"

namespace lmtrace::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x55));
    return _mm_cvtss_f32(s);
}

// One output of gemm_nt; shared by every blocking so results are row-independent.
inline float dot_tail(float acc, const float* a, const float* b, std::size_t from, std::size_t n) {
    for (std::size_t p = from; p < n; ++p) acc = std::fma(a[p], b[p], acc);
    return acc;
}

template <int R>
void nn_block16(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                std::size_t ldc) {
    __m256 acc0[R];
    __m256 acc1[R];
    for (int r = 0; r < R; ++r) {
        acc0[r] = _mm256_setzero_ps();
        acc1[r] = _mm256_setzero_ps();
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
        const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
        for (int r = 0; r < R; ++r) {
            const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
            acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        _mm256_storeu_ps(c + r * ldc, acc0[r]);
        _mm256_storeu_ps(c + r * ldc + 8, acc1[r]);
    }
}

template <int R>
void nn_block8(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
               std::size_t ldc) {
    __m256 acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_ps();
    for (std::size_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
        for (int r = 0; r < R; ++r) acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), b0, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc, acc[r]);
}

void nn_column(std::size_t m, std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
               float* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb], acc);
        c[i * ldc] = acc;
    }
}

template <int R, int S>
void nt_block(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
              std::size_t ldc) {
    __m256 acc[R][S];
    for (int r = 0; r < R; ++r)
        for (int s = 0; s < S; ++s) acc[r][s] = _mm256_setzero_ps();
    const std::size_t k8 = k & ~std::size_t{7};
    for (std::size_t p = 0; p < k8; p += 8) {
        __m256 bv[S];
        for (int s = 0; s < S; ++s) bv[s] = _mm256_loadu_ps(b + s * ldb + p);
        for (int r = 0; r < R; ++r) {
            const __m256 av = _mm256_loadu_ps(a + r * lda + p);
            for (int s = 0; s < S; ++s) acc[r][s] = _mm256_fmadd_ps(av, bv[s], acc[r][s]);
        }
    }
    for (int r = 0; r < R; ++r)
        for (int s = 0; s < S; ++s)
            c[r * ldc + s] = dot_tail(hsum(acc[r][s]), a + r * lda, b + s * ldb, k8, k);
}

template <int R>
void nt_rows(std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float* c, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 3 <= n; j += 3) nt_block<R, 3>(k, a, lda, b + j * ldb, ldb, c + j, ldc);
    for (; j < n; ++j) nt_block<R, 1>(k, a, lda, b + j * ldb, ldb, c + j, ldc);
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) {
    float out;
    nt_block<1, 1>(n, a, 0, b, 0, &out, 0);
    return out;
}

void axpy(float* y, float alpha, const float* x, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc) {
    // Column stripes outermost: a k x 16 stripe of B stays cache-resident across all rows.
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) nn_block16<4>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        for (; i < m; ++i) nn_block16<1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
    for (; j + 8 <= n; j += 8) {
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) nn_block8<4>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        for (; i < m; ++i) nn_block8<1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
    for (; j < n; ++j) nn_column(m, k, a, lda, b + j, ldb, c + j, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) nt_rows<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) nt_rows<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

double l1_gain(const float* y, const float* z, float scale, std::size_t n) {
    const __m256 sign = _mm256_set1_ps(-0.0f);
    const __m256 sv = _mm256_set1_ps(scale);
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        const __m256 y0 = _mm256_loadu_ps(y + i);
        const __m256 y1 = _mm256_loadu_ps(y + i + 8);
        const __m256 r0 = _mm256_fnmadd_ps(sv, _mm256_loadu_ps(z + i), y0);
        const __m256 r1 = _mm256_fnmadd_ps(sv, _mm256_loadu_ps(z + i + 8), y1);
        acc0 = _mm256_add_ps(acc0, _mm256_sub_ps(_mm256_andnot_ps(sign, y0), _mm256_andnot_ps(sign, r0)));
        acc1 = _mm256_add_ps(acc1, _mm256_sub_ps(_mm256_andnot_ps(sign, y1), _mm256_andnot_ps(sign, r1)));
    }
    double acc = static_cast<double>(hsum(_mm256_add_ps(acc0, acc1)));
    for (; i < n; ++i) acc += static_cast<double>(std::fabs(y[i]) - std::fabs(std::fma(-scale, z[i], y[i])));
    return acc;
}

}  // namespace lmtrace::simd::avx2
