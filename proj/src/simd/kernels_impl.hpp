#pragma once

#include <cstddef>

namespace lmtrace::simd::scalar {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float* y, float alpha, const float* x, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc);
double l1_gain(const float* y, const float* z, float scale, std::size_t n);
}  // namespace lmtrace::simd::scalar

#if defined(LMTRACE_HAVE_AVX2)
namespace lmtrace::simd::avx2 {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float* y, float alpha, const float* x, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc);
double l1_gain(const float* y, const float* z, float scale, std::size_t n);
}  // namespace lmtrace::simd::avx2
#endif
