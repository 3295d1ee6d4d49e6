#pragma once

// Hot arithmetic kernels with a portable scalar reference implementation and
// an AVX2+FMA variant chosen at runtime. All matrices are row-major with an
// explicit leading dimension (elements between consecutive rows).
//
// Row independence: every output element of gemm_nn / gemm_nt is computed by
// the same sequence of operations no matter how many rows are in the call or
// where the row sits in a register block. The forward pass relies on this so
// that a position's activations are bitwise unaffected by later positions.

#include <cstddef>
#include <string_view>

namespace lmtrace::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct Kernels {
    Isa isa;

    // sum_k a[k] * b[k]
    float (*dot)(const float* a, const float* b, std::size_t n);

    // y[k] += alpha * x[k]
    void (*axpy)(float* y, float alpha, const float* x, std::size_t n);

    // C[m x n] = A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                    const float* b, std::size_t ldb, float* c, std::size_t ldc);

    // C[m x n] = A[m x k] * B[n x k]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                    const float* b, std::size_t ldb, float* c, std::size_t ldc);

    // sum_k (|y[k]| - |y[k] - scale * z[k]|), i.e. ||y||_1 - ||y - scale*z||_1
    // evaluated per component so small terms do not cancel against large norms.
    double (*l1_gain)(const float* y, const float* z, float scale, std::size_t n);
};

const Kernels& scalar_kernels();

// nullptr when the build or the host CPU lacks AVX2+FMA.
const Kernels* avx2_kernels();

// Best available table, chosen once. LMTRACE_SIMD=scalar forces the reference path.
const Kernels& kernels();

// Pins the active table (tests and benchmarks). Returns false if unavailable.
bool force_isa(Isa isa);

}  // namespace lmtrace::simd
