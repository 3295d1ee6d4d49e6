#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "lmtrace/simd.hpp"

namespace lmtrace::simd {
namespace {

constexpr Kernels kScalar{Isa::Scalar, scalar::dot, scalar::axpy, scalar::gemm_nn, scalar::gemm_nt,
                          scalar::l1_gain};

#if defined(LMTRACE_HAVE_AVX2)
constexpr Kernels kAvx2{Isa::Avx2, avx2::dot, avx2::axpy, avx2::gemm_nn, avx2::gemm_nt, avx2::l1_gain};

bool host_has_avx2() {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const Kernels* select_default() {
    const char* env = std::getenv("LMTRACE_SIMD");
    if (env != nullptr && std::string(env) == "scalar") return &kScalar;
    if (const Kernels* k = avx2_kernels()) return k;
    return &kScalar;
}

std::atomic<const Kernels*>& active() {
    static std::atomic<const Kernels*> table{select_default()};
    return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

const Kernels& scalar_kernels() { return kScalar; }

const Kernels* avx2_kernels() {
#if defined(LMTRACE_HAVE_AVX2)
    static const bool ok = host_has_avx2();
    return ok ? &kAvx2 : nullptr;
#else
    return nullptr;
#endif
}

const Kernels& kernels() { return *active().load(std::memory_order_acquire); }

bool force_isa(Isa isa) {
    const Kernels* k = isa == Isa::Scalar ? &kScalar : avx2_kernels();
    if (k == nullptr) return false;
    active().store(k, std::memory_order_release);
    return true;
}

}  // namespace lmtrace::simd
