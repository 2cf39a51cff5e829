#include "bsde/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace bsde::simd {
namespace {

const KernelTable* select_default() {
    const char* forced = std::getenv("BSDE_SIMD");
    if (forced != nullptr && std::strcmp(forced, "scalar") == 0) return &detail::scalar_table;
    if (isa_available(Isa::avx2)) return &kernels_for(Isa::avx2);
    return &detail::scalar_table;
}

std::atomic<const KernelTable*>& active() {
    static std::atomic<const KernelTable*> table{select_default()};
    return table;
}

}  // namespace

bool isa_available(Isa isa) {
    switch (isa) {
    case Isa::scalar:
        return true;
    case Isa::avx2:
#if defined(BSDE_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
        return false;
#endif
    }
    return false;
}

const KernelTable& kernels_for(Isa isa) {
#if defined(BSDE_HAVE_AVX2_KERNELS)
    if (isa == Isa::avx2 && isa_available(Isa::avx2)) return detail::avx2_table;
#endif
    (void)isa;
    return detail::scalar_table;
}

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) { active().store(&kernels_for(isa), std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) {
    switch (isa) {
    case Isa::scalar:
        return "scalar";
    case Isa::avx2:
        return "avx2";
    }
    return "unknown";
}

}  // namespace bsde::simd
