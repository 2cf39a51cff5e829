#pragma once

// Data-parallel inner loops used by the solver.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2/FMA
// variant. The variant is picked once at startup from the CPU feature flags; the
// environment variable BSDE_SIMD=scalar forces the reference path. Both paths
// agree to rounding (reductions are reassociated in the vector path).

#include <cstddef>
#include <span>
#include <string_view>

namespace bsde::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // x[i] *= a
    void (*scale)(double a, double* x, std::size_t n);
    // out[i] = a * x[i] * y[i]
    void (*scaled_product)(double a, const double* x, const double* y, double* out, std::size_t n);
    // sum_i (x[i] - y[i])^2
    double (*squared_distance)(const double* x, const double* y, std::size_t n);
    // max over columns c of sum_r table[r * cols + c] * weights[r]
    double (*weighted_column_max)(const double* table, std::size_t rows, std::size_t cols,
                                  const double* weights);
};

/// Kernel table in use (selected lazily on first call).
const KernelTable& kernels();

/// Kernel table for a specific ISA; falls back to scalar when the ISA is unavailable.
const KernelTable& kernels_for(Isa isa);

bool isa_available(Isa isa);

/// Overrides the active table (tests and benchmarking).
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);

// Convenience wrappers over the active table.
inline double dot(std::span<const double> x, std::span<const double> y) {
    return kernels().dot(x.data(), y.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    kernels().axpy(a, x.data(), y.data(), x.size());
}
inline void scale(double a, std::span<double> x) { kernels().scale(a, x.data(), x.size()); }
inline double squared_distance(std::span<const double> x, std::span<const double> y) {
    return kernels().squared_distance(x.data(), y.data(), x.size());
}

namespace detail {
extern const KernelTable scalar_table;
#if defined(BSDE_HAVE_AVX2_KERNELS)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace bsde::simd
