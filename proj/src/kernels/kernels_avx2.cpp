// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include "bsde/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <limits>

namespace bsde::simd::detail {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d m = _mm_max_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_avx2(double a, double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void scaled_product_avx2(double a, const double* x, const double* y, double* out,
                         std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(out + i, _mm256_mul_pd(p, _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = a * x[i] * y[i];
}

double squared_distance_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

double weighted_column_max_avx2(const double* table, std::size_t rows, std::size_t cols,
                                const double* weights) {
    if (cols == 0) return 0.0;
    __m256d best = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
        __m256d s = _mm256_setzero_pd();
        for (std::size_t r = 0; r < rows; ++r)
            s = _mm256_fmadd_pd(_mm256_loadu_pd(table + r * cols + c), _mm256_set1_pd(weights[r]), s);
        best = _mm256_max_pd(best, s);
    }
    double result = hmax(best);
    for (; c < cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += table[r * cols + c] * weights[r];
        result = std::max(result, s);
    }
    return result;
}

}  // namespace

const KernelTable avx2_table{
    Isa::avx2,
    dot_avx2,
    axpy_avx2,
    scale_avx2,
    scaled_product_avx2,
    squared_distance_avx2,
    weighted_column_max_avx2,
};

}  // namespace bsde::simd::detail
