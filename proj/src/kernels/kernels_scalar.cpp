#include "bsde/kernels.hpp"

#include <algorithm>
#include <limits>

namespace bsde::simd::detail {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void scaled_product_scalar(double a, const double* x, const double* y, double* out,
                           std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] * y[i];
}

double squared_distance_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

double weighted_column_max_scalar(const double* table, std::size_t rows, std::size_t cols,
                                  const double* weights) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += table[r * cols + c] * weights[r];
        best = std::max(best, s);
    }
    return cols == 0 ? 0.0 : best;
}

}  // namespace

const KernelTable scalar_table{
    Isa::scalar,
    dot_scalar,
    axpy_scalar,
    scale_scalar,
    scaled_product_scalar,
    squared_distance_scalar,
    weighted_column_max_scalar,
};

}  // namespace bsde::simd::detail
