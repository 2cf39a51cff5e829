#pragma once

// Dissipative self-adjoint operators represented by their spectrum.
//
// A acts on the truncated basis as x_n -> -a_n x_n with a_n >= 0, so the
// semigroup, resolvents and the interpolation norms of D_A(alpha, p) are all
// evaluated component-wise.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace bsde {

using State = std::vector<double>;

class DiagonalOperator {
public:
    explicit DiagonalOperator(std::vector<double> eigenvalues);

    /// Dirichlet Laplacian on (0, pi) in the sine basis: a_m = m^2, m = 1..n.
    static DiagonalOperator laplacian_dirichlet_1d(std::size_t n);
    static DiagonalOperator lattice_diagonal(std::vector<double> coefficients);
    /// Generator rule by name: "laplacian-dirichlet-1d" (uses n) or "lattice-diagonal" (uses coefficients).
    static DiagonalOperator from_rule(const std::string& rule, std::size_t n,
                                      std::vector<double> coefficients);

    std::size_t dimension() const noexcept { return a_.size(); }
    std::span<const double> eigenvalues() const noexcept { return a_; }
    double eigenvalue(std::size_t n) const { return a_.at(n); }
    double max_eigenvalue() const noexcept { return max_; }

private:
    std::vector<double> a_;
    double max_ = 0.0;
};

double h_norm(std::span<const double> x);

/// e^{tA} x.
State semigroup_apply(const DiagonalOperator& op, double t, std::span<const double> x);
/// J_n x = n (n I - A)^{-1} x.
State yosida_apply(const DiagonalOperator& op, double n, std::span<const double> x);

inline constexpr double p_infinity = std::numeric_limits<double>::infinity();

struct AlphaNorm {
    double alpha = 0.0;
    double p = p_infinity;
    double value = 0.0;     // |x|_H + seminorm
    double seminorm = 0.0;  // [x]_alpha
};

/// ||x||_{D_A(alpha,p)}. For p = inf the sup over t in (0,1] is taken on a
/// geometric grid that is doubled until the value is stable to 1e-6 relative;
/// finite p uses log-grid quadrature of the L^p(0,1) integral.
AlphaNorm interpolation_norm(const DiagonalOperator& op, double alpha, std::span<const double> x,
                             double p = p_infinity);

/// max_{t in (0,1]} t^{1-alpha} a e^{-a t}, the seminorm of a unit eigenvector.
double eigenvector_seminorm(double a, double alpha);

/// Fixed-grid evaluator of the D_A(alpha, inf) norm, for use inside the solver
/// where the norm is taken path by path at every time step.
class InterpolationNormTable {
public:
    InterpolationNormTable(const DiagonalOperator& op, double alpha, std::size_t points = 512);

    double alpha() const noexcept { return alpha_; }
    double seminorm(std::span<const double> x) const;
    /// |x|_H + seminorm; alpha = 0 gives the H norm.
    double norm(std::span<const double> x) const;

private:
    double alpha_;
    std::size_t dim_;
    std::size_t points_;
    std::vector<double> table_;  // [n][i] = (t_i^{1-alpha} a_n e^{-a_n t_i})^2
    mutable std::vector<double> scratch_;
};

/// max over sampled t in (0,1] and random x with ||x||_alpha = 1 of
/// t^{beta-alpha} ||e^{tA} x||_{D_A(beta,inf)}.
double smoothing_bound_check(const DiagonalOperator& op, double alpha, double beta, int trials,
                             std::uint64_t seed = 1, std::size_t t_points = 64);

struct InterpolationInequality {
    double lhs = 0.0;    // ||x||_alpha
    double rhs = 0.0;    // ||x||_theta^{alpha/theta} |x|_H^{1-alpha/theta}
    double ratio = 0.0;  // lhs / rhs
};

InterpolationInequality interpolation_inequality_check(const DiagonalOperator& op, double alpha,
                                                       double theta, std::span<const double> x);

/// Sample maximum of the interpolation ratio over random vectors.
double estimate_interpolation_constant(const DiagonalOperator& op, double alpha, double theta,
                                       int samples, std::uint64_t seed = 1);

/// v(t) = int_t^T e^{(s-t)A} phi(s) ds for the piecewise-constant phi that takes
/// the value phi[j] (row j of a row-major (times.size()) x N array) on
/// [times[j], times[j+1]). The integral is exact per component.
State semigroup_convolution(const DiagonalOperator& op, std::span<const double> times,
                            std::span<const double> phi, double t);

/// v at every grid time (row-major, same shape as phi); v at the last time is 0.
std::vector<double> semigroup_convolution_grid(const DiagonalOperator& op,
                                               std::span<const double> times,
                                               std::span<const double> phi);

/// (1 - e^{-a h}) / a, with the limit h at a = 0.
double exp_integral_weight(double a, double h);

/// Empirical Hoelder constant G with [v]_{C^{1-alpha}([0,T]; H_alpha)} <= G sup |phi|_H,
/// sampled over random unit piecewise-constant phi on a uniform grid.
double convolution_holder_constant(const DiagonalOperator& op, double alpha, double horizon,
                                   std::size_t grid_points = 48, int samples = 24,
                                   std::uint64_t seed = 1);

/// Constants that the contraction and pasting arguments need but never fix.
struct OperatorConstants {
    double holder_G = 0.0;      // convolution regularity constant
    double m_alpha = 1.0;       // sup_{t<=T} ||e^{tA}||_{L(H_alpha)}
    double c_alpha = 1.0;       // sup_{t<=T} t^alpha ||e^{tA}||_{L(H, H_alpha)}
    double interpolation_c = 1.0;  // ||x||_alpha <= c ||x||_theta^{alpha/theta} |x|^{1-alpha/theta}
    double smoothing_c0 = 1.0;  // ||t^{theta-alpha} e^{tA}||_{L(D_A(alpha), D_A(theta))}
};

OperatorConstants estimate_operator_constants(const DiagonalOperator& op, double alpha,
                                              double theta, double horizon,
                                              std::uint64_t seed = 1);

}  // namespace bsde
