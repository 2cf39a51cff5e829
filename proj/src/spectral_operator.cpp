#include "bsde/spectral_operator.hpp"

#include "bsde/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace bsde {
namespace {

void require_dimension(const DiagonalOperator& op, std::span<const double> x) {
    if (x.size() != op.dimension())
        throw std::invalid_argument("state dimension " + std::to_string(x.size()) +
                                    " does not match operator dimension " +
                                    std::to_string(op.dimension()));
}

double smallest_time(const DiagonalOperator& op, double alpha) {
    return 1e-4 * std::max(1.0 - alpha, 1e-3) / std::max(op.max_eigenvalue(), 1.0);
}

// Geometric grid on [t_min, 1] with `points` nodes.
std::vector<double> geometric_grid(double t_min, std::size_t points) {
    std::vector<double> t(points);
    const double lo = std::log(t_min);
    for (std::size_t i = 0; i < points; ++i) {
        const double u = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
        t[i] = std::exp(lo * (1.0 - u));
    }
    t.back() = 1.0;
    return t;
}

double seminorm_at(const DiagonalOperator& op, double alpha, std::span<const double> x, double t) {
    double s = 0.0;
    const auto a = op.eigenvalues();
    for (std::size_t n = 0; n < a.size(); ++n) {
        const double c = a[n] * std::exp(-a[n] * t) * x[n];
        s += c * c;
    }
    return std::pow(t, 1.0 - alpha) * std::sqrt(s);
}

double sup_seminorm(const DiagonalOperator& op, double alpha, std::span<const double> x,
                    std::size_t points) {
    double best = 0.0;
    for (double t : geometric_grid(smallest_time(op, alpha), points))
        best = std::max(best, seminorm_at(op, alpha, x, t));
    return best;
}

double lp_seminorm(const DiagonalOperator& op, double alpha, std::span<const double> x, double p,
                   std::size_t points) {
    // int_0^1 (t^{1-alpha} |A e^{tA} x|)^p dt / t, trapezoid in u = log t plus the
    // analytic tail below t_min where |A e^{tA} x| ~ |A x|.
    const double t_min = smallest_time(op, alpha);
    const auto grid = geometric_grid(t_min, points);
    const double du = -std::log(t_min) / static_cast<double>(points - 1);
    double integral = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double w = (i == 0 || i + 1 == grid.size()) ? 0.5 * du : du;
        integral += w * std::pow(seminorm_at(op, alpha, x, grid[i]), p);
    }
    integral += std::pow(seminorm_at(op, alpha, x, t_min), p) / (p * (1.0 - alpha));
    return std::pow(integral, 1.0 / p);
}

State random_state(std::mt19937_64& rng, std::size_t n, int kind) {
    std::normal_distribution<double> normal(0.0, 1.0);
    State x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double decay = kind == 0 ? 1.0 : 1.0 / static_cast<double>(i + 1);
        x[i] = normal(rng) * decay;
    }
    return x;
}

State unit_vector(std::size_t n, std::size_t k) {
    State e(n, 0.0);
    e[k] = 1.0;
    return e;
}

// Random vectors plus every basis vector, the usual extremal candidates for
// diagonal operators.
std::vector<State> probe_states(std::size_t n, int random_count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<State> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(unit_vector(n, k));
    for (int i = 0; i < random_count; ++i) out.push_back(random_state(rng, n, i % 2));
    return out;
}

}  // namespace

DiagonalOperator::DiagonalOperator(std::vector<double> eigenvalues) : a_(std::move(eigenvalues)) {
    if (a_.empty()) throw std::invalid_argument("operator needs at least one eigenvalue");
    for (double a : a_) {
        if (!(a >= 0.0) || !std::isfinite(a))
            throw std::invalid_argument("eigenvalues must be finite and nonnegative (dissipativity)");
        max_ = std::max(max_, a);
    }
}

DiagonalOperator DiagonalOperator::laplacian_dirichlet_1d(std::size_t n) {
    if (n == 0) throw std::invalid_argument("laplacian-dirichlet-1d needs N >= 1");
    std::vector<double> a(n);
    for (std::size_t m = 0; m < n; ++m) a[m] = static_cast<double>((m + 1) * (m + 1));
    return DiagonalOperator(std::move(a));
}

DiagonalOperator DiagonalOperator::lattice_diagonal(std::vector<double> coefficients) {
    return DiagonalOperator(std::move(coefficients));
}

DiagonalOperator DiagonalOperator::from_rule(const std::string& rule, std::size_t n,
                                             std::vector<double> coefficients) {
    if (rule == "laplacian-dirichlet-1d") return laplacian_dirichlet_1d(n);
    if (rule == "lattice-diagonal") return lattice_diagonal(std::move(coefficients));
    throw std::invalid_argument("unknown operator rule '" + rule + "'");
}

double h_norm(std::span<const double> x) { return std::sqrt(simd::dot(x, x)); }

State semigroup_apply(const DiagonalOperator& op, double t, std::span<const double> x) {
    require_dimension(op, x);
    if (!(t >= 0.0)) throw std::invalid_argument("semigroup time must be nonnegative");
    State y(x.begin(), x.end());
    if (t == 0.0) return y;
    const auto a = op.eigenvalues();
    for (std::size_t n = 0; n < y.size(); ++n) y[n] *= std::exp(-a[n] * t);
    return y;
}

State yosida_apply(const DiagonalOperator& op, double n, std::span<const double> x) {
    require_dimension(op, x);
    if (!(n > 0.0)) throw std::invalid_argument("Yosida parameter must be positive");
    State y(x.begin(), x.end());
    const auto a = op.eigenvalues();
    for (std::size_t m = 0; m < y.size(); ++m) y[m] *= n / (n + a[m]);
    return y;
}

double eigenvector_seminorm(double a, double alpha) {
    if (a == 0.0) return 0.0;
    const double t_star = (1.0 - alpha) / a;
    if (t_star >= 1.0) return a * std::exp(-a);
    return std::pow(t_star, 1.0 - alpha) * a * std::exp(-(1.0 - alpha));
}

AlphaNorm interpolation_norm(const DiagonalOperator& op, double alpha, std::span<const double> x,
                             double p) {
    require_dimension(op, x);
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("interpolation_norm requires 0 < alpha < 1");
    if (!(p >= 1.0)) throw std::invalid_argument("interpolation_norm requires p >= 1");

    auto evaluate = [&](std::size_t points) {
        return std::isinf(p) ? sup_seminorm(op, alpha, x, points)
                             : lp_seminorm(op, alpha, x, p, points);
    };

    std::size_t points = 512;
    double current = evaluate(points);
    for (int refinement = 0; refinement < 12; ++refinement) {
        points = 2 * points - 1;  // nested grid
        const double next = evaluate(points);
        const bool stable = std::abs(next - current) <= 1e-6 * std::abs(next);
        current = next;
        if (stable || next == 0.0) break;
    }
    AlphaNorm out;
    out.alpha = alpha;
    out.p = p;
    out.seminorm = current;
    out.value = h_norm(x) + current;
    return out;
}

InterpolationNormTable::InterpolationNormTable(const DiagonalOperator& op, double alpha,
                                               std::size_t points)
    : alpha_(alpha), dim_(op.dimension()), points_(points), scratch_(op.dimension()) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("InterpolationNormTable requires 0 <= alpha <= 1");
    if (alpha == 0.0) return;
    const auto grid = geometric_grid(smallest_time(op, alpha), points_);
    table_.resize(dim_ * points_);
    const auto a = op.eigenvalues();
    for (std::size_t n = 0; n < dim_; ++n)
        for (std::size_t i = 0; i < points_; ++i) {
            const double c = std::pow(grid[i], 1.0 - alpha) * a[n] * std::exp(-a[n] * grid[i]);
            table_[n * points_ + i] = c * c;
        }
}

double InterpolationNormTable::seminorm(std::span<const double> x) const {
    if (alpha_ == 0.0) return 0.0;
    for (std::size_t n = 0; n < dim_; ++n) scratch_[n] = x[n] * x[n];
    const double best =
        simd::kernels().weighted_column_max(table_.data(), dim_, points_, scratch_.data());
    return std::sqrt(std::max(best, 0.0));
}

double InterpolationNormTable::norm(std::span<const double> x) const {
    return h_norm(x) + seminorm(x);
}

double smoothing_bound_check(const DiagonalOperator& op, double alpha, double beta, int trials,
                             std::uint64_t seed, std::size_t t_points) {
    if (!(alpha >= 0.0 && alpha <= beta && beta <= 1.0 && beta > 0.0))
        throw std::invalid_argument("smoothing_bound_check requires 0 <= alpha <= beta <= 1, beta > 0");
    if (trials < 0) throw std::invalid_argument("trials must be nonnegative");
    const InterpolationNormTable from(op, alpha);
    const InterpolationNormTable to(op, beta);
    const auto times = geometric_grid(smallest_time(op, alpha), std::max<std::size_t>(t_points, 2));
    double best = 0.0;
    for (const State& raw : probe_states(op.dimension(), trials, seed)) {
        const double scale = from.norm(raw);
        if (scale == 0.0) continue;
        for (double t : times) {
            const State y = semigroup_apply(op, t, raw);
            best = std::max(best, std::pow(t, beta - alpha) * to.norm(y) / scale);
        }
    }
    return best;
}

InterpolationInequality interpolation_inequality_check(const DiagonalOperator& op, double alpha,
                                                       double theta, std::span<const double> x) {
    require_dimension(op, x);
    if (!(alpha > 0.0 && alpha < theta && theta < 1.0))
        throw std::invalid_argument("interpolation inequality requires 0 < alpha < theta < 1");
    const double h = h_norm(x);
    if (h == 0.0) throw std::invalid_argument("interpolation ratio is undefined for x = 0");
    InterpolationInequality out;
    out.lhs = interpolation_norm(op, alpha, x).value;
    const double upper = interpolation_norm(op, theta, x).value;
    const double r = alpha / theta;
    out.rhs = std::pow(upper, r) * std::pow(h, 1.0 - r);
    out.ratio = out.lhs / out.rhs;
    return out;
}

double estimate_interpolation_constant(const DiagonalOperator& op, double alpha, double theta,
                                       int samples, std::uint64_t seed) {
    if (alpha == 0.0) return 1.0;
    const InterpolationNormTable lower(op, alpha);
    const InterpolationNormTable upper(op, theta);
    const double r = alpha / theta;
    double best = 0.0;
    for (const State& x : probe_states(op.dimension(), samples, seed)) {
        const double h = h_norm(x);
        best = std::max(best, lower.norm(x) / (std::pow(upper.norm(x), r) * std::pow(h, 1.0 - r)));
    }
    return best;
}

double exp_integral_weight(double a, double h) {
    if (a == 0.0) return h;
    const double x = a * h;
    if (x < 1e-8) return h * (1.0 - 0.5 * x);
    return -std::expm1(-x) / a;
}

std::vector<double> semigroup_convolution_grid(const DiagonalOperator& op,
                                               std::span<const double> times,
                                               std::span<const double> phi) {
    const std::size_t n = op.dimension();
    const std::size_t points = times.size();
    if (points == 0 || phi.size() != points * n)
        throw std::invalid_argument("phi must hold one state per grid time");
    const auto a = op.eigenvalues();
    std::vector<double> v(points * n, 0.0);
    for (std::size_t j = points - 1; j-- > 0;) {
        const double h = times[j + 1] - times[j];
        if (!(h > 0.0)) throw std::invalid_argument("grid times must be strictly increasing");
        for (std::size_t c = 0; c < n; ++c)
            v[j * n + c] = std::exp(-a[c] * h) * v[(j + 1) * n + c] +
                           exp_integral_weight(a[c], h) * phi[j * n + c];
    }
    return v;
}

State semigroup_convolution(const DiagonalOperator& op, std::span<const double> times,
                            std::span<const double> phi, double t) {
    const std::size_t n = op.dimension();
    if (times.empty() || phi.size() != times.size() * n)
        throw std::invalid_argument("phi must hold one state per grid time");
    if (!(t >= times.front() && t <= times.back()))
        throw std::invalid_argument("convolution time outside [a, T]");
    const auto grid = semigroup_convolution_grid(op, times, phi);
    // locate the cell [t_j, t_{j+1}) containing t and integrate the partial cell exactly
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t j = static_cast<std::size_t>(std::distance(times.begin(), it)) - 1;
    State out(n, 0.0);
    if (j + 1 >= times.size()) return out;  // t == T
    const auto a = op.eigenvalues();
    const double h = times[j + 1] - t;
    for (std::size_t c = 0; c < n; ++c)
        out[c] = std::exp(-a[c] * h) * grid[(j + 1) * n + c] +
                 exp_integral_weight(a[c], h) * phi[j * n + c];
    return out;
}

double convolution_holder_constant(const DiagonalOperator& op, double alpha, double horizon,
                                   std::size_t grid_points, int samples, std::uint64_t seed) {
    if (!(horizon > 0.0) || grid_points < 2)
        throw std::invalid_argument("Hoelder estimate needs a positive horizon and >= 2 points");
    const std::size_t n = op.dimension();
    std::vector<double> times(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i)
        times[i] = horizon * static_cast<double>(i) / static_cast<double>(grid_points - 1);

    const InterpolationNormTable norm(op, alpha);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<double>> candidates;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> phi(grid_points * n, 0.0);
        for (std::size_t j = 0; j < grid_points; ++j) phi[j * n + k] = 1.0;
        candidates.push_back(phi);
        for (std::size_t j = 0; j < grid_points; ++j) phi[j * n + k] = (j % 2 == 0) ? 1.0 : -1.0;
        candidates.push_back(std::move(phi));
    }
    for (int s = 0; s < samples; ++s) {
        std::vector<double> phi(grid_points * n);
        for (std::size_t j = 0; j < grid_points; ++j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                phi[j * n + c] = normal(rng);
                sq += phi[j * n + c] * phi[j * n + c];
            }
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t c = 0; c < n; ++c) phi[j * n + c] *= inv;
        }
        candidates.push_back(std::move(phi));
    }

    double best = 0.0;
    State diff(n);
    for (const auto& phi : candidates) {
        const auto v = semigroup_convolution_grid(op, times, phi);
        for (std::size_t i = 0; i < grid_points; ++i)
            for (std::size_t j = i + 1; j < grid_points; ++j) {
                for (std::size_t c = 0; c < n; ++c) diff[c] = v[j * n + c] - v[i * n + c];
                const double ratio =
                    norm.norm(diff) / std::pow(times[j] - times[i], 1.0 - alpha);
                best = std::max(best, ratio);
            }
    }
    return best;
}

OperatorConstants estimate_operator_constants(const DiagonalOperator& op, double alpha,
                                              double theta, double horizon, std::uint64_t seed) {
    OperatorConstants out;
    const std::size_t n = op.dimension();
    const InterpolationNormTable norm(op, alpha);
    const auto probes = probe_states(n, 32, seed);
    std::vector<double> times;
    for (int i = 0; i <= 64; ++i) times.push_back(horizon * i / 64.0);
    for (double t : geometric_grid(smallest_time(op, alpha), 64)) times.push_back(t * horizon);

    out.m_alpha = 1.0;
    out.c_alpha = 0.0;
    for (const State& x : probes) {
        const double xa = norm.norm(x);
        const double xh = h_norm(x);
        for (double t : times) {
            const State y = semigroup_apply(op, t, x);
            const double ya = norm.norm(y);
            out.m_alpha = std::max(out.m_alpha, ya / xa);
            if (t > 0.0) out.c_alpha = std::max(out.c_alpha, std::pow(t, alpha) * ya / xh);
        }
    }
    out.holder_G = convolution_holder_constant(op, alpha, horizon, 48, 24, seed + 1);
    if (alpha > 0.0 && theta > alpha && theta < 1.0) {
        out.interpolation_c = estimate_interpolation_constant(op, alpha, theta, 64, seed + 2);
        out.smoothing_c0 = smoothing_bound_check(op, alpha, theta, 32, seed + 3);
    } else {
        out.interpolation_c = 1.0;
        out.smoothing_c0 = out.m_alpha;
    }
    return out;
}

}  // namespace bsde
