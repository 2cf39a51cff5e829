#include "bsde/gronwall.hpp"

#include "bsde/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsde {

namespace {

using Rule = boost::math::quadrature::gauss<double, 20>;

double interpolate(const std::vector<double>& t, const std::vector<double>& w, double s) {
    const double T = t.back();
    const double h = T / static_cast<double>(t.size() - 1);
    if (s >= T) return w.back();
    if (s <= 0.0) return w.front();
    const auto i = std::min(static_cast<std::size_t>(s / h), t.size() - 2);
    const double u = (s - t[i]) / h;
    return (1.0 - u) * w[i] + u * w[i + 1];
}

// int_t^T (s-t)^{beta-1} (T-s)^{-alpha} w(s) ds, with both endpoint singularities
// removed by substitution on either half of the interval.
double kernel_integral(const GronwallInput& in, const std::vector<double>& grid,
                       const std::vector<double>& w, double t) {
    const double T = in.horizon;
    if (t >= T) return 0.0;
    const double mid = 0.5 * (t + T);
    const double beta = in.beta, alpha = in.alpha;

    const double left = Rule::integrate(
        [&](double v) {
            const double s = t + std::pow(v, 1.0 / beta);
            return std::pow(T - s, -alpha) * interpolate(grid, w, s) / beta;
        },
        0.0, std::pow(mid - t, beta));
    const double right = Rule::integrate(
        [&](double q) {
            const double s = T - std::pow(q, 1.0 / (1.0 - alpha));
            return std::pow(s - t, beta - 1.0) * interpolate(grid, w, s) / (1.0 - alpha);
        },
        0.0, std::pow(T - mid, 1.0 - alpha));
    return left + right;
}

}  // namespace

void GronwallInput::validate() const {
    if (!(a >= 0.0) || !(b >= 0.0)) throw ValidationError("gronwall", "a and b must be nonnegative");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("gronwall", "alpha must lie in [0,1)");
    if (!(beta > 0.0)) throw ValidationError("gronwall", "beta must be positive");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw ValidationError("gronwall", "T must be finite and positive");
}

double GronwallRecursion::value(const GronwallInput& in, double t) const {
    const double T = in.horizon;
    if (!(t < T)) throw Error("gronwall: t must be < T");
    const double envelope = in.a * std::pow(T - t, -in.alpha);
    if (in.b == 0.0) return envelope;
    return envelope + in.b * kernel_integral(in, this->t, weighted, t);
}

GronwallRecursion gronwall_recursion(const GronwallInput& in, GronwallOptions options) {
    in.validate();
    const std::size_t n = std::max<std::size_t>(options.grid_points, 3);
    const double T = in.horizon;
    GronwallRecursion rec;
    rec.t.resize(n);
    for (std::size_t i = 0; i < n; ++i) rec.t[i] = T * static_cast<double>(i) / static_cast<double>(n - 1);
    rec.weighted.assign(n, in.a);
    if (options.keep_history) rec.history.push_back(rec.weighted);
    if (in.b == 0.0 || in.a == 0.0) {
        rec.constant_M = 1.0;
        return rec;
    }

    std::vector<double> next(n);
    for (int k = 1; k <= options.max_iterations; ++k) {
        double change = 0.0, size = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double tt = rec.t[i];
            next[i] = in.a + in.b * std::pow(T - tt, in.alpha) * kernel_integral(in, rec.t, rec.weighted, tt);
            change = std::max(change, std::abs(next[i] - rec.weighted[i]));
            size = std::max(size, std::abs(next[i]));
        }
        next[n - 1] = in.a;
        rec.weighted.swap(next);
        rec.iterations = k;
        if (options.keep_history) rec.history.push_back(rec.weighted);
        if (!std::isfinite(size))
            throw Divergence("gronwall recursion overflowed after " + std::to_string(k) + " iterations");
        if (change <= options.rel_tol * size) break;
        if (k == options.max_iterations)
            throw Divergence("gronwall recursion not stable after " + std::to_string(k) +
                             " iterations (b T^beta too large); last change " + std::to_string(change));
    }
    rec.constant_M = *std::max_element(rec.weighted.begin(), rec.weighted.end()) / in.a;
    return rec;
}

double gronwall_constant(const GronwallInput& in) {
    in.validate();
    if (in.beta == 1.0) return 1.0 + in.b * std::exp(in.b * in.horizon) * in.horizon / (1.0 - in.alpha);
    GronwallInput unit = in;
    unit.a = 1.0;
    return gronwall_recursion(unit).constant_M;
}

double gronwall_bound_iterative(const GronwallInput& in, double t, int iterations) {
    GronwallOptions options;
    options.max_iterations = iterations;
    return gronwall_recursion(in, options).value(in, t);
}

std::vector<GronwallRow> gronwall_table(const GronwallInput& in, std::size_t points) {
    const auto rec = gronwall_recursion(in);
    const double M = gronwall_constant(in);
    const double T = in.horizon;
    const double last = in.alpha > 0.0 ? T * (1.0 - 1e-3) : T * (1.0 - 1e-9);
    std::vector<GronwallRow> rows;
    points = std::max<std::size_t>(points, 1);
    for (std::size_t i = 0; i < points; ++i) {
        const double t = points == 1 ? 0.0 : last * static_cast<double>(i) / static_cast<double>(points - 1);
        rows.push_back({t, rec.value(in, t), in.a * M * std::pow(T - t, -in.alpha)});
    }
    return rows;
}

GronwallVerdict verify_on_process(const GridProcess& U, std::span<const double> times,
                                  const GronwallInput& in) {
    in.validate();
    if (U.dim() != 1 || U.times() != times.size()) throw Error("verify_on_process: expects a scalar process on the grid");
    const std::size_t L = times.size() - 1;
    const double T = in.horizon;
    const double cutoff = in.alpha > 0.0 ? T - 1e-3 * T : T;
    const double M = gronwall_constant(in);

    std::vector<double> top(times.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t l = 0; l <= L; ++l)
        for (double v : U.column(l, 0)) top[l] = std::max(top[l], v);

    GronwallVerdict out;
    out.hypothesis_holds = true;
    out.margin = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l <= L; ++l) {
        const double t = times[l];
        if (t > cutoff || (in.alpha > 0.0 && t >= T)) continue;
        double rhs = in.a * std::pow(T - t, -in.alpha);
        for (std::size_t j = l; j < L; ++j) {
            const double cell = (std::pow(times[j + 1] - t, in.beta) - std::pow(times[j] - t, in.beta)) / in.beta;
            rhs += in.b * cell * std::max(top[j], top[j + 1]);
        }
        const double bound = in.a * M * std::pow(T - t, -in.alpha);
        for (double v : U.column(l, 0)) {
            if (v > rhs * (1.0 + 1e-12) + 1e-300) out.hypothesis_holds = false;
            out.margin = std::min(out.margin, bound - v);
        }
    }
    if (!out.hypothesis_holds) {
        out.holds = false;
        out.verdict = "hypothesis violated";
        return out;
    }
    out.holds = out.margin >= 0.0;
    out.verdict = out.holds ? "holds" : "fails";
    return out;
}

}  // namespace bsde
