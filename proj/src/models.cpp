#include "bsde/models.hpp"

#include "bsde/errors.hpp"
#include "bsde/stochastic_driver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

namespace bsde {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

double odd_poly(const std::vector<double>& c, double x) {
    const double x2 = x * x;
    double p = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) p = p * x2 + c[i];
    return p * x;
}

double power_int(double x, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

// Scales x so that its H_alpha norm equals `target`.
void rescale_to(State& x, const InterpolationNormTable& norm, double target) {
    const double n = norm.norm(x);
    if (n > 0.0)
        for (double& v : x) v *= target / n;
}

// y and y' inside the ball of radius R (uniform radius, random direction).
std::pair<State, State> ball_pair(std::mt19937_64& rng, std::size_t dim, double R, double decay,
                                  const InterpolationNormTable& norm) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    State a = random_state(rng, dim, 1.0, decay);
    State b = random_state(rng, dim, 1.0, decay);
    rescale_to(a, norm, R * unit(rng));
    rescale_to(b, norm, R * unit(rng));
    return {a, b};
}

double diff_norm(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

SineCollocation::SineCollocation(std::size_t modes, std::size_t points)
    : modes_(modes), points_(points), nodes_(points), basis_(modes * points) {
    if (modes == 0 || points < modes) throw Error("sine collocation needs 0 < modes <= points");
    const double c = std::sqrt(2.0 / kPi);
    for (std::size_t j = 0; j < points; ++j) nodes_[j] = static_cast<double>(j + 1) * kPi / static_cast<double>(points + 1);
    for (std::size_t m = 0; m < modes; ++m)
        for (std::size_t j = 0; j < points; ++j)
            basis_[m * points + j] = c * std::sin(static_cast<double>(m + 1) * nodes_[j]);
}

void SineCollocation::synthesize(std::span<const double> y, std::span<double> u) const {
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t m = 0; m < modes_; ++m)
        for (std::size_t j = 0; j < points_; ++j) u[j] += y[m] * basis_[m * points_ + j];
}

void SineCollocation::analyze(std::span<const double> u, std::span<double> y) const {
    const double w = kPi / static_cast<double>(points_ + 1);
    for (std::size_t m = 0; m < modes_; ++m) {
        double s = 0.0;
        for (std::size_t j = 0; j < points_; ++j) s += u[j] * basis_[m * points_ + j];
        y[m] = w * s;
    }
}

BsdeProblem build_reaction_diffusion(const ReactionDiffusionSpec& spec) {
    const std::size_t N = spec.modes;
    if (N == 0) throw ValidationError("reaction-diffusion", "needs at least one mode");
    for (double c : spec.r_coefficients)
        if (!(c >= 0.0)) throw ValidationError("reaction-diffusion", "r must be increasing (coefficients >= 0)");
    int top = -1;
    for (std::size_t i = 0; i < spec.r_coefficients.size(); ++i)
        if (spec.r_coefficients[i] != 0.0) top = static_cast<int>(i);
    const double gamma = top >= 0 ? 2.0 * top + 1.0 : 1.0;
    if (top >= 0 && spec.alpha > 0.0 && !(gamma * spec.alpha < 1.0 && gamma > 1.0))
        throw ValidationError("growth exponent 1 < gamma < 1/alpha",
                              "gamma = " + fmt(gamma) + ", alpha = " + fmt(spec.alpha) +
                                  ", gamma*alpha = " + fmt(gamma * spec.alpha) + " (must be < 1)");

    BsdeProblem p;
    p.name = "reaction-diffusion-1d";
    p.op = DiagonalOperator::laplacian_dirichlet_1d(N);
    p.horizon = spec.horizon;
    p.alpha = spec.alpha;
    p.noise_dim = N;

    auto grid = std::make_shared<SineCollocation>(N, spec.collocation_factor * N);
    const double sup_factor = 2.0 * static_cast<double>(N) / kPi;  // |u|_inf^2 <= (2N/pi) |y|^2

    if (top >= 0) {
        const auto coeffs = spec.r_coefficients;
        p.f0.eval = [grid, coeffs](double, std::span<const double> y, std::span<double> out) {
            State u(grid->points());
            grid->synthesize(y, u);
            for (double& v : u) v = -odd_poly(coeffs, v);
            grid->analyze(u, out);
        };
        p.f0.gamma = gamma;
        double s_analytic = 0.0;
        for (std::size_t i = 0; i < coeffs.size(); ++i) s_analytic += coeffs[i] * std::pow(sup_factor, double(i));
        auto l_analytic = [coeffs, sup_factor](double R) {
            double l = 0.0;
            for (std::size_t i = 0; i < coeffs.size(); ++i)
                l += coeffs[i] * (2.0 * i + 1.0) * std::pow(sup_factor, double(i)) * std::pow(R, 2.0 * i);
            return l;
        };

        // sampled fractions of the analytic constants, with margin, capped at 1
        const InterpolationNormTable norm(p.op, p.alpha);
        std::mt19937_64 rng(spec.fit_seed);
        double growth_frac = 0.0, lip_frac = 0.0;
        State f(N), g(N);
        for (double R : {0.25, 0.5, 1.0, 2.0, 5.0}) {
            for (int s = 0; s < 2000; ++s) {
                auto [a, b] = ball_pair(rng, N, R, 1.0, norm);
                p.f0.eval(0.0, a, f);
                p.f0.eval(0.0, b, g);
                growth_frac = std::max(growth_frac, h_norm(f) / (s_analytic * (1.0 + std::pow(norm.norm(a), gamma))));
                const double dy = diff_norm(a, b);
                if (dy > 0.0) lip_frac = std::max(lip_frac, diff_norm(f, g) / (l_analytic(R) * dy));
            }
        }
        growth_frac = std::min(1.0, spec.fit_margin * growth_frac);
        lip_frac = std::min(1.0, spec.fit_margin * lip_frac);
        p.f0.growth_S = growth_frac * s_analytic;
        p.f0.lipschitz = [l_analytic, lip_frac](double R) { return lip_frac * l_analytic(R); };
        p.f0.mu = 0.0;
    }

    if (spec.driver_K1 != 0.0) {
        const double K1 = spec.driver_K1;
        p.f1.eval = [grid, K1](double, std::span<const double> y, std::span<const double>, std::span<double> out) {
            State u(grid->points());
            grid->synthesize(y, u);
            for (std::size_t j = 0; j < u.size(); ++j) u[j] = -K1 * std::tanh(u[j]) * std::sin(grid->node(j));
            grid->analyze(u, out);
        };
        p.f1.lipschitz_K = std::abs(K1);
        p.f1.bound_C = std::abs(K1) * std::sqrt(kPi / 2.0);
    }

    State peak(N);
    const double rho = spec.deterministic_terminal ? 0.0 : spec.terminal_rho;
    for (std::size_t n = 0; n < N; ++n)
        peak[n] = std::abs(spec.terminal_scale) / double((n + 1) * (n + 1)) * (1.0 + std::abs(rho));
    const double scale = spec.terminal_scale;
    p.terminal.eval = [scale, rho, N](const WienerEnsemble& ens, std::size_t m, std::span<double> out) {
        for (std::size_t n = 0; n < N; ++n)
            out[n] = scale / double((n + 1) * (n + 1)) * (1.0 + rho * std::tanh(ens.terminal_position(m, n)));
    };
    p.terminal.deterministic = rho == 0.0;
    p.terminal.h_bound = h_norm(peak);
    p.terminal.alpha_bound =
        p.alpha > 0.0 ? interpolation_norm(p.op, p.alpha, peak).value * (1.0 + 1e-9) : p.terminal.h_bound;
    return p;
}

void spin_drift(int k, std::span<const double> y, std::span<double> out) {
    const std::size_t N = y.size();
    const int power = 2 * k + 1;
    for (std::size_t j = 0; j < N; ++j) {
        const double right = j + 1 < N ? y[j + 1] : 0.0;
        const double left = j > 0 ? y[j - 1] : 0.0;
        out[j] = power_int(right - y[j], power) + power_int(left - y[j], power);
    }
}

BsdeProblem build_spin_system(const SpinSpec& spec) {
    if (spec.half_width < 1 || spec.k < 1) throw ValidationError("spin system", "needs n >= 1 and k >= 1");
    const std::size_t N = 2 * spec.half_width + 1;
    std::vector<double> a = spec.coefficients.empty() ? std::vector<double>(N, 1.0) : spec.coefficients;
    if (a.size() != N) throw ValidationError("spin system", "expected " + std::to_string(N) + " coefficients");

    BsdeProblem p;
    p.name = "spin-chain";
    p.op = DiagonalOperator::lattice_diagonal(a);
    p.horizon = spec.horizon;
    p.alpha = 0.0;
    p.noise_dim = N;
    const int k = spec.k;
    p.f0.eval = [k](double, std::span<const double> y, std::span<double> out) { spin_drift(k, y, out); };
    p.f0.gamma = 2.0 * k + 1.0;
    p.f0.growth_S = 2.0 * std::pow(2.0, 2.0 * k + 1.0);
    p.f0.lipschitz = [k](double R) { return 4.0 * (2.0 * k + 1.0) * std::pow(2.0 * R, 2.0 * k); };
    p.f0.mu = 0.0;

    const double off = spec.terminal_offset, amp = spec.terminal_amplitude;
    p.terminal.eval = [off, amp, N](const WienerEnsemble& ens, std::size_t m, std::span<double> out) {
        for (std::size_t j = 0; j < N; ++j) out[j] = off + amp * std::tanh(ens.terminal_position(m, j));
    };
    p.terminal.deterministic = amp == 0.0;
    p.terminal.h_bound = std::sqrt(double(N)) * (std::abs(off) + std::abs(amp));
    p.terminal.alpha_bound = p.terminal.h_bound;
    return p;
}

BsdeProblem build_linear_oracle(LinearOracle kind, double horizon, std::size_t modes) {
    BsdeProblem p;
    p.horizon = horizon;
    p.noise_dim = 1;
    const double inf = std::numeric_limits<double>::infinity();
    switch (kind) {
    case LinearOracle::martingale:
        p.name = "linear-martingale";
        p.op = DiagonalOperator(std::vector<double>{0.0});
        p.terminal.eval = [](const WienerEnsemble& ens, std::size_t m, std::span<double> out) {
            out[0] = ens.terminal_position(m, 0);
        };
        p.terminal.h_bound = p.terminal.alpha_bound = inf;
        break;
    case LinearOracle::quadratic:
        p.name = "linear-quadratic";
        p.op = DiagonalOperator(std::vector<double>{0.0});
        p.terminal.eval = [](const WienerEnsemble& ens, std::size_t m, std::span<double> out) {
            const double w = ens.terminal_position(m, 0);
            out[0] = w * w;
        };
        p.terminal.h_bound = p.terminal.alpha_bound = inf;
        break;
    case LinearOracle::heat: {
        p.name = "linear-heat";
        p.op = DiagonalOperator::laplacian_dirichlet_1d(modes);
        State xi(modes);
        for (std::size_t n = 0; n < modes; ++n) xi[n] = 1.0 / double((n + 1) * (n + 1));
        p.terminal.eval = [xi](const WienerEnsemble&, std::size_t, std::span<double> out) {
            std::copy(xi.begin(), xi.end(), out.begin());
        };
        p.terminal.deterministic = true;
        p.terminal.h_bound = h_norm(xi);
        p.terminal.alpha_bound = p.terminal.h_bound;
        break;
    }
    }
    p.validated = true;
    return p;
}

DriftFn anti_dissipative_drift() {
    return [](double, std::span<const double> y, std::span<double> out) {
        std::copy(y.begin(), y.end(), out.begin());
    };
}

State random_state(std::mt19937_64& rng, std::size_t dim, double scale, double decay) {
    std::uniform_real_distribution<double> u(-scale, scale);
    State x(dim);
    for (std::size_t n = 0; n < dim; ++n) x[n] = u(rng) / std::pow(double(n + 1), decay);
    return x;
}

PairSampler boundary_matched_pairs(std::size_t dim, double scale) {
    return [dim, scale](std::mt19937_64& rng) {
        State a = random_state(rng, dim, scale);
        State b = random_state(rng, dim, scale);
        b.front() = a.front();
        b.back() = a.back();
        return std::pair{a, b};
    };
}

PairSampler independent_pairs(std::size_t dim, double scale, double decay) {
    return [dim, scale, decay](std::mt19937_64& rng) {
        return std::pair{random_state(rng, dim, scale, decay), random_state(rng, dim, scale, decay)};
    };
}

DissipativityReport check_dissipativity(const DriftFn& f0, const PairSampler& sampler, std::size_t trials,
                                        std::uint64_t seed, double tolerance) {
    DissipativityReport rep;
    rep.trials = trials;
    if (!f0 || trials == 0) return rep;
    std::mt19937_64 rng(seed);
    rep.max_inner = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < trials; ++i) {
        auto [y, z] = sampler(rng);
        State fy(y.size()), fz(y.size());
        f0(0.0, y, fy);
        f0(0.0, z, fz);
        double inner = 0.0;
        for (std::size_t n = 0; n < y.size(); ++n) inner += (fy[n] - fz[n]) * (y[n] - z[n]);
        rep.max_inner = std::max(rep.max_inner, inner);
    }
    rep.dissipative = rep.max_inner <= tolerance;
    return rep;
}

GrowthLipschitzReport check_growth_and_lipschitz(const Drift& f0, const DiagonalOperator& op, double alpha,
                                                 const std::vector<double>& radii, std::size_t trials,
                                                 std::uint64_t seed, double decay) {
    GrowthLipschitzReport rep;
    rep.trials = trials;
    if (f0.zero()) return rep;
    const InterpolationNormTable norm(op, alpha);
    const std::size_t N = op.dimension();
    std::mt19937_64 rng(seed);
    State fa(N), fb(N), d(N);
    for (double R : radii) {
        const double L = f0.lipschitz_at(R);
        for (std::size_t i = 0; i < trials; ++i) {
            auto [a, b] = ball_pair(rng, N, R, decay, norm);
            f0.eval(0.0, a, fa);
            f0.eval(0.0, b, fb);
            const double growth = h_norm(fa);
            const double cap = f0.growth_S * (1.0 + std::pow(norm.norm(a), f0.gamma));
            rep.worst_growth_ratio = std::max(rep.worst_growth_ratio, cap > 0.0 ? growth / cap : (growth > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
            for (std::size_t n = 0; n < N; ++n) d[n] = a[n] - b[n];
            const double dn = norm.norm(d);
            if (dn > 0.0) {
                const double lip = diff_norm(fa, fb);
                rep.worst_lipschitz_ratio =
                    std::max(rep.worst_lipschitz_ratio, L > 0.0 ? lip / (L * dn) : (lip > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
            }
        }
    }
    rep.passes = rep.worst_growth_ratio <= 1.0 && rep.worst_lipschitz_ratio <= 1.0;
    return rep;
}

bool ValidationReport::all_pass() const {
    return std::all_of(items.begin(), items.end(), [](const ValidationItem& i) { return i.pass; });
}

ValidationReport validate_problem(BsdeProblem& problem, const ValidationOptions& options) {
    ValidationReport rep;
    problem.validated = false;
    const std::size_t N = problem.dim();

    try {
        problem.check_hypotheses();
        rep.items.push_back({"hypotheses", 0.0, 0.0, true, "structural constraints hold"});
    } catch (const ValidationError& e) {
        rep.items.push_back({"hypotheses", 0.0, 0.0, false, e.what()});
        return rep;
    }

    if (!problem.f0.zero()) {
        const BsdeProblem shifted = exponential_shift(problem, std::max(problem.f0.mu, 0.0));
        double worst = -std::numeric_limits<double>::infinity();
        for (double scale : {0.1, 1.0}) {
            const auto d = check_dissipativity(shifted.f0.eval, independent_pairs(N, scale, 1.0),
                                               options.trials, options.seed + 1);
            worst = std::max(worst, d.max_inner);
        }
        rep.items.push_back({"dissipativity", worst, 1e-12, worst <= 1e-12,
                             "max <f0(y)-f0(y'), y-y'> after the mu-shift"});

        const auto g = check_growth_and_lipschitz(problem.f0, problem.op, problem.alpha, options.radii,
                                                  options.trials, options.seed + 2, 1.0);
        rep.items.push_back({"growth", g.worst_growth_ratio, 1.0, g.worst_growth_ratio <= 1.0,
                             "|f0(y)| / (S (1 + ||y||^gamma))"});
        rep.items.push_back({"local-lipschitz", g.worst_lipschitz_ratio, 1.0, g.worst_lipschitz_ratio <= 1.0,
                             "|f0(y)-f0(y')| / (L_R ||y-y'||)"});
    }

    if (!problem.f1.zero()) {
        std::mt19937_64 rng(options.seed + 3);
        const std::size_t NK = N * problem.noise_dim;
        double bound = 0.0, lip = 0.0;
        State fa(N), fb(N);
        for (std::size_t i = 0; i < options.trials; ++i) {
            const double s = i % 2 ? 5.0 : 0.5;
            State y1 = random_state(rng, N, s), y2 = random_state(rng, N, s);
            State z1 = random_state(rng, NK, s), z2 = random_state(rng, NK, s);
            problem.f1.eval(0.0, y1, z1, fa);
            problem.f1.eval(0.0, y2, z2, fb);
            bound = std::max(bound, h_norm(fa));
            const double dist = diff_norm(y1, y2) + diff_norm(z1, z2);
            if (dist > 0.0) lip = std::max(lip, diff_norm(fa, fb) / dist);
        }
        const double C = problem.f1.bound_C, K = problem.f1.lipschitz_K;
        rep.items.push_back({"driver-bound", C > 0.0 ? bound / C : bound, 1.0,
                             bound <= C * (1.0 + 1e-12), "|f1| / C"});
        rep.items.push_back({"driver-lipschitz", K > 0.0 ? lip / K : lip, 1.0,
                             lip <= K * (1.0 + 1e-12), "|f1(y,z)-f1(y',z')| / (K (|y-y'| + ||z-z'||))"});
    }

    {
        const auto ens = sample_ensemble(TimeGrid::uniform(problem.horizon, 4), problem.noise_dim,
                                         options.terminal_paths, options.seed + 4);
        const InterpolationNormTable norm(problem.op, problem.alpha);
        double worst_h = 0.0, worst_a = 0.0;
        State xi(N);
        for (std::size_t m = 0; m < ens.paths(); ++m) {
            problem.terminal.eval(ens, m, xi);
            worst_h = std::max(worst_h, h_norm(xi));
            worst_a = std::max(worst_a, norm.norm(xi));
        }
        const bool ok = worst_h <= problem.terminal.h_bound * (1.0 + 1e-12) &&
                        worst_a <= problem.terminal.alpha_bound * (1.0 + 1e-12);
        rep.items.push_back({"terminal-bound", worst_a, problem.terminal.alpha_bound, ok,
                             "sampled ||xi||_alpha against the declared bound"});
    }

    problem.validated = rep.all_pass();
    return rep;
}

}  // namespace bsde
