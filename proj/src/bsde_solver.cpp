#include "bsde/bsde_solver.hpp"

#include "bsde/errors.hpp"
#include "bsde/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace bsde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A window stopped contracting; the caller halves it.
class ContractionStalled : public Error {
public:
    using Error::Error;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// Slices of `frozen` repeated so that it lives on a grid refined by `factor`.
GridProcess refine_frozen(const GridProcess& frozen, std::size_t factor) {
    const std::size_t L = frozen.times() - 1;
    GridProcess out(L * factor + 1, frozen.dim(), frozen.paths());
    for (std::size_t l = 0; l < L; ++l) {
        auto src = frozen.slice(l);
        for (std::size_t r = 0; r < factor; ++r) {
            auto dst = out.slice(l * factor + r);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    auto last = frozen.slice(L);
    std::copy(last.begin(), last.end(), out.slice(L * factor).begin());
    return out;
}

}  // namespace

void BsdeProblem::check_hypotheses() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw ValidationError("horizon", "T must be finite and positive, got " + fmt(horizon));
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw ValidationError("interpolation index", "alpha must lie in [0,1), got " + fmt(alpha));
    if (!terminal.eval) throw ValidationError("terminal", "no terminal condition");
    if (!f0.zero()) {
        if (!(f0.growth_S >= 0.0))
            throw ValidationError("growth bound", "S must be nonnegative");
        if (alpha > 0.0 && !(f0.gamma > 1.0 && f0.gamma * alpha < 1.0))
            throw ValidationError("growth exponent 1 < gamma < 1/alpha",
                                  "gamma = " + fmt(f0.gamma) + ", alpha = " + fmt(alpha) +
                                      ", gamma*alpha = " + fmt(f0.gamma * alpha));
    }
    if (!(f1.lipschitz_K >= 0.0) || !(f1.bound_C >= 0.0))
        throw ValidationError("driver constants", "K and C must be nonnegative");
}

BsdeProblem exponential_shift(const BsdeProblem& problem, double lambda) {
    BsdeProblem p = problem;
    if (lambda == 0.0) return p;
    const double T = problem.horizon;
    const double gain = std::exp(lambda * T);

    p.terminal.eval = [orig = problem.terminal.eval, gain](const WienerEnsemble& ens, std::size_t m,
                                                           std::span<double> out) {
        orig(ens, m, out);
        for (double& v : out) v *= gain;
    };
    p.terminal.h_bound *= gain;
    p.terminal.alpha_bound *= gain;

    if (problem.f0.zero()) {
        p.f0.eval = [lambda](double, std::span<const double> y, std::span<double> out) {
            for (std::size_t i = 0; i < y.size(); ++i) out[i] = -lambda * y[i];
        };
        p.f0.growth_S = lambda;
        p.f0.lipschitz = [lambda](double) { return lambda; };
    } else {
        p.f0.eval = [orig = problem.f0.eval, lambda](double t, std::span<const double> y,
                                                     std::span<double> out) {
            const double up = std::exp(lambda * t);
            State scaled(y.begin(), y.end());
            for (double& v : scaled) v /= up;
            orig(t, scaled, out);
            for (std::size_t i = 0; i < y.size(); ++i) out[i] = up * out[i] - lambda * y[i];
        };
        p.f0.growth_S = gain * problem.f0.growth_S + lambda;
        p.f0.lipschitz = [orig = problem.f0, lambda](double R) { return orig.lipschitz_at(R) + lambda; };
    }
    p.f0.mu = problem.f0.mu - lambda;

    if (!problem.f1.zero()) {
        p.f1.eval = [orig = problem.f1.eval, lambda](double t, std::span<const double> y,
                                                     std::span<const double> z, std::span<double> out) {
            const double up = std::exp(lambda * t);
            State ys(y.begin(), y.end()), zs(z.begin(), z.end());
            for (double& v : ys) v /= up;
            for (double& v : zs) v /= up;
            orig(t, ys, zs, out);
            for (double& v : out) v *= up;
        };
        p.f1.bound_C = gain * problem.f1.bound_C;
    }
    p.name = problem.name + " (shifted by " + fmt(lambda) + ")";
    return p;
}

SolutionPair unshift_solution(SolutionPair solution, double lambda) {
    if (lambda == 0.0) return solution;
    for (std::size_t l = 0; l < solution.Y.times(); ++l)
        simd::scale(std::exp(-lambda * solution.grid[l]), solution.Y.slice(l));
    for (std::size_t l = 0; l < solution.Z.times(); ++l)
        simd::scale(std::exp(-lambda * solution.grid[l]), solution.Z.slice(l));
    return solution;
}

double apriori_h_bound(double terminal_h_bound, double growth_S, double bound_C, double horizon) {
    const double T = horizon;
    return std::sqrt((terminal_h_bound * terminal_h_bound + (growth_S * growth_S + bound_C * bound_C) * T) *
                     (1.0 + 2.0 * T * std::exp(2.0 * T)));
}

double blowup_bound(double c2, double theta, double alpha, double horizon, double t) {
    if (!(t < horizon)) throw Error("blowup_bound: t = " + fmt(t) + " must be < T = " + fmt(horizon));
    return c2 * std::pow(horizon - t, -(theta - alpha));
}

RadiusDelta select_local_radius_and_delta(const BsdeProblem& problem,
                                          const OperatorConstants& constants,
                                          double terminal_bound, double safety, double max_window) {
    RadiusDelta out;
    const double alpha = problem.alpha;
    const double R = 2.0 * constants.m_alpha * terminal_bound;
    out.radius = R;

    const double GL = problem.f0.zero() ? 0.0 : constants.holder_G * problem.f0.lipschitz_at(R);
    out.delta0 = GL > 0.0 ? std::pow(2.0 * GL, -1.0 / (1.0 - alpha)) : kInf;

    const double S = problem.f0.zero() ? 0.0 : problem.f0.growth_S;
    const double C = problem.f1.zero() ? 0.0 : problem.f1.bound_C;
    const double load = constants.c_alpha * (S * (1.0 + std::pow(R, problem.f0.gamma)) + C);
    out.delta1 = load > 0.0 ? std::pow(0.5 * R * (1.0 - alpha) / load, 1.0 / (1.0 - alpha)) : kInf;

    double delta = std::min(out.delta0, out.delta1);
    delta = std::isfinite(delta) ? delta / safety : max_window;
    out.delta = std::min(delta, max_window);
    if (!(out.delta > 0.0))
        throw WindowCollapse("window collapse: R = " + fmt(R) + ", L_R = " +
                             fmt(problem.f0.lipschitz_at(R)) + ", G = " + fmt(constants.holder_G) +
                             ", delta0 = " + fmt(out.delta0) + ", delta1 = " + fmt(out.delta1));
    return out;
}

double weighted_squared_distance(const SolutionPair& a, const SolutionPair& b, double beta) {
    const std::size_t L = a.grid.steps();
    const std::size_t M = a.Y.paths();
    double total = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        double d = simd::squared_distance(a.Y.slice(l), b.Y.slice(l));
        d += simd::squared_distance(a.Z.slice(l), b.Z.slice(l));
        total += std::exp(beta * a.grid[l]) * d * a.grid.dt(l);
    }
    return total / static_cast<double>(M);
}

// ---------------------------------------------------------------------------

BsdeSolver::BsdeSolver(BsdeProblem problem, const WienerEnsemble& ensemble, RegressionBasis basis,
                       SolverConfig config)
    : problem_(std::move(problem)), basis_(basis), config_(config) {
    problem_.check_hypotheses();
    if (!problem_.validated && !config_.allow_unvalidated)
        throw ValidationError("validation", "problem '" + problem_.name +
                                                "' has not passed the model validation suite");
    if (std::abs(ensemble.grid().horizon() - problem_.horizon) > 1e-12 * problem_.horizon)
        throw Error("ensemble horizon " + fmt(ensemble.grid().horizon()) + " differs from T = " +
                    fmt(problem_.horizon));
    if (ensemble.noise_dim() < problem_.noise_dim)
        throw Error("ensemble has " + std::to_string(ensemble.noise_dim()) + " noise coordinates, problem needs " +
                    std::to_string(problem_.noise_dim));
    constants_ = estimate_operator_constants(problem_.op, problem_.alpha, problem_.theta(),
                                             problem_.horizon, config_.constants_seed);
    alpha_norm_ = std::make_unique<InterpolationNormTable>(problem_.op, problem_.alpha, 256);
    theta_norm_ = std::make_unique<InterpolationNormTable>(problem_.op, problem_.theta(), 256);
    solving_ = problem_;
    rebuild(ensemble);
}

BsdeSolver::~BsdeSolver() = default;

void BsdeSolver::rebuild(const WienerEnsemble& ensemble) {
    expectation_.reset();
    ensemble_ = std::make_unique<WienerEnsemble>(ensemble);
    expectation_ = std::make_unique<ConditionalExpectation>(*ensemble_, basis_);
}

std::vector<double> BsdeSolver::terminal_values() const {
    const std::size_t N = problem_.dim();
    const std::size_t M = ensemble_->paths();
    std::vector<double> out(N * M);
    State xi(N);
    for (std::size_t m = 0; m < M; ++m) {
        solving_.terminal.eval(*ensemble_, m, xi);
        for (std::size_t n = 0; n < N; ++n) out[n * M + m] = xi[n];
    }
    return out;
}

double BsdeSolver::default_tolerance() const {
    const std::size_t N = problem_.dim();
    const std::size_t M = ensemble_->paths();
    const auto xi = terminal_values();
    double var = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        double mean = 0.0;
        for (std::size_t m = 0; m < M; ++m) mean += xi[n * M + m];
        mean /= static_cast<double>(M);
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += (xi[n * M + m] - mean) * (xi[n * M + m] - mean);
        var += s / static_cast<double>(std::max<std::size_t>(M - 1, 1));
        scale += mean * mean;
    }
    const double se = std::sqrt(var / static_cast<double>(M));
    return std::max(3.0 * se, 1e-10 * (1.0 + std::sqrt(scale)));
}

double BsdeSolver::max_theta_norm(const GridProcess& Y, std::size_t l) const {
    State y(Y.dim());
    double best = 0.0;
    for (std::size_t m = 0; m < Y.paths(); ++m) {
        Y.gather(l, m, y);
        best = std::max(best, theta_norm_->norm(y));
    }
    return best;
}

WindowSolution BsdeSolver::picard_map(Window window, const GridProcess& U,
                                      const GridProcess* f1_frozen, std::span<const double> terminal,
                                      double radius, bool with_z, bool drop_f0) {
    const BsdeProblem& p = solving_;
    const TimeGrid& grid = ensemble_->grid();
    const std::size_t N = p.dim();
    const std::size_t M = ensemble_->paths();
    const std::size_t P = window.points();
    if (window.end >= grid.points() || window.begin >= window.end)
        throw Error("picard_map: invalid window");
    if (terminal.size() != N * M) throw Error("picard_map: terminal has wrong shape");
    const bool use_f0 = !drop_f0 && !p.f0.zero();
    if (use_f0 && (U.times() != P || U.dim() != N || U.paths() != M))
        throw Error("picard_map: U does not match the window");

    WindowSolution out{GridProcess(P, N, M), GridProcess()};
    std::copy(terminal.begin(), terminal.end(), out.Y.slice(P - 1).begin());

    std::vector<double> S(terminal.begin(), terminal.end());
    State u(N), phi(N), weight(N);
    const auto a = p.op.eigenvalues();

    for (std::size_t l = window.end; l-- > window.begin;) {
        const double h = grid.dt(l);
        const double t = grid[l];
        for (std::size_t n = 0; n < N; ++n) {
            simd::scale(std::exp(-a[n] * h), std::span<double>(S.data() + n * M, M));
            weight[n] = exp_integral_weight(a[n], h);
        }
        if (use_f0 || f1_frozen) {
            for (std::size_t m = 0; m < M; ++m) {
                std::fill(phi.begin(), phi.end(), 0.0);
                if (use_f0) {
                    U.gather(l - window.begin, m, u);
                    const double norm = alpha_norm_->norm(u);
                    if (norm > radius) throw RadiusExceeded(radius, norm);
                    p.f0.eval(t, u, phi);
                }
                if (f1_frozen)
                    for (std::size_t n = 0; n < N; ++n) phi[n] += f1_frozen->at(l, n, m);
                for (std::size_t n = 0; n < N; ++n) S[n * M + m] += weight[n] * phi[n];
            }
        }
        auto fitted = expectation_->project(l, S, N).fitted;
        std::copy(fitted.begin(), fitted.end(), out.Y.slice(l - window.begin).begin());
    }
    if (with_z) out.Z = window_z(window, out.Y);
    return out;
}

GridProcess BsdeSolver::window_z(Window window, const GridProcess& Y) {
    const TimeGrid& grid = ensemble_->grid();
    const std::size_t N = Y.dim();
    const std::size_t M = Y.paths();
    const std::size_t K = ensemble_->noise_dim();
    const auto a = solving_.op.eigenvalues();
    GridProcess Z(window.points(), N * K, M);
    std::vector<double> next(N * M);
    for (std::size_t l = window.begin; l < window.end; ++l) {
        auto y = Y.slice(l + 1 - window.begin);
        std::copy(y.begin(), y.end(), next.begin());
        for (std::size_t n = 0; n < N; ++n)
            simd::scale(std::exp(-a[n] * grid.dt(l)), std::span<double>(next.data() + n * M, M));
        auto z = martingale_z_estimate(*expectation_, l, next, N);
        std::copy(z.begin(), z.end(), Z.slice(l - window.begin).begin());
    }
    return Z;
}

double BsdeSolver::iterate_distance(const GridProcess& a, const GridProcess& b) const {
    const std::size_t N = a.dim();
    const std::size_t M = a.paths();
    State diff(N);
    double worst = 0.0;
    for (std::size_t l = 0; l + 1 < a.times(); ++l) {
        double sum = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) diff[n] = a.at(l, n, m) - b.at(l, n, m);
            const double v = alpha_norm_->norm(diff);
            sum += v * v;
        }
        worst = std::max(worst, std::sqrt(sum / static_cast<double>(M)));
    }
    return worst;
}

LocalSolveResult BsdeSolver::local_solve(Window window, std::span<const double> terminal, double radius,
                                         const GridProcess* f1_frozen, double tol) {
    const TimeGrid& grid = ensemble_->grid();
    LocalSolveResult result;
    WindowRecord& rec = result.record;
    rec.window = window;
    rec.t_begin = grid[window.begin];
    rec.t_end = grid[window.end];
    rec.radius = radius;

    GridProcess U;
    if (solving_.f0.zero()) {
        U = picard_map(window, U, f1_frozen, terminal, radius, false).Y;
        rec.iterations = 1;
        rec.distances.push_back(0.0);
        rec.factors.push_back(0.0);
    } else {
        if (config_.initial_guess == SolverConfig::InitialGuess::propagated) {
            U = picard_map(window, U, nullptr, terminal, radius, false, true).Y;
        } else {
            U = GridProcess(window.points(), solving_.dim(), ensemble_->paths());
            std::copy(terminal.begin(), terminal.end(), U.slice(window.points() - 1).begin());
        }
        int rising = 0;
        for (int k = 1;; ++k) {
            GridProcess next = picard_map(window, U, f1_frozen, terminal, radius, false).Y;
            const double d = iterate_distance(next, U);
            if (!rec.distances.empty()) {
                const double prev = rec.distances.back();
                double scale = 0.0;
                for (double v : next.data()) scale = std::max(scale, std::abs(v));
                const double factor = prev <= 1e-13 * (1.0 + scale) ? 0.0 : d / prev;
                rec.factors.push_back(factor);
                rising = factor > 1.0 ? rising + 1 : 0;
                if (rising >= 2)
                    throw ContractionStalled("Picard factor above 1 twice on [" + fmt(rec.t_begin) +
                                             ", " + fmt(rec.t_end) + "]");
            }
            rec.distances.push_back(d);
            U = std::move(next);
            rec.iterations = k;
            if (d < tol && k >= config_.min_iter) break;
            if (k >= config_.max_iter)
                throw Divergence("Picard iteration on [" + fmt(rec.t_begin) + ", " + fmt(rec.t_end) +
                                 "] did not reach tol = " + fmt(tol) + " in " +
                                 std::to_string(config_.max_iter) + " iterations (last distance " +
                                 fmt(d) + ")");
        }
    }

    State y(U.dim());
    for (std::size_t l = 0; l < U.times(); ++l)
        for (std::size_t m = 0; m < U.paths(); ++m) {
            U.gather(l, m, y);
            rec.max_alpha_norm = std::max(rec.max_alpha_norm, alpha_norm_->norm(y));
        }
    rec.in_ball = rec.max_alpha_norm <= radius * (1.0 + 1e-12);
    result.solution.Z = window_z(window, U);
    result.solution.Y = std::move(U);
    return result;
}

GridProcess BsdeSolver::freeze_driver(const SolutionPair& at) const {
    const std::size_t N = solving_.dim();
    const std::size_t M = ensemble_->paths();
    const std::size_t L = at.grid.steps();
    const std::size_t NK = N * ensemble_->noise_dim();
    GridProcess out(L + 1, N, M);
    if (problem_.f1.zero()) return out;
    State y(N), z(NK), f(N);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t m = 0; m < M; ++m) {
            if (at.Y.empty()) std::fill(y.begin(), y.end(), 0.0);
            else at.Y.gather(l, m, y);
            if (at.Z.empty()) std::fill(z.begin(), z.end(), 0.0);
            else at.Z.gather(l, m, z);
            problem_.f1.eval(at.grid[l], y, z, f);
            out.scatter(l, m, f);
        }
    return out;
}

SolveResult BsdeSolver::global_solve(const GridProcess* f1_frozen) {
    const double tol = config_.tol > 0.0 ? config_.tol : default_tolerance();
    GridProcess frozen;
    if (!f1_frozen && !problem_.f1.zero()) {
        frozen = freeze_driver(SolutionPair{ensemble_->grid(), GridProcess(), GridProcess()});
        f1_frozen = &frozen;
    }
    return global_solve_impl(f1_frozen, tol);
}

SolveResult BsdeSolver::global_solve_impl(const GridProcess* f1_frozen, double tol) {
    const auto start = std::chrono::steady_clock::now();
    const double lambda = config_.auto_shift && problem_.f0.mu > 0.0 ? problem_.f0.mu : 0.0;
    solving_ = lambda > 0.0 ? exponential_shift(problem_, lambda) : problem_;

    GridProcess frozen;
    if (f1_frozen) {
        const std::size_t points = ensemble_->grid().points();
        if (f1_frozen->times() != points) {
            const std::size_t coarse = f1_frozen->times() - 1;
            if (coarse == 0 || (points - 1) % coarse != 0)
                throw Error("frozen driver does not live on the solver grid");
            frozen = refine_frozen(*f1_frozen, (points - 1) / coarse);
        } else {
            frozen = *f1_frozen;
        }
        if (lambda > 0.0)
            for (std::size_t l = 0; l < frozen.times(); ++l)
                simd::scale(std::exp(lambda * ensemble_->grid()[l]), frozen.slice(l));
    }

    SolveResult result;
    for (;;) {
        std::size_t factor = 1;
        bool refine = false;
        result = paste_windows(f1_frozen ? &frozen : nullptr, tol, refine, factor);
        if (!refine) break;
        if (refinement_ * factor > config_.max_refinement)
            throw WindowCollapse("window length below the grid step even after refining the grid by " +
                                 std::to_string(refinement_) + " (needed a further factor " +
                                 std::to_string(factor) + ")");
        rebuild(ensemble_->refine(factor));
        refinement_ *= factor;
        if (f1_frozen) frozen = refine_frozen(frozen, factor);
    }

    SolverReport& rep = result.report;
    const SolutionPair& sol = result.solution;
    const std::size_t L = sol.grid.steps();
    const std::size_t M = ensemble_->paths();
    rep.problem = problem_.name;
    rep.constants = constants_;
    rep.safety = config_.safety;
    rep.tol = tol;
    rep.shift_lambda = lambda;
    rep.refinement_factor = refinement_;
    rep.theta = solving_.theta();
    rep.c1 = apriori_h_bound(solving_.terminal.h_bound, solving_.f0.zero() ? 0.0 : solving_.f0.growth_S,
                             solving_.f1.zero() ? 0.0 : solving_.f1.bound_C, solving_.horizon);
    State y(solving_.dim());
    for (std::size_t l = 0; l <= L; ++l)
        for (std::size_t m = 0; m < M; ++m) {
            sol.Y.gather(l, m, y);
            rep.max_h_norm = std::max(rep.max_h_norm, h_norm(y));
        }
    rep.blowup_margins.assign(L, 0.0);
    rep.min_blowup_margin = kInf;
    for (std::size_t l = 0; l < L; ++l) {
        rep.blowup_margins[l] =
            blowup_bound(rep.c2, rep.theta, solving_.alpha, solving_.horizon, sol.grid[l]) -
            max_theta_norm(sol.Y, l);
        rep.min_blowup_margin = std::min(rep.min_blowup_margin, rep.blowup_margins[l]);
    }
    rep.residual = residual(sol, f1_frozen ? &frozen : nullptr);
    rep.residual_within_tol = rep.residual < tol;
    rep.regression_flagged_steps = expectation_->flagged_steps();
    rep.simd_isa = std::string(simd::isa_name(simd::kernels().isa));

    result.solution = unshift_solution(std::move(result.solution), lambda);
    solving_ = problem_;
    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SolveResult BsdeSolver::paste_windows(const GridProcess* f1_frozen, double tol, bool& needs_refinement,
                                      std::size_t& refinement) {
    const TimeGrid& grid = ensemble_->grid();
    const std::size_t L = grid.steps();
    const std::size_t N = solving_.dim();
    const std::size_t M = ensemble_->paths();
    const std::size_t K = ensemble_->noise_dim();
    const double T = solving_.horizon;
    const double alpha = solving_.alpha;
    const double theta = solving_.theta();

    SolveResult result;
    SolverReport& rep = result.report;
    SolutionPair& sol = result.solution;
    sol.grid = grid;
    sol.Y = GridProcess(L + 1, N, M);
    sol.Z = GridProcess(L, N * K, M);

    auto begin_for = [&](std::size_t e, double delta) {
        std::size_t b = e;
        while (b > 0 && grid[e] - grid[b - 1] <= delta * (1.0 + 1e-12)) --b;
        return b;
    };
    auto request_refinement = [&](std::size_t e, double delta) {
        needs_refinement = true;
        refinement = static_cast<std::size_t>(std::ceil(grid.dt(e - 1) / delta));
        refinement = std::max<std::size_t>(refinement, 2);
        return result;
    };

    std::vector<double> term = terminal_values();
    rep.first_selection =
        select_local_radius_and_delta(solving_, constants_, solving_.terminal.alpha_bound, config_.safety, T);
    rep.radius_first = rep.first_selection.radius;
    double delta = config_.window_override ? std::min(*config_.window_override, T) : rep.first_selection.delta;
    double radius = rep.radius_first;
    double delta_later = delta;

    std::size_t e = L;
    bool first = true;
    while (e > 0) {
        std::size_t b = begin_for(e, delta);
        if (b == e) return request_refinement(e, delta);

        double window_delta = delta;
        if (!first) {
            // pasted terminal larger than the later-window bound: widen the ball for this window
            State v(N);
            double observed = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                for (std::size_t n = 0; n < N; ++n) v[n] = term[n * M + m];
                observed = std::max(observed, alpha_norm_->norm(v));
            }
            radius = rep.radius_later;
            if (2.0 * constants_.m_alpha * observed > radius) {
                const auto sel = select_local_radius_and_delta(solving_, constants_, observed, config_.safety, T);
                radius = sel.radius;
                if (!config_.window_override) {
                    window_delta = std::min(delta, sel.delta);
                    b = begin_for(e, window_delta);
                    if (b == e) return request_refinement(e, window_delta);
                }
            }
        }

        LocalSolveResult local;
        int halvings = 0;
        for (;;) {
            try {
                local = local_solve(Window{b, e}, term, radius, f1_frozen, tol);
                break;
            } catch (const ContractionStalled& err) {
                const std::size_t nb = begin_for(e, 0.5 * (grid[e] - grid[b]));
                if (nb == e) throw Divergence(std::string(err.what()) + "; window cannot be halved further");
                b = nb;
            } catch (const RadiusExceeded& err) {
                const std::size_t nb = begin_for(e, 0.5 * (grid[e] - grid[b]));
                if (nb == e) throw;
                b = nb;
            }
            ++halvings;
        }
        local.record.halvings = halvings;
        local.record.delta_formula = window_delta;

        for (std::size_t l = b; l <= e; ++l) {
            auto src = local.solution.Y.slice(l - b);
            std::copy(src.begin(), src.end(), sol.Y.slice(l).begin());
        }
        for (std::size_t l = b; l < e; ++l) {
            auto src = local.solution.Z.slice(l - b);
            std::copy(src.begin(), src.end(), sol.Z.slice(l).begin());
        }
        rep.delta_schedule.push_back(grid[e] - grid[b]);
        rep.windows.push_back(std::move(local.record));

        if (first) {
            const double delta1 = T - grid[b];
            double c2 = 0.0;
            for (std::size_t l = b; l < L; ++l)
                c2 = std::max(c2, std::pow(T - grid[l], theta - alpha) * max_theta_norm(sol.Y, l));
            rep.c2 = c2;
            const double bound2 = c2 * std::pow(delta1, alpha - theta);
            rep.later_selection = select_local_radius_and_delta(solving_, constants_, bound2, config_.safety, T);
            rep.radius_later = rep.later_selection.radius;
            delta_later = config_.window_override ? std::min(*config_.window_override, T)
                                                  : rep.later_selection.delta;
            delta = delta_later;
            first = false;
        }
        auto src = sol.Y.slice(b);
        term.assign(src.begin(), src.end());
        e = b;
    }
    return result;
}

double BsdeSolver::residual(const SolutionPair& solution, const GridProcess* f1_frozen) const {
    const BsdeProblem& p = solving_;
    const TimeGrid& grid = solution.grid;
    const std::size_t L = grid.steps();
    const std::size_t N = p.dim();
    const std::size_t M = solution.Y.paths();
    const std::size_t K = solution.Z.dim() / std::max<std::size_t>(N, 1);
    if (!(grid == ensemble_->grid())) throw Error("residual: solution grid differs from the ensemble grid");
    const auto a = p.op.eigenvalues();

    std::vector<double> xi = terminal_values();
    std::vector<double> prop = xi;             // e^{(T-t)A} xi
    std::vector<double> integral(N * M, 0.0);  // sum e^{(s-t)A} (Z dW - f ds)
    State y(N), z(N * K), f(N), g(N);

    double total = 0.0;
    {
        auto yl = solution.Y.slice(L);
        for (std::size_t i = 0; i < N * M; ++i) total += (yl[i] - xi[i]) * (yl[i] - xi[i]);
    }
    for (std::size_t l = L; l-- > 0;) {
        const double h = grid.dt(l);
        const double t = grid[l];
        for (std::size_t n = 0; n < N; ++n) {
            const double decay = std::exp(-a[n] * h);
            simd::scale(decay, std::span<double>(prop.data() + n * M, M));
            simd::scale(decay, std::span<double>(integral.data() + n * M, M));
        }
        for (std::size_t m = 0; m < M; ++m) {
            solution.Y.gather(l, m, y);
            solution.Z.gather(l, m, z);
            std::fill(f.begin(), f.end(), 0.0);
            if (!p.f0.zero()) p.f0.eval(t, y, f);
            if (f1_frozen) {
                for (std::size_t n = 0; n < N; ++n) f[n] += f1_frozen->at(l, n, m);
            } else if (!p.f1.zero()) {
                p.f1.eval(t, y, z, g);
                for (std::size_t n = 0; n < N; ++n) f[n] += g[n];
            }
            for (std::size_t n = 0; n < N; ++n) {
                double zdw = 0.0;
                for (std::size_t k = 0; k < K; ++k) zdw += z[n * K + k] * ensemble_->increment(m, l, k);
                integral[n * M + m] += zdw - exp_integral_weight(a[n], h) * f[n];
                const double defect = y[n] + integral[n * M + m] - prop[n * M + m];
                total += defect * defect;
            }
        }
    }
    return std::sqrt(total / static_cast<double>((L + 1) * M));
}

double BsdeSolver::weighted_distance(const SolutionPair& a, const SolutionPair& b, double beta) const {
    return weighted_squared_distance(a, b, beta);
}

SolveResult BsdeSolver::general_solve() {
    const double tol_outer = config_.tol_outer > 0.0 ? config_.tol_outer : default_tolerance();
    const double tol_inner =
        config_.tol_inner > 0.0 ? config_.tol_inner : std::max(tol_outer / 100.0, 1e-10);
    const double K = problem_.f1.zero() ? 0.0 : problem_.f1.lipschitz_K;
    const double beta = 4.0 * K * K + 1.0;

    if (problem_.f1.zero()) {
        auto res = global_solve_impl(nullptr, tol_inner);
        res.report.beta_weight = beta;
        res.report.outer_iterations = 1;
        return res;
    }
    if (K == 0.0) {
        GridProcess frozen = freeze_driver(SolutionPair{ensemble_->grid(), GridProcess(), GridProcess()});
        auto res = global_solve_impl(&frozen, tol_inner);
        res.report.beta_weight = beta;
        res.report.outer_iterations = 1;
        return res;
    }

    const std::size_t N = problem_.dim();
    const std::size_t M = ensemble_->paths();
    const std::size_t NK = N * ensemble_->noise_dim();
    SolutionPair prev{ensemble_->grid(), GridProcess(ensemble_->grid().points(), N, M),
                      GridProcess(ensemble_->grid().steps(), NK, M)};
    std::vector<double> distances, factors;
    int rising = 0;
    for (int it = 1;; ++it) {
        GridProcess frozen = freeze_driver(prev);
        SolveResult res = global_solve_impl(&frozen, tol_inner);
        if (!(res.solution.grid == prev.grid)) {
            // the inner solve refined the grid; restart the distance record on the new grid
            distances.clear();
            factors.clear();
            prev = SolutionPair{res.solution.grid, GridProcess(res.solution.grid.points(), N, M),
                                GridProcess(res.solution.grid.steps(), NK, M)};
        }
        const double d2 = weighted_distance(res.solution, prev, beta);
        if (!distances.empty()) {
            const double last = distances.back();
            const double factor = last <= 1e-26 ? 0.0 : d2 / last;
            factors.push_back(factor);
            rising = factor >= 1.0 ? rising + 1 : 0;
        }
        distances.push_back(d2);
        prev = std::move(res.solution);

        const bool done = std::sqrt(d2) < tol_outer;
        if (done || rising >= 2 || it >= config_.max_outer) {
            res.solution = std::move(prev);
            res.report.beta_weight = beta;
            res.report.outer_distances = distances;
            res.report.outer_factors = factors;
            res.report.outer_iterations = it;
            solving_ = problem_;
            res.report.residual = residual(res.solution, nullptr);
            if (done) return res;
            throw Divergence(rising >= 2 ? "outer fixed point: weighted factor >= 1 twice"
                                         : "outer fixed point did not converge in " +
                                               std::to_string(config_.max_outer) + " iterations");
        }
    }
}

}  // namespace bsde
