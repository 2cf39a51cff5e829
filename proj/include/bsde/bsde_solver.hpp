#pragma once

// Mild solutions of
//
//   Y_t - int_t^T e^{(s-t)A} [f0(s,Y_s) + f1(s,Y_s,Z_s)] ds + int_t^T e^{(s-t)A} Z_s dW_s = e^{(T-t)A} xi
//
// on a Monte Carlo ensemble: Picard iteration of the frozen-drift map on short
// windows, right-to-left pasting of windows over [0,T], and an outer fixed
// point in the e^{beta t}-weighted norm for drivers f1 that depend on (Y,Z).

#include "bsde/process.hpp"
#include "bsde/spectral_operator.hpp"
#include "bsde/stochastic_driver.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bsde {

using DriftFn = std::function<void(double t, std::span<const double> y, std::span<double> out)>;
using DriverFn = std::function<void(double t, std::span<const double> y, std::span<const double> z,
                                    std::span<double> out)>;
using TerminalFn =
    std::function<void(const WienerEnsemble& ensemble, std::size_t path, std::span<double> out)>;
using LipschitzProfile = std::function<double(double radius)>;

/// f0(t, y), defined on H_alpha balls.
struct Drift {
    DriftFn eval;              // empty means f0 = 0
    double growth_S = 0.0;     // |f0(t,y)|_H <= S (1 + ||y||_alpha^gamma)
    double gamma = 1.0;
    LipschitzProfile lipschitz;  // R -> L_R on the H_alpha ball of radius R
    double mu = 0.0;           // <f0(y1)-f0(y2), y1-y2> <= mu |y1-y2|^2

    bool zero() const { return !static_cast<bool>(eval); }
    double lipschitz_at(double radius) const { return lipschitz ? lipschitz(radius) : 0.0; }
};

/// f1(t, y, z): Lipschitz with constant K and bounded by C.
struct Driver {
    DriverFn eval;  // empty means f1 = 0
    double lipschitz_K = 0.0;
    double bound_C = 0.0;

    bool zero() const { return !static_cast<bool>(eval); }
};

/// xi as a function of the whole Wiener path.
struct Terminal {
    TerminalFn eval;
    double h_bound = 0.0;      // ess sup |xi|_H
    double alpha_bound = 0.0;  // ess sup ||xi||_{H_alpha}
    bool deterministic = false;
};

struct BsdeProblem {
    std::string name;
    DiagonalOperator op{std::vector<double>{0.0}};
    double horizon = 1.0;
    double alpha = 0.0;
    std::size_t noise_dim = 1;  // Wiener coordinates the terminal and Z use
    Terminal terminal;
    Drift f0;
    Driver f1;
    bool validated = false;

    std::size_t dim() const { return op.dimension(); }
    /// theta = alpha * gamma (0 when alpha = 0).
    double theta() const { return alpha > 0.0 ? alpha * f0.gamma : 0.0; }
    /// Throws ValidationError naming the violated hypothesis.
    void check_hypotheses() const;
};

/// Problem solved by (e^{lambda t} Y, e^{lambda t} Z): terminal e^{lambda T} xi,
/// f0'(t,y) = e^{lambda t} f0(t, e^{-lambda t} y) - lambda y and
/// f1'(t,y,z) = e^{lambda t} f1(t, e^{-lambda t} y, e^{-lambda t} z).
BsdeProblem exponential_shift(const BsdeProblem& problem, double lambda);

struct SolutionPair {
    TimeGrid grid;
    GridProcess Y;  // (L+1) x N x M
    GridProcess Z;  // L x (N*K) x M, Z at t_l for l < L
};

/// Inverse of exponential_shift on a solution: (e^{-lambda t} Y, e^{-lambda t} Z).
SolutionPair unshift_solution(SolutionPair solution, double lambda);

/// C_1 = sqrt((|xi|^2 + (S^2 + C^2) T) (1 + 2 T e^{2T})).
double apriori_h_bound(double terminal_h_bound, double growth_S, double bound_C, double horizon);

/// C_2 (T - t)^{-(theta - alpha)} for t < T.
double blowup_bound(double c2, double theta, double alpha, double horizon, double t);

struct RadiusDelta {
    double radius = 0.0;
    double delta = 0.0;   // min(delta0, delta1) / safety, capped at the window
    double delta0 = 0.0;  // contraction condition (2 G L_R)^{-1/(1-alpha)}
    double delta1 = 0.0;  // self-map condition on the H_alpha ball
};

/// R = 2 M_alpha terminal_bound and the largest admissible window length.
RadiusDelta select_local_radius_and_delta(const BsdeProblem& problem,
                                          const OperatorConstants& constants,
                                          double terminal_bound, double safety, double max_window);

/// Window [t_begin, t_end] as grid indices.
struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t points() const { return end - begin + 1; }
};

struct WindowSolution {
    GridProcess Y;  // window-local times
    GridProcess Z;  // window-local times, last slice unused
};

struct WindowRecord {
    Window window;
    double t_begin = 0.0;
    double t_end = 0.0;
    double radius = 0.0;
    double delta_formula = 0.0;
    int iterations = 0;
    int halvings = 0;
    std::vector<double> distances;  // d_k between successive iterates
    std::vector<double> factors;    // d_{k+1} / d_k, k >= 1
    double max_alpha_norm = 0.0;
    bool in_ball = true;  // sup_t ||Y_t||_alpha <= R on every path
};

struct SolverReport {
    std::string problem;
    OperatorConstants constants;
    double safety = 1.2;
    double tol = 0.0;
    double shift_lambda = 0.0;
    std::size_t refinement_factor = 1;

    double radius_first = 0.0;   // R
    double radius_later = 0.0;   // R_2
    RadiusDelta first_selection;
    RadiusDelta later_selection;
    std::vector<double> delta_schedule;  // effective window lengths, right to left
    std::vector<WindowRecord> windows;

    double c1 = 0.0;
    double max_h_norm = 0.0;
    double c2 = 0.0;
    double theta = 0.0;
    // per grid time before the first window: blowup_bound - ensemble max ||Y_t||_theta
    // (the ensemble max stands in for the L^infinity(Omega) norm)
    std::vector<double> blowup_margins;
    double min_blowup_margin = 0.0;

    double beta_weight = 1.0;
    std::vector<double> outer_distances;  // squared weighted distances
    std::vector<double> outer_factors;    // ratios of successive squared distances
    int outer_iterations = 0;

    double residual = 0.0;
    bool residual_within_tol = false;
    std::size_t regression_flagged_steps = 0;
    double runtime_seconds = 0.0;
    std::string simd_isa;
};

struct SolverConfig {
    double tol = 0.0;  // 0: three Monte Carlo standard errors of the terminal estimate
    int max_iter = 50;
    int min_iter = 2;  // Picard updates per window, so every window records a factor
    double safety = 1.2;
    std::optional<double> window_override;
    bool auto_shift = true;
    bool allow_unvalidated = false;
    enum class InitialGuess { propagated, zero };
    InitialGuess initial_guess = InitialGuess::propagated;
    int max_outer = 20;
    double tol_outer = 0.0;  // 0: same default as tol
    double tol_inner = 0.0;  // 0: tol_outer / 100
    std::size_t max_refinement = 64;
    std::uint64_t constants_seed = 7;
};

struct LocalSolveResult {
    WindowSolution solution;
    WindowRecord record;
};

struct SolveResult {
    SolutionPair solution;
    SolverReport report;
};

class BsdeSolver {
public:
    BsdeSolver(BsdeProblem problem, const WienerEnsemble& ensemble, RegressionBasis basis,
               SolverConfig config = {});
    ~BsdeSolver();
    BsdeSolver(const BsdeSolver&) = delete;
    BsdeSolver& operator=(const BsdeSolver&) = delete;

    const BsdeProblem& problem() const noexcept { return problem_; }
    const WienerEnsemble& ensemble() const noexcept { return *ensemble_; }
    const OperatorConstants& constants() const noexcept { return constants_; }
    const SolverConfig& config() const noexcept { return config_; }
    ConditionalExpectation& expectation() { return *expectation_; }

    /// xi on every path, N columns of length M.
    std::vector<double> terminal_values() const;
    double default_tolerance() const;

    /// One application of the frozen-drift map on `window`. U and the result use
    /// window-local time indices; f1_frozen (if any) uses global ones. Throws
    /// RadiusExceeded when f0 would be evaluated outside the ball of radius `radius`.
    WindowSolution picard_map(Window window, const GridProcess& U, const GridProcess* f1_frozen,
                              std::span<const double> terminal, double radius, bool with_z = true,
                              bool drop_f0 = false);

    /// Picard iteration to a fixed point on one window; Z is recovered once at the end.
    LocalSolveResult local_solve(Window window, std::span<const double> terminal, double radius,
                                 const GridProcess* f1_frozen, double tol);

    /// Simplified equation (f1 frozen as a grid process, or f1(t,0,0) when null)
    /// on [0,T] by window pasting.
    SolveResult global_solve(const GridProcess* f1_frozen = nullptr);

    /// Full equation with f1(t,y,z) by the outer weighted fixed point.
    SolveResult general_solve();

    /// Ensemble-L2 defect of the mild equation on the solution's grid.
    double residual(const SolutionPair& solution, const GridProcess* f1_frozen = nullptr) const;

    /// ensemble max ||Y_t||_{D_A(theta,inf)} at grid index l
    double max_theta_norm(const GridProcess& Y, std::size_t l) const;

private:
    SolveResult global_solve_impl(const GridProcess* f1_frozen, double tol);
    SolveResult paste_windows(const GridProcess* f1_frozen, double tol, bool& needs_refinement,
                              std::size_t& refinement);
    GridProcess freeze_driver(const SolutionPair& at) const;
    GridProcess window_z(Window window, const GridProcess& Y);
    double iterate_distance(const GridProcess& a, const GridProcess& b) const;
    void rebuild(const WienerEnsemble& ensemble);
    double weighted_distance(const SolutionPair& a, const SolutionPair& b, double beta) const;

    BsdeProblem problem_;
    BsdeProblem solving_;  // problem_ or its shifted form during a solve
    RegressionBasis basis_;
    SolverConfig config_;
    OperatorConstants constants_;
    std::unique_ptr<WienerEnsemble> ensemble_;
    std::unique_ptr<ConditionalExpectation> expectation_;
    std::unique_ptr<InterpolationNormTable> alpha_norm_;
    std::unique_ptr<InterpolationNormTable> theta_norm_;
    std::size_t refinement_ = 1;
};

/// Ensemble-L2 weighted distance |||(Y,Z)|||_beta^2 between two solutions on the same grid.
double weighted_squared_distance(const SolutionPair& a, const SolutionPair& b, double beta);

}  // namespace bsde
