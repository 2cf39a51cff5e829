#pragma once

// Reaction-diffusion on (0, pi) in the sine basis, a finite lattice spin
// system, linear oracle problems, and sampling checks of the hypothesis
// constants each of them declares.

#include "bsde/bsde_solver.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace bsde {

struct ReactionDiffusionSpec {
    std::size_t modes = 6;               // Galerkin dimension N
    std::size_t collocation_factor = 4;  // Q = factor * N collocation points
    std::vector<double> r_coefficients{0.0, 1.0};  // r(x) = sum_i c_i x^{2i+1}, c_i >= 0
    double alpha = 0.25;
    double driver_K1 = 0.5;  // g(y, x) = K1 tanh(y) sin(x)
    double terminal_scale = 0.5;  // xi_n = scale / n^2 (1 + rho tanh(W_T^n))
    double terminal_rho = 0.5;
    bool deterministic_terminal = false;
    double horizon = 1.0;
    double fit_margin = 1.2;
    std::uint64_t fit_seed = 11;
};

struct SpinSpec {
    std::size_t half_width = 2;      // sites -n..n
    std::vector<double> coefficients;  // a_j; empty means all ones
    int k = 1;                       // V(x) = x^{2k+1}
    double terminal_offset = 0.05;   // xi_j = offset + amplitude tanh(W_T^j)
    double terminal_amplitude = 0.1;
    double horizon = 1.0;
};

/// Sine-basis collocation on x_j = j pi / (Q + 1), j = 1..Q.
class SineCollocation {
public:
    SineCollocation(std::size_t modes, std::size_t points);
    std::size_t modes() const noexcept { return modes_; }
    std::size_t points() const noexcept { return points_; }
    double node(std::size_t j) const { return nodes_[j]; }
    /// u(x_j) = sum_m y_m sqrt(2/pi) sin(m x_j)
    void synthesize(std::span<const double> y, std::span<double> u) const;
    /// y_m = (pi / (Q+1)) sum_j u_j sqrt(2/pi) sin(m x_j)
    void analyze(std::span<const double> u, std::span<double> y) const;

private:
    std::size_t modes_, points_;
    std::vector<double> nodes_;
    std::vector<double> basis_;  // [m][j]
};

BsdeProblem build_reaction_diffusion(const ReactionDiffusionSpec& spec);
BsdeProblem build_spin_system(const SpinSpec& spec);

/// f0 of the spin lattice, (f0 y)_j = V(y_{j+1} - y_j) + V(y_{j-1} - y_j), zero padded.
void spin_drift(int k, std::span<const double> y, std::span<double> out);

enum class LinearOracle { martingale, quadratic, heat };
/// A = 0, f = 0, xi = W_T^1 e_1 (martingale) or (W_T^1)^2 e_1 (quadratic); heat uses
/// the Dirichlet Laplacian with N modes and a deterministic terminal profile.
BsdeProblem build_linear_oracle(LinearOracle kind, double horizon = 1.0, std::size_t modes = 4);

/// f0(y) = +y, the anti-dissipative control case.
DriftFn anti_dissipative_drift();

using PairSampler = std::function<std::pair<State, State>(std::mt19937_64&)>;
using StateSampler = std::function<State(std::mt19937_64&)>;

/// Random vector with components uniform in [-scale, scale] / (n+1)^decay.
State random_state(std::mt19937_64& rng, std::size_t dim, double scale, double decay = 0.0);

/// Pairs that agree on the first and last component.
PairSampler boundary_matched_pairs(std::size_t dim, double scale);
PairSampler independent_pairs(std::size_t dim, double scale, double decay = 0.0);

struct DissipativityReport {
    double max_inner = 0.0;  // max <f0(y)-f0(y'), y-y'>
    std::size_t trials = 0;
    bool dissipative = true;  // max_inner <= tolerance
};

DissipativityReport check_dissipativity(const DriftFn& f0, const PairSampler& sampler, std::size_t trials,
                                        std::uint64_t seed = 3, double tolerance = 1e-12);

struct GrowthLipschitzReport {
    double worst_growth_ratio = 0.0;     // |f0(y)| / (S (1 + ||y||^gamma))
    double worst_lipschitz_ratio = 0.0;  // |f0(y)-f0(y')| / (L_R ||y-y'||), R = ball radius
    std::size_t trials = 0;
    bool passes = true;
};

/// Samples pairs inside each ball of radius R in `radii` (norm of H_alpha).
GrowthLipschitzReport check_growth_and_lipschitz(const Drift& f0, const DiagonalOperator& op, double alpha,
                                                 const std::vector<double>& radii, std::size_t trials,
                                                 std::uint64_t seed = 5, double decay = 0.0);

struct ValidationItem {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationItem> items;
    bool all_pass() const;
};

struct ValidationOptions {
    std::size_t trials = 2000;
    std::size_t terminal_paths = 256;
    std::vector<double> radii{0.5, 1.0, 2.0};
    std::uint64_t seed = 17;
};

/// Structural hypotheses plus sampled dissipativity (after the mu-shift),
/// growth, Lipschitz, driver bounds and the declared terminal bound. Marks the
/// problem validated when every item passes.
ValidationReport validate_problem(BsdeProblem& problem, const ValidationOptions& options = {});

}  // namespace bsde
