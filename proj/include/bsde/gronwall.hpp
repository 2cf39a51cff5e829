#pragma once

// Generalized Gronwall lemma: if
//
//   U_t <= a (T-t)^{-alpha} + b int_t^T (s-t)^{beta-1} E[U_s | F_t] ds,
//
// then U_t <= a M (T-t)^{-alpha}. M has a closed form for beta = 1 and is
// computed by monotone iteration of the recursion otherwise.

#include "bsde/process.hpp"

#include <span>
#include <string>
#include <vector>

namespace bsde {

struct GronwallInput {
    double a = 0.0;
    double b = 0.0;
    double alpha = 0.0;
    double beta = 1.0;
    double horizon = 1.0;

    void validate() const;  // throws ValidationError
};

struct GronwallOptions {
    std::size_t grid_points = 401;
    int max_iterations = 400;
    double rel_tol = 1e-13;
    bool keep_history = false;
};

struct GronwallRecursion {
    std::vector<double> t;          // uniform grid on [0,T]
    std::vector<double> weighted;   // w(t) = (T-t)^alpha V(t), w(T) = a
    std::vector<std::vector<double>> history;  // w^k per iteration when requested
    int iterations = 0;
    double constant_M = 1.0;  // sup_t w(t) / a

    /// V(t) from the final iterate (exact integral at t, not interpolated).
    double value(const GronwallInput& input, double t) const;
};

/// Runs V^{k+1}(t) = a (T-t)^{-alpha} + b int_t^T (s-t)^{beta-1} V^k(s) ds from
/// V^0 = a (T-t)^{-alpha} until stable. Throws Divergence when the iteration
/// cap is hit first.
GronwallRecursion gronwall_recursion(const GronwallInput& input, GronwallOptions options = {});

/// M = 1 + b e^{bT} T / (1 - alpha) for beta = 1; the iterative constant otherwise.
double gronwall_constant(const GronwallInput& input);

/// Recursion limit at t < T.
double gronwall_bound_iterative(const GronwallInput& input, double t, int iterations = 400);

struct GronwallRow {
    double t = 0.0;
    double value = 0.0;  // recursion limit
    double bound = 0.0;  // a M (T-t)^{-alpha}
};

/// Table on `points` times in [0, T) (stopping 1e-3 T short of T when alpha > 0).
std::vector<GronwallRow> gronwall_table(const GronwallInput& input, std::size_t points = 21);

struct GronwallVerdict {
    bool hypothesis_holds = false;
    bool holds = false;
    double margin = 0.0;  // min over grid and paths of a M (T-t)^{-alpha} - U_t
    std::string verdict;  // "holds", "fails" or "hypothesis violated"
};

/// Checks the lemma on a scalar grid process (dim 1). The conditional
/// expectation in the hypothesis is dominated by the ensemble max at each time.
GronwallVerdict verify_on_process(const GridProcess& U, std::span<const double> times,
                                  const GronwallInput& input);

}  // namespace bsde
