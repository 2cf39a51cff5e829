#pragma once

// Truncated cylindrical Wiener process and least-squares Monte Carlo estimates
// of conditional expectations given F_t.

#include "bsde/process.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bsde {

class TimeGrid {
public:
    TimeGrid() = default;
    /// Strictly increasing times starting at 0.
    explicit TimeGrid(std::vector<double> times);
    static TimeGrid uniform(double horizon, std::size_t steps);

    std::size_t steps() const noexcept { return times_.empty() ? 0 : times_.size() - 1; }
    std::size_t points() const noexcept { return times_.size(); }
    double horizon() const { return times_.back(); }
    double operator[](std::size_t l) const { return times_[l]; }
    double dt(std::size_t l) const { return times_[l + 1] - times_[l]; }
    std::span<const double> times() const noexcept { return times_; }

    /// Each step split into `factor` equal sub-steps.
    TimeGrid refined(std::size_t factor) const;

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> times_;
};

/// Seed of the independent stream that drives path `path` of an ensemble with
/// root seed `seed` (splitmix64 of the pair). Paths never share draws, so an
/// ensemble with more paths extends a smaller one without redrawing it.
std::uint64_t path_stream_seed(std::uint64_t seed, std::uint64_t path);

class WienerEnsemble {
public:
    /// `increments` in path-major order: [path][step][coordinate].
    WienerEnsemble(TimeGrid grid, std::size_t noise_dim, std::size_t paths, std::uint64_t seed,
                   std::span<const double> increments);

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t paths() const noexcept { return paths_; }
    std::size_t noise_dim() const noexcept { return noise_dim_; }
    std::size_t steps() const noexcept { return grid_.steps(); }
    std::uint64_t seed() const noexcept { return seed_; }

    /// Delta W^k over [t_l, t_{l+1}] for all paths.
    std::span<const double> increment_column(std::size_t l, std::size_t k) const {
        return {increments_.data() + (l * noise_dim_ + k) * paths_, paths_};
    }
    /// W^k_{t_l} for all paths (W_0 = 0).
    std::span<const double> position_column(std::size_t l, std::size_t k) const {
        return {positions_.data() + (l * noise_dim_ + k) * paths_, paths_};
    }
    double increment(std::size_t m, std::size_t l, std::size_t k) const {
        return increments_[(l * noise_dim_ + k) * paths_ + m];
    }
    double position(std::size_t l, std::size_t m, std::size_t k) const {
        return positions_[(l * noise_dim_ + k) * paths_ + m];
    }
    double terminal_position(std::size_t m, std::size_t k) const { return position(steps(), m, k); }

    std::vector<double> path_major_increments() const;

    /// Same paths on a grid with every step split in `factor` sub-steps; the
    /// extra points are drawn from the Brownian bridge, so the coarse
    /// positions are preserved exactly.
    WienerEnsemble refine(std::size_t factor) const;

    bool operator==(const WienerEnsemble& other) const;

private:
    TimeGrid grid_;
    std::size_t noise_dim_;
    std::size_t paths_;
    std::uint64_t seed_;
    std::vector<double> increments_;  // [l][k][m]
    std::vector<double> positions_;   // [l][k][m], l = 0..L
};

/// Reproducible: the same (grid, K, M, seed) always gives bit-identical arrays.
WienerEnsemble sample_ensemble(const TimeGrid& grid, std::size_t noise_dim, std::size_t paths,
                               std::uint64_t seed);

/// Polynomial features of the first `coordinates` components of W_{t_l}.
struct RegressionBasis {
    int degree = 2;
    std::size_t coordinates = 1;
    double ridge = 1e-8;  // relative to the trace of the (column-normalized) Gram matrix

    std::size_t size() const;
    /// size() columns of length M, column-major; depends on increments before l only.
    void evaluate(const WienerEnsemble& ensemble, std::size_t l, std::vector<double>& columns) const;
    /// Exponent tuples of the monomials, in feature order.
    std::vector<std::vector<int>> monomials() const;
};

struct ProjectionResult {
    std::vector<double> fitted;    // d columns of length M
    Eigen::MatrixXd coefficients;  // B x d
    bool rank_deficient = false;
};

/// E[ . | F_{t_l}] by least squares onto the basis span at t_l, regularized by one step of iterated Tikhonov.
/// Factorizations are cached per time step.
class ConditionalExpectation {
public:
    ConditionalExpectation(const WienerEnsemble& ensemble, RegressionBasis basis);

    const RegressionBasis& basis() const noexcept { return basis_; }
    const WienerEnsemble& ensemble() const noexcept { return *ensemble_; }

    /// targets: d columns of length M (column-major).
    ProjectionResult project(std::size_t l, std::span<const double> targets, std::size_t d);
    /// Overwrites the d columns with their fitted values.
    void project_in_place(std::size_t l, std::span<double> targets, std::size_t d);

    bool rank_deficient(std::size_t l);
    /// Number of time steps whose design was rank-deficient and solved by pseudo-inverse.
    std::size_t flagged_steps() const;

private:
    struct Factor {
        Eigen::MatrixXd solve;  // B x B map from scaled moments to scaled coefficients
        Eigen::VectorXd inv_scale;
        bool rank_deficient = false;
    };
    const Factor& factor(std::size_t l);
    const std::vector<double>& features(std::size_t l);
    Eigen::MatrixXd coefficients_for(std::size_t l, std::span<const double> targets, std::size_t d);

    const WienerEnsemble* ensemble_;
    RegressionBasis basis_;
    std::vector<std::optional<Factor>> factors_;
    std::vector<double> columns_;
    std::size_t columns_step_ = static_cast<std::size_t>(-1);
};

/// Z(t_l) as the projection of (next - E_l[next]) * Delta W_l / Delta t_l onto the
/// basis at t_l. `next_value` has N columns of length M; the result has N*K
/// columns ordered (n, k) -> n*K + k.
std::vector<double> martingale_z_estimate(ConditionalExpectation& expectation, std::size_t l,
                                          std::span<const double> next_value, std::size_t dim);

}  // namespace bsde
