#include "bsde/stochastic_driver.hpp"

#include "bsde/kernels.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace bsde {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t bridge_tag = 0xB81D6E5ULL;

void accumulate_positions(std::size_t steps, std::size_t noise_dim, std::size_t paths,
                          const std::vector<double>& increments, std::vector<double>& positions) {
    positions.assign((steps + 1) * noise_dim * paths, 0.0);
    for (std::size_t l = 0; l < steps; ++l)
        for (std::size_t k = 0; k < noise_dim; ++k) {
            const double* prev = positions.data() + (l * noise_dim + k) * paths;
            const double* inc = increments.data() + (l * noise_dim + k) * paths;
            double* next = positions.data() + ((l + 1) * noise_dim + k) * paths;
            for (std::size_t m = 0; m < paths; ++m) next[m] = prev[m] + inc[m];
        }
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
    if (times_.size() < 2) throw std::invalid_argument("time grid needs at least one step");
    if (times_.front() != 0.0) throw std::invalid_argument("time grid must start at 0");
    for (std::size_t l = 0; l + 1 < times_.size(); ++l)
        if (!(times_[l + 1] > times_[l]))
            throw std::invalid_argument("time grid must be strictly increasing");
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps) {
    if (!(horizon > 0.0) || steps == 0)
        throw std::invalid_argument("uniform grid needs T > 0 and L >= 1");
    std::vector<double> t(steps + 1);
    for (std::size_t l = 0; l <= steps; ++l)
        t[l] = horizon * static_cast<double>(l) / static_cast<double>(steps);
    t.back() = horizon;
    return TimeGrid(std::move(t));
}

TimeGrid TimeGrid::refined(std::size_t factor) const {
    if (factor == 0) throw std::invalid_argument("refinement factor must be positive");
    std::vector<double> t;
    t.reserve(steps() * factor + 1);
    for (std::size_t l = 0; l < steps(); ++l)
        for (std::size_t j = 0; j < factor; ++j)
            t.push_back(times_[l] + dt(l) * static_cast<double>(j) / static_cast<double>(factor));
    t.push_back(horizon());
    return TimeGrid(std::move(t));
}

std::uint64_t path_stream_seed(std::uint64_t seed, std::uint64_t path) {
    return splitmix64(splitmix64(seed) ^ (path + 1) * 0xD1B54A32D192ED03ULL);
}

WienerEnsemble::WienerEnsemble(TimeGrid grid, std::size_t noise_dim, std::size_t paths,
                               std::uint64_t seed, std::span<const double> increments)
    : grid_(std::move(grid)), noise_dim_(noise_dim), paths_(paths), seed_(seed) {
    if (noise_dim_ == 0 || paths_ == 0)
        throw std::invalid_argument("ensemble needs K >= 1 and M >= 1");
    const std::size_t steps = grid_.steps();
    if (increments.size() != paths_ * steps * noise_dim_)
        throw std::invalid_argument("increment array has the wrong size");
    increments_.resize(increments.size());
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t l = 0; l < steps; ++l)
            for (std::size_t k = 0; k < noise_dim_; ++k)
                increments_[(l * noise_dim_ + k) * paths_ + m] =
                    increments[(m * steps + l) * noise_dim_ + k];
    accumulate_positions(steps, noise_dim_, paths_, increments_, positions_);
}

std::vector<double> WienerEnsemble::path_major_increments() const {
    const std::size_t steps = grid_.steps();
    std::vector<double> out(increments_.size());
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t l = 0; l < steps; ++l)
            for (std::size_t k = 0; k < noise_dim_; ++k)
                out[(m * steps + l) * noise_dim_ + k] = increments_[(l * noise_dim_ + k) * paths_ + m];
    return out;
}

WienerEnsemble WienerEnsemble::refine(std::size_t factor) const {
    if (factor <= 1) return *this;
    const TimeGrid fine = grid_.refined(factor);
    const std::size_t steps = grid_.steps();
    std::vector<double> out(paths_ * steps * factor * noise_dim_);
    std::vector<double> eps(factor);
    for (std::size_t m = 0; m < paths_; ++m) {
        std::mt19937_64 rng(path_stream_seed(seed_ ^ bridge_tag, m));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t l = 0; l < steps; ++l) {
            const double sub_sd = std::sqrt(grid_.dt(l) / static_cast<double>(factor));
            for (std::size_t k = 0; k < noise_dim_; ++k) {
                double mean = 0.0;
                for (auto& e : eps) {
                    e = sub_sd * normal(rng);
                    mean += e;
                }
                mean /= static_cast<double>(factor);
                const double target = increment(m, l, k) / static_cast<double>(factor);
                for (std::size_t j = 0; j < factor; ++j)
                    out[(m * steps * factor + l * factor + j) * noise_dim_ + k] = eps[j] - mean + target;
            }
        }
    }
    return WienerEnsemble(fine, noise_dim_, paths_, seed_, out);
}

bool WienerEnsemble::operator==(const WienerEnsemble& other) const {
    return grid_ == other.grid_ && noise_dim_ == other.noise_dim_ && paths_ == other.paths_ &&
           seed_ == other.seed_ && increments_ == other.increments_;
}

WienerEnsemble sample_ensemble(const TimeGrid& grid, std::size_t noise_dim, std::size_t paths,
                               std::uint64_t seed) {
    if (noise_dim == 0 || paths == 0)
        throw std::invalid_argument("sample_ensemble needs K >= 1 and M >= 1");
    const std::size_t steps = grid.steps();
    std::vector<double> increments(paths * steps * noise_dim);
    for (std::size_t m = 0; m < paths; ++m) {
        std::mt19937_64 rng(path_stream_seed(seed, m));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t l = 0; l < steps; ++l) {
            const double sd = std::sqrt(grid.dt(l));
            for (std::size_t k = 0; k < noise_dim; ++k)
                increments[(m * steps + l) * noise_dim + k] = sd * normal(rng);
        }
    }
    return WienerEnsemble(grid, noise_dim, paths, seed, increments);
}

std::vector<std::vector<int>> RegressionBasis::monomials() const {
    if (degree < 0) throw std::invalid_argument("basis degree must be nonnegative");
    std::vector<std::vector<int>> out;
    std::vector<int> exponents(coordinates, 0);
    // enumerate by total degree, then lexicographically with the first index varying slowest
    for (int total = 0; total <= degree; ++total) {
        auto recurse = [&](auto&& self, std::size_t pos, int remaining) -> void {
            if (pos + 1 == coordinates || coordinates == 0) {
                if (coordinates > 0) exponents[pos] = remaining;
                if (coordinates > 0 || remaining == 0) out.push_back(exponents);
                return;
            }
            for (int e = remaining; e >= 0; --e) {
                exponents[pos] = e;
                self(self, pos + 1, remaining - e);
            }
        };
        recurse(recurse, 0, total);
    }
    return out;
}

std::size_t RegressionBasis::size() const { return monomials().size(); }

void RegressionBasis::evaluate(const WienerEnsemble& ensemble, std::size_t l,
                               std::vector<double>& columns) const {
    if (coordinates > ensemble.noise_dim())
        throw std::invalid_argument("basis uses more coordinates than the noise has");
    const auto terms = monomials();
    const std::size_t paths = ensemble.paths();
    columns.assign(terms.size() * paths, 1.0);
    for (std::size_t b = 0; b < terms.size(); ++b) {
        double* col = columns.data() + b * paths;
        for (std::size_t k = 0; k < coordinates; ++k) {
            const auto w = ensemble.position_column(l, k);
            for (int e = 0; e < terms[b][k]; ++e)
                for (std::size_t m = 0; m < paths; ++m) col[m] *= w[m];
        }
    }
}

ConditionalExpectation::ConditionalExpectation(const WienerEnsemble& ensemble, RegressionBasis basis)
    : ensemble_(&ensemble), basis_(basis), factors_(ensemble.grid().points()) {
    if (basis_.ridge < 0.0) throw std::invalid_argument("ridge parameter must be nonnegative");
    if (basis_.coordinates > ensemble.noise_dim())
        throw std::invalid_argument("basis uses more coordinates than the noise has");
}

const std::vector<double>& ConditionalExpectation::features(std::size_t l) {
    if (columns_step_ != l) {
        basis_.evaluate(*ensemble_, l, columns_);
        columns_step_ = l;
    }
    return columns_;
}

const ConditionalExpectation::Factor& ConditionalExpectation::factor(std::size_t l) {
    if (l >= factors_.size()) throw std::out_of_range("time index outside the grid");
    if (factors_[l]) return *factors_[l];
    const auto& x = features(l);
    const std::size_t paths = ensemble_->paths();
    const std::size_t b = x.size() / paths;
    Eigen::MatrixXd gram(b, b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            const double g = simd::kernels().dot(x.data() + i * paths, x.data() + j * paths, paths);
            gram(i, j) = g;
            gram(j, i) = g;
        }

    Factor f;
    f.inv_scale = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b));
    bool has_inactive = false;
    for (std::size_t i = 0; i < b; ++i) {
        const double d = gram(i, i);
        if (d > 0.0)
            f.inv_scale(i) = 1.0 / std::sqrt(d);
        else
            has_inactive = true;
    }
    const Eigen::MatrixXd scaled = f.inv_scale.asDiagonal() * gram * f.inv_scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const Eigen::VectorXd ev = eig.eigenvalues();
    const double top = ev.maxCoeff();
    const double threshold = 1e-12 * std::max(top, 1.0);
    const double ridge = basis_.ridge;  // scaled Gram has unit trace per active column
    Eigen::VectorXd inv(ev.size());
    bool small = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ridge > 0.0) {
            // iterated Tikhonov: filter 1 - (ridge / (ev + ridge))^2
            inv(i) = ev(i) > threshold ? (ev(i) + 2.0 * ridge) / ((ev(i) + ridge) * (ev(i) + ridge)) : 0.0;
        } else if (ev(i) > threshold) {
            inv(i) = 1.0 / ev(i);
        } else {
            inv(i) = 0.0;
            small = true;
        }
        if (ev(i) <= threshold) small = true;
    }
    f.solve = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    f.rank_deficient = ridge == 0.0 && (small || has_inactive);
    factors_[l] = std::move(f);
    return *factors_[l];
}

bool ConditionalExpectation::rank_deficient(std::size_t l) { return factor(l).rank_deficient; }

std::size_t ConditionalExpectation::flagged_steps() const {
    std::size_t n = 0;
    for (const auto& f : factors_)
        if (f && f->rank_deficient) ++n;
    return n;
}

Eigen::MatrixXd ConditionalExpectation::coefficients_for(std::size_t l,
                                                          std::span<const double> targets,
                                                          std::size_t d) {
    const Factor& f = factor(l);
    const auto& x = features(l);
    const std::size_t paths = ensemble_->paths();
    if (targets.size() != d * paths) throw std::invalid_argument("targets must hold d columns of length M");
    const std::size_t b = x.size() / paths;
    Eigen::MatrixXd moments(b, d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < b; ++i)
            moments(i, j) = f.inv_scale(i) *
                            simd::kernels().dot(x.data() + i * paths, targets.data() + j * paths, paths);
    Eigen::MatrixXd coef = f.solve * moments;
    return f.inv_scale.asDiagonal() * coef;
}

ProjectionResult ConditionalExpectation::project(std::size_t l, std::span<const double> targets,
                                                 std::size_t d) {
    ProjectionResult out;
    out.coefficients = coefficients_for(l, targets, d);
    out.rank_deficient = factor(l).rank_deficient;
    const auto& x = features(l);
    const std::size_t paths = ensemble_->paths();
    const std::size_t b = x.size() / paths;
    out.fitted.assign(d * paths, 0.0);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < b; ++i)
            simd::kernels().axpy(out.coefficients(i, j), x.data() + i * paths,
                                 out.fitted.data() + j * paths, paths);
    return out;
}

void ConditionalExpectation::project_in_place(std::size_t l, std::span<double> targets,
                                              std::size_t d) {
    const Eigen::MatrixXd coef = coefficients_for(l, targets, d);
    const auto& x = features(l);
    const std::size_t paths = ensemble_->paths();
    const std::size_t b = x.size() / paths;
    for (std::size_t j = 0; j < d; ++j) {
        double* col = targets.data() + j * paths;
        std::fill(col, col + paths, 0.0);
        for (std::size_t i = 0; i < b; ++i) simd::kernels().axpy(coef(i, j), x.data() + i * paths, col, paths);
    }
}

std::vector<double> martingale_z_estimate(ConditionalExpectation& expectation, std::size_t l,
                                          std::span<const double> next_value, std::size_t dim) {
    const WienerEnsemble& ensemble = expectation.ensemble();
    if (l >= ensemble.steps()) throw std::out_of_range("Z is defined on t_0..t_{L-1}");
    const std::size_t paths = ensemble.paths();
    const std::size_t noise = ensemble.noise_dim();
    if (next_value.size() != dim * paths) throw std::invalid_argument("next_value must hold N columns");

    std::vector<double> centered(next_value.begin(), next_value.end());
    const auto predicted = expectation.project(l, next_value, dim).fitted;
    for (std::size_t i = 0; i < centered.size(); ++i) centered[i] -= predicted[i];

    const double inv_dt = 1.0 / ensemble.grid().dt(l);
    std::vector<double> targets(dim * noise * paths);
    for (std::size_t n = 0; n < dim; ++n)
        for (std::size_t k = 0; k < noise; ++k)
            simd::kernels().scaled_product(inv_dt, centered.data() + n * paths,
                                           ensemble.increment_column(l, k).data(),
                                           targets.data() + (n * noise + k) * paths, paths);
    expectation.project_in_place(l, targets, dim * noise);
    return targets;
}

}  // namespace bsde
