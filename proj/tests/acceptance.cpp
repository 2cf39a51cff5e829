// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "bsde/bsde_solver.hpp"
#include "bsde/experiment.hpp"
#include "bsde/gronwall.hpp"
#include "bsde/models.hpp"
#include "bsde/spectral_operator.hpp"
#include "bsde/stochastic_driver.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace bsde;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SolveResult solve_linear(LinearOracle kind, std::size_t paths, std::size_t steps, std::uint64_t seed) {
    auto problem = build_linear_oracle(kind);
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, steps), 1, paths, seed);
    BsdeSolver solver(problem, ens, RegressionBasis{2, 1, 1e-8});
    return solver.global_solve();
}

Verdict linear_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = solve_linear(LinearOracle::martingale, 100000, 100, 101);
    const double elapsed = seconds_since(t0);
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 100), 1, 100000, 101);
    double err = 0.0, ref = 0.0, zerr = 0.0;
    const auto& s = r.solution;
    for (std::size_t l = 0; l <= 100; ++l)
        for (std::size_t m = 0; m < ens.paths(); ++m) {
            const double w = ens.position(l, m, 0);
            err += (s.Y.at(l, 0, m) - w) * (s.Y.at(l, 0, m) - w);
            ref += w * w;
            if (l < 100) zerr += (s.Z.at(l, 0, m) - 1.0) * (s.Z.at(l, 0, m) - 1.0);
        }
    const double rel = std::sqrt(err / ref);
    const double zrms = std::sqrt(zerr / (100.0 * ens.paths()));
    return {rel < 0.02 && zrms < 0.05 && elapsed < 60.0,
            "Y vs W_t rel L2 " + num(rel) + " (< 0.02), Z rms dev from 1 " + num(zrms) + " (< 0.05), " +
                num(elapsed) + " s (< 60)"};
}

Verdict quadratic_oracle() {
    const auto r = solve_linear(LinearOracle::quadratic, 100000, 100, 102);
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 100), 1, 100000, 102);
    const auto& s = r.solution;
    double err = 0.0, ref = 0.0;
    double sxx = 0.0, sxz = 0.0, sx = 0.0, sz = 0.0, n = 0.0;
    for (std::size_t l = 0; l <= 100; ++l)
        for (std::size_t m = 0; m < ens.paths(); ++m) {
            const double w = ens.position(l, m, 0);
            const double target = w * w + (1.0 - s.grid[l]);
            err += (s.Y.at(l, 0, m) - target) * (s.Y.at(l, 0, m) - target);
            ref += target * target;
            if (l >= 1 && l < 100) {
                const double z = s.Z.at(l, 0, m);
                sxx += w * w, sxz += w * z, sx += w, sz += z, n += 1.0;
            }
        }
    const double rel = std::sqrt(err / ref);
    const double slope = (sxz - sx * sz / n) / (sxx - sx * sx / n);
    return {rel < 0.03 && std::abs(slope - 2.0) < 0.1,
            "Y vs W_t^2 + (T-t) rel L2 " + num(rel) + " (< 0.03), Z slope " + num(slope) + " (2 +- 0.1)"};
}

SolveResult solve_preset(const std::string& name) {
    auto cfg = preset_config(name);
    cfg.seed = 2024;
    return run_solve(cfg, false).result;
}

Verdict contraction_reproduction(const SolveResult& spin, double elapsed) {
    double worst = 0.0;
    std::size_t count = 0;
    bool recorded = true;
    for (const auto& w : spin.report.windows) {
        if (w.factors.empty()) recorded = false;
        for (double f : w.factors) worst = std::max(worst, f), ++count;
    }
    return {recorded && worst <= 0.6 && elapsed < 300.0,
            std::to_string(spin.report.windows.size()) + " windows, " + std::to_string(count) +
                " factors, worst " + num(worst) + " (<= 0.6), delta_1 formula " + num(spin.report.first_selection.delta) +
                ", " + num(elapsed) + " s (< 300)"};
}

Verdict outer_fixed_point(const SolveResult& rd) {
    double worst = 0.0;
    for (double f : rd.report.outer_factors) worst = std::max(worst, f);
    const bool ok = rd.report.beta_weight == 2.0 && !rd.report.outer_factors.empty() && worst <= 0.6 &&
                    rd.report.outer_iterations <= 10;
    return {ok, "beta " + num(rd.report.beta_weight) + ", " + std::to_string(rd.report.outer_iterations) +
                    " outer iterations (<= 10), worst squared factor " + num(worst) + " (<= 0.6)"};
}

Verdict apriori_bound(const SolveResult& spin, const SolveResult& rd) {
    const double a = spin.report.max_h_norm / spin.report.c1;
    const double b = rd.report.max_h_norm / rd.report.c1;
    return {a <= 1.1 && b <= 1.1,
            "max|Y|_H / C_1: spin " + num(a) + ", reaction-diffusion " + num(b) + " (<= 1.1)"};
}

Verdict gronwall_suite() {
    const GronwallInput in{1.0, 1.0, 0.0, 1.0, 1.0};
    const auto rec = gronwall_recursion(in);
    const double M = gronwall_constant(in);
    double err = 0.0, excess = -1.0;
    for (int i = 0; i < 20; ++i) {
        const double t = 0.05 * i;
        const double v = rec.value(in, t);
        err = std::max(err, std::abs(v - std::exp(1.0 - t)));
    }
    for (std::size_t i = 0; i + 1 < rec.t.size(); ++i)
        excess = std::max(excess, rec.weighted[i] - (1.0 + std::exp(1.0)));
    const GronwallInput flat{1.7, 0.0, 0.3, 0.6, 2.0};
    bool exact = true;
    for (double t : {0.0, 0.5, 1.0, 1.9}) exact = exact && std::abs(gronwall_bound_iterative(flat, t) / (1.7 * std::pow(2.0 - t, -0.3)) - 1.0) < 1e-14;
    return {err <= 1e-3 && excess <= 0.0 && std::abs(M - (1.0 + std::exp(1.0))) < 1e-12 && exact,
            "max |V - e^{1-t}| " + num(err) + " (<= 1e-3), max V - (1+e) " + num(excess) + " (<= 0), b = 0 exact: " +
                (exact ? "yes" : "no")};
}

Verdict dissipativity() {
    const auto spin = build_spin_system(SpinSpec{});
    const auto d = check_dissipativity(spin.f0.eval, boundary_matched_pairs(spin.dim(), 1.0), 100000, 7);
    const auto anti = check_dissipativity(anti_dissipative_drift(), independent_pairs(spin.dim(), 1.0), 1000, 8);
    return {d.max_inner <= 1e-12 && !anti.dissipative,
            "spin max inner product " + num(d.max_inner) + " over 1e5 pairs (<= 1e-12), control case " +
                (anti.dissipative ? "not flagged" : "flagged") + " (max " + num(anti.max_inner) + ")"};
}

Verdict semigroup_invariants() {
    const auto op = DiagonalOperator::laplacian_dirichlet_1d(6);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    double law = 0.0;
    for (int i = 0; i < 200; ++i) {
        State x(6);
        for (double& v : x) v = g(rng);
        const double t = 0.3 * std::abs(g(rng)), s = 0.3 * std::abs(g(rng));
        const auto a = semigroup_apply(op, t + s, x);
        const auto b = semigroup_apply(op, t, semigroup_apply(op, s, x));
        for (std::size_t n = 0; n < 6; ++n) law = std::max(law, std::abs(a[n] - b[n]));
    }
    double eig = 0.0;
    for (double alpha : {0.1, 0.25, 0.5, 0.75, 0.9})
        for (std::size_t n = 0; n < 6; ++n) {
            State e(6, 0.0);
            e[n] = 1.0;
            const double numeric = interpolation_norm(op, alpha, e).seminorm;
            const double exact = eigenvector_seminorm(op.eigenvalue(n), alpha);
            eig = std::max(eig, std::abs(numeric - exact) / exact);
        }
    const auto constants = estimate_operator_constants(op, 0.25, 0.75, 1.0, 7);
    double worst = 0.0;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        State x(6);
        for (std::size_t n = 0; n < 6; ++n) x[n] = u(rng) / std::pow(double(n + 1), double(i % 3));
        worst = std::max(worst, interpolation_inequality_check(op, 0.25, 0.75, x).ratio);
    }
    return {law <= 1e-12 && eig <= 1e-4 && worst <= constants.interpolation_c,
            "semigroup law " + num(law) + " (<= 1e-12), eigenvector seminorm rel err " + num(eig) +
                " (<= 1e-4), interpolation ratio " + num(worst) + " vs reported c " + num(constants.interpolation_c)};
}

Verdict residual_convergence() {
    const double r3 = solve_linear(LinearOracle::martingale, 1000, 100, 303).report.residual;
    const double r4 = solve_linear(LinearOracle::martingale, 10000, 100, 303).report.residual;
    return {r3 / r4 >= 2.5, "residual M=1e3 " + num(r3) + ", M=1e4 " + num(r4) + ", ratio " + num(r3 / r4) + " (>= 2.5)"};
}

Verdict determinism() {
    auto cfg = preset_config("spin-chain");
    cfg.seed = 77;
    const auto a = run_solve(cfg, false).csv;
    const auto b = run_solve(cfg, false).csv;
    auto rd = preset_config("reaction-diffusion-1d");
    rd.seed = 78;
    rd.discretization.paths = 1000;
    const auto c = run_solve(rd, false).csv;
    const auto d = run_solve(rd, false).csv;
    return {a == b && c == d && !a.empty(),
            std::string("spin CSV ") + (a == b ? "identical" : "differs") + " (" + std::to_string(a.size()) +
                " bytes), reaction-diffusion CSV " + (c == d ? "identical" : "differs")};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& run) {
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::printf("[%s] criterion %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "linear oracle", linear_oracle);
    report(2, "quadratic oracle", quadratic_oracle);

    SolveResult spin, rd;
    double spin_seconds = 0.0;
    std::string preset_error;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        spin = solve_preset("spin-chain");
        spin_seconds = seconds_since(t0);
        rd = solve_preset("reaction-diffusion-1d");
    } catch (const std::exception& e) {
        preset_error = e.what();
    }
    auto guarded = [&](std::function<Verdict()> f) {
        return [f, &preset_error]() -> Verdict {
            if (!preset_error.empty()) return {false, "preset solve failed: " + preset_error};
            return f();
        };
    };
    report(3, "contraction reproduction", guarded([&] { return contraction_reproduction(spin, spin_seconds); }));
    report(4, "outer fixed point", guarded([&] { return outer_fixed_point(rd); }));
    report(5, "a-priori bound", guarded([&] { return apriori_bound(spin, rd); }));
    report(6, "gronwall suite", gronwall_suite);
    report(7, "dissipativity", dissipativity);
    report(8, "semigroup and interpolation invariants", semigroup_invariants);
    report(9, "residual convergence", residual_convergence);
    report(10, "determinism", determinism);

    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
