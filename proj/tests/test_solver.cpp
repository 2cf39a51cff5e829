#include "bsde/bsde_solver.hpp"
#include "bsde/errors.hpp"
#include "bsde/models.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace bsde;

namespace {

// dY = (a Y - mu Y) dt + Z dW backwards from a deterministic terminal, one mode.
BsdeProblem linear_drift_problem(double a, double mu, double terminal = 1.0) {
    BsdeProblem p;
    p.name = "linear-drift";
    p.op = DiagonalOperator::lattice_diagonal({a});
    p.terminal.eval = [terminal](const WienerEnsemble&, std::size_t, std::span<double> out) { out[0] = terminal; };
    p.terminal.h_bound = p.terminal.alpha_bound = std::abs(terminal);
    p.terminal.deterministic = true;
    p.f0.eval = [mu](double, std::span<const double> y, std::span<double> out) { out[0] = mu * y[0]; };
    p.f0.growth_S = std::abs(mu);
    p.f0.gamma = 1.0;
    p.f0.lipschitz = [mu](double) { return std::abs(mu); };
    p.f0.mu = std::max(mu, 0.0);
    p.validated = true;
    return p;
}

OperatorConstants unit_constants(double G) {
    OperatorConstants c;
    c.holder_G = G;
    return c;
}

double rel_l2(const GridProcess& a, const GridProcess& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        num += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
        den += b.data()[i] * b.data()[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("a-priori H bound examples") {
    CHECK(apriori_h_bound(0, 0, 0, 3.0) == 0.0);
    CHECK(apriori_h_bound(1, 0, 0, 0.0) == 1.0);
    CHECK(apriori_h_bound(1, 1, 1, 1.0) == doctest::Approx(std::sqrt(3.0 * (1.0 + 2.0 * std::exp(2.0)))));
    CHECK(apriori_h_bound(1, 1, 1, 1.0) == doctest::Approx(6.88).epsilon(1e-3));
}

TEST_CASE("blow-up envelope examples") {
    CHECK(blowup_bound(1.0, 0.75, 0.25, 1.0, 0.75) == doctest::Approx(2.0));
    CHECK(blowup_bound(3.0, 0.4, 0.4, 1.0, 0.999) == 3.0);
    const double near = blowup_bound(1.0, 0.6, 0.3, 1.0, 1.0 - 0.1);
    const double nearer = blowup_bound(1.0, 0.6, 0.3, 1.0, 1.0 - 0.05);
    CHECK(nearer / near == doctest::Approx(std::pow(2.0, 0.3)));
    CHECK_THROWS(blowup_bound(1.0, 0.6, 0.3, 1.0, 1.0));
}

TEST_CASE("radius and window length examples") {
    auto p = linear_drift_problem(0.0, 1.0);
    p.f0.growth_S = 0.0;
    auto sel = select_local_radius_and_delta(p, unit_constants(0.5), 1.0, 1.0, 10.0);
    CHECK(sel.radius == doctest::Approx(2.0));
    CHECK(sel.delta0 == doctest::Approx(1.0));
    CHECK(sel.delta == doctest::Approx(1.0));

    p.alpha = 0.5;
    p.f0.gamma = 1.5;
    sel = select_local_radius_and_delta(p, unit_constants(1.0), 1.0, 1.0, 10.0);
    CHECK(sel.delta0 == doctest::Approx(0.25));
    CHECK(sel.delta == doctest::Approx(0.25));

    sel = select_local_radius_and_delta(p, unit_constants(1.0), 1.0, 1.2, 10.0);
    CHECK(sel.delta == doctest::Approx(0.25 / 1.2));
    sel = select_local_radius_and_delta(p, unit_constants(1.0), 1.0, 1.0, 0.1);
    CHECK(sel.delta == doctest::Approx(0.1));

    p.f0.growth_S = 1.0;
    sel = select_local_radius_and_delta(p, unit_constants(1e-6), 1.0, 1.0, 10.0);
    CHECK(sel.delta1 < sel.delta0);
    CHECK(sel.delta == doctest::Approx(sel.delta1));
    CHECK_THROWS_AS(select_local_radius_and_delta(p, unit_constants(1.0), 1.0, 1.0, 0.0), WindowCollapse);
}

TEST_CASE("exponential shift identities") {
    const auto p = linear_drift_problem(1.0, 0.7);
    const auto same = exponential_shift(p, 0.0);
    std::vector<double> a(1), b(1);
    p.f0.eval(0.3, std::vector<double>{2.0}, a);
    same.f0.eval(0.3, std::vector<double>{2.0}, b);
    CHECK(a == b);

    const auto cancelled = exponential_shift(p, 0.7);
    for (double t : {0.0, 0.4, 1.0})
        for (double y : {-3.0, 0.5, 2.0}) {
            cancelled.f0.eval(t, std::vector<double>{y}, b);
            CHECK(std::abs(b[0]) < 1e-12);
        }
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 4), 1, 3, 1);
    cancelled.terminal.eval(ens, 0, b);
    CHECK(b[0] == doctest::Approx(std::exp(0.7)));
    CHECK(cancelled.f0.mu == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("shifted drift is monotone on sampled pairs") {
    auto p = linear_drift_problem(1.0, 1.0);
    p.f0.eval = [](double, std::span<const double> y, std::span<double> out) { out[0] = y[0] - y[0] * y[0] * y[0]; };
    const auto s = exponential_shift(p, 1.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> f1(1), f2(1);
    double worst = -1e300;
    for (int i = 0; i < 2000; ++i) {
        const double t = 0.5 * (u(rng) + 2.0) / 2.0, y1 = u(rng), y2 = u(rng);
        s.f0.eval(t, std::vector<double>{y1}, f1);
        s.f0.eval(t, std::vector<double>{y2}, f2);
        worst = std::max(worst, (f1[0] - f2[0]) * (y1 - y2));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("unshift undoes the shift factor") {
    SolutionPair s;
    s.grid = TimeGrid::uniform(1.0, 2);
    s.Y = GridProcess(3, 1, 1, 1.0);
    s.Z = GridProcess(2, 1, 1, 1.0);
    const auto u = unshift_solution(s, 0.5);
    CHECK(u.Y.at(0, 0, 0) == 1.0);
    CHECK(u.Y.at(2, 0, 0) == doctest::Approx(std::exp(-0.5)));
    CHECK(u.Z.at(1, 0, 0) == doctest::Approx(std::exp(-0.25)));
}

TEST_CASE("weighted distance arithmetic") {
    SolutionPair a, b;
    a.grid = b.grid = TimeGrid::uniform(1.0, 4);
    a.Y = GridProcess(5, 1, 2, 1.0);
    b.Y = GridProcess(5, 1, 2, 0.0);
    a.Z = b.Z = GridProcess(4, 1, 2, 0.0);
    double expected = 0.0;
    for (int l = 0; l < 4; ++l) expected += std::exp(2.0 * 0.25 * l) * 0.25;
    CHECK(weighted_squared_distance(a, b, 2.0) == doctest::Approx(expected));
    CHECK(weighted_squared_distance(a, a, 5.0) == 0.0);
}

TEST_CASE("hypothesis checks name the violated condition") {
    auto p = linear_drift_problem(1.0, -1.0);
    p.alpha = 0.5;
    p.f0.gamma = 2.5;
    try {
        p.check_hypotheses();
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.hypothesis() == "growth exponent 1 < gamma < 1/alpha");
    }
    p.f0.gamma = 1.5;
    CHECK_NOTHROW(p.check_hypotheses());
    p.validated = false;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 4), 1, 10, 1);
    CHECK_THROWS_AS(BsdeSolver(p, ens, RegressionBasis{}), ValidationError);
    SolverConfig cfg;
    cfg.allow_unvalidated = true;
    CHECK_NOTHROW(BsdeSolver(p, ens, RegressionBasis{}, cfg));
    const auto other = sample_ensemble(TimeGrid::uniform(2.0, 4), 1, 10, 1);
    CHECK_THROWS_AS(BsdeSolver(p, other, RegressionBasis{}, cfg), Error);
}

TEST_CASE("picard map without drift propagates a deterministic terminal") {
    const auto p = build_linear_oracle(LinearOracle::heat, 1.0, 4);
    const std::size_t L = 20, M = 200;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 1, M, 5);
    BsdeSolver solver(p, ens, RegressionBasis{2, 1, 1e-8});
    const auto xi = solver.terminal_values();
    const GridProcess U(L + 1, 4, M);
    const auto w = solver.picard_map(Window{0, L}, U, nullptr, xi, p_infinity);
    State x(4);
    for (std::size_t n = 0; n < 4; ++n) x[n] = xi[n * M];
    for (std::size_t l = 0; l <= L; ++l) {
        const auto ref = semigroup_apply(p.op, 1.0 - ens.grid()[l], x);
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t m = 0; m < M; m += 37) CHECK(w.Y.at(l, n, m) == doctest::Approx(ref[n]).epsilon(1e-9));
    }
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t n = 0; n < 4; ++n) CHECK(std::abs(w.Z.at(l, n, 0)) < 1e-8);
}

TEST_CASE("picard map reproduces the martingale representation") {
    const auto p = build_linear_oracle(LinearOracle::martingale);
    const std::size_t L = 10, M = 100000;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 1, M, 6);
    BsdeSolver solver(p, ens, RegressionBasis{2, 1, 1e-8});
    const auto w = solver.picard_map(Window{0, L}, GridProcess(L + 1, 1, M), nullptr, solver.terminal_values(),
                                     p_infinity);
    for (std::size_t l : {std::size_t{3}, std::size_t{7}}) {
        double err = 0.0, z = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double e = w.Y.at(l, 0, m) - ens.position(l, m, 0);
            err += e * e / double(M);
            z += w.Z.at(l, 0, m) / double(M);
        }
        CHECK(std::sqrt(err) < 0.01);
        CHECK(z == doctest::Approx(1.0).epsilon(0.05));
    }
    for (std::size_t m = 0; m < M; m += 1000) CHECK(w.Y.at(L, 0, m) == ens.terminal_position(m, 0));
}

TEST_CASE("picard map refuses states outside the ball") {
    const auto p = linear_drift_problem(0.0, -1.0, 5.0);
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 4), 1, 10, 1);
    BsdeSolver solver(p, ens, RegressionBasis{1, 1, 1e-8});
    GridProcess U(5, 1, 10, 5.0);
    CHECK_THROWS_AS(solver.picard_map(Window{0, 4}, U, nullptr, solver.terminal_values(), 1.0), RadiusExceeded);
}

TEST_CASE("drift-free window converges in one iteration") {
    const auto p = build_linear_oracle(LinearOracle::heat, 1.0, 4);
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 10), 1, 50, 7);
    BsdeSolver solver(p, ens, RegressionBasis{});
    const auto r = solver.local_solve(Window{0, 10}, solver.terminal_values(), p_infinity, nullptr, 1e-8);
    CHECK(r.record.iterations == 1);
}

TEST_CASE("drift-free problem is solved in one window") {
    const auto p = build_linear_oracle(LinearOracle::heat, 1.0, 4);
    const std::size_t L = 100, M = 10000;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 1, M, 8);
    BsdeSolver solver(p, ens, RegressionBasis{});
    const auto r = solver.global_solve();
    CHECK(r.report.windows.size() == 1);
    State x(4);
    const auto xi = solver.terminal_values();
    for (std::size_t n = 0; n < 4; ++n) x[n] = xi[n * M];
    const auto y0 = semigroup_apply(p.op, 1.0, x);
    for (std::size_t n = 0; n < 4; ++n) CHECK(r.solution.Y.at(0, n, 17) == doctest::Approx(y0[n]).epsilon(1e-9));
    CHECK(r.report.residual < 1e-2);
    CHECK(r.report.residual_within_tol);
}

TEST_CASE("residual responds to an injected unit defect and ignores path order") {
    const auto p = build_linear_oracle(LinearOracle::heat, 1.0, 3);
    const std::size_t L = 20, M = 400;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 1, M, 9);
    BsdeSolver solver(p, ens, RegressionBasis{});
    auto r = solver.global_solve();
    const double base = solver.residual(r.solution);
    CHECK(base < 1e-8);
    auto bumped = r.solution;
    for (std::size_t l = 0; l <= L; ++l)
        for (double& v : bumped.Y.column(l, 1)) v += 1.0;
    CHECK(solver.residual(bumped) == doctest::Approx(1.0).epsilon(0.02));

    const auto mart = build_linear_oracle(LinearOracle::martingale);
    BsdeSolver ms(mart, ens, RegressionBasis{});
    const auto sol = ms.global_solve().solution;
    const double r0 = ms.residual(sol);

    std::vector<std::size_t> perm(M);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto inc = ens.path_major_increments();
    std::vector<double> pinc(inc.size());
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t l = 0; l < L; ++l) pinc[perm[m] * L + l] = inc[m * L + l];
    const WienerEnsemble pens(ens.grid(), 1, M, ens.seed(), pinc);
    SolutionPair psol{sol.grid, GridProcess(L + 1, 1, M), GridProcess(L, 1, M)};
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t l = 0; l <= L; ++l) psol.Y.at(l, 0, perm[m]) = sol.Y.at(l, 0, m);
        for (std::size_t l = 0; l < L; ++l) psol.Z.at(l, 0, perm[m]) = sol.Z.at(l, 0, m);
    }
    BsdeSolver ps(mart, pens, RegressionBasis{});
    CHECK(ps.residual(psol) == doctest::Approx(r0).epsilon(1e-10));
}

TEST_CASE("terminal exactness and window joins on the spin chain") {
    const auto p = build_spin_system(SpinSpec{});
    auto q = p;
    q.validated = true;
    const std::size_t L = 100, M = 500;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 5, M, 10);
    BsdeSolver solver(q, ens, RegressionBasis{2, 5, 1e-8});
    const auto r = solver.global_solve();
    const auto xi = solver.terminal_values();
    const auto yT = r.solution.Y.slice(L);
    for (std::size_t i = 0; i < xi.size(); ++i) CHECK(yT[i] == xi[i]);

    const auto& ws = r.report.windows;
    REQUIRE(ws.size() >= 2);
    CHECK(ws.front().t_end == 1.0);
    CHECK(ws.back().t_begin == 0.0);
    for (std::size_t i = 1; i < ws.size(); ++i) {
        CHECK(ws[i].t_end == ws[i - 1].t_begin);
        CHECK(ws[i].window.end == ws[i - 1].window.begin);
    }
    const auto& s = r.report.delta_schedule;
    REQUIRE(s.size() == ws.size());
    const double later = s[1];
    for (std::size_t i = 1; i + 1 < s.size(); ++i) CHECK(s[i] == doctest::Approx(later));
    CHECK(ws.size() == std::size_t(1 + std::ceil((1.0 - s[0]) / later - 1e-9)));
    for (const auto& w : ws) {
        CHECK(w.in_ball);
        CHECK_FALSE(w.factors.empty());
        for (double f : w.factors) CHECK(f <= 0.6);
    }
}

TEST_CASE("solution does not depend on the initial guess") {
    auto p = build_spin_system(SpinSpec{});
    p.validated = true;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 50), 5, 1000, 11);
    SolverConfig a, b;
    b.initial_guess = SolverConfig::InitialGuess::zero;
    BsdeSolver sa(p, ens, RegressionBasis{2, 5, 1e-8}, a);
    BsdeSolver sb(p, ens, RegressionBasis{2, 5, 1e-8}, b);
    const auto ra = sa.global_solve();
    const auto rb = sb.global_solve();
    CHECK(rel_l2(rb.solution.Y, ra.solution.Y) < 2.0 * ra.report.tol);
}

TEST_CASE("shift equivalence on a linear drift") {
    const double a = 1.0, mu = 0.5;
    const auto p = linear_drift_problem(a, mu);
    const std::size_t L = 200;
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, L), 1, 20, 12);
    SolverConfig shifted, direct;
    direct.auto_shift = false;
    BsdeSolver s1(p, ens, RegressionBasis{1, 1, 1e-8}, shifted);
    BsdeSolver s2(p, ens, RegressionBasis{1, 1, 1e-8}, direct);
    const auto r1 = s1.global_solve();
    const auto r2 = s2.global_solve();
    CHECK(r1.report.shift_lambda == doctest::Approx(mu));
    CHECK(r2.report.shift_lambda == 0.0);
    for (std::size_t l = 0; l <= L; l += 20) {
        const double exact = std::exp((mu - a) * (1.0 - ens.grid()[l]));
        CHECK(r1.solution.Y.at(l, 0, 3) == doctest::Approx(exact).epsilon(1e-9));
        CHECK(r2.solution.Y.at(l, 0, 3) == doctest::Approx(exact).epsilon(5e-3));
        CHECK(std::abs(r1.solution.Y.at(l, 0, 3) - r2.solution.Y.at(l, 0, 3)) < 5e-3);
    }
}

TEST_CASE("outer weight follows the driver Lipschitz constant") {
    auto make = [](double K) {
        auto p = build_linear_oracle(LinearOracle::heat, 1.0, 3);
        if (K > 0.0) {
            p.f1.eval = [K](double, std::span<const double> y, std::span<const double>, std::span<double> out) {
                for (std::size_t n = 0; n < y.size(); ++n) out[n] = -K * std::tanh(y[n]) / double(n + 1);
            };
            p.f1.lipschitz_K = K;
            p.f1.bound_C = K * std::sqrt(1.0 + 0.25 + 1.0 / 9.0);
        }
        return p;
    };
    const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 20), 1, 200, 13);
    for (auto [K, beta] : {std::pair{0.0, 1.0}, std::pair{0.5, 2.0}, std::pair{1.0, 5.0}}) {
        CAPTURE(K);
        BsdeSolver solver(make(K), ens, RegressionBasis{});
        const auto r = solver.general_solve();
        CHECK(r.report.beta_weight == doctest::Approx(beta));
        if (K == 0.0) CHECK(r.report.outer_iterations == 1);
        else {
            CHECK(r.report.outer_iterations >= 2);
            for (double f : r.report.outer_factors) CHECK(f <= 0.6);
        }
    }
}
