#include "bsde/kernels.hpp"
#include "bsde/stochastic_driver.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace bsde;

TEST_CASE("time grid construction") {
    const auto g = TimeGrid::uniform(2.0, 4);
    CHECK(g.steps() == 4);
    CHECK(g.points() == 5);
    CHECK(g[2] == 1.0);
    CHECK(g.dt(3) == 0.5);
    CHECK(g.refined(3).steps() == 12);
    CHECK(g.refined(3)[3] == doctest::Approx(0.5));
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({0.1, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::uniform(1.0, 0), std::invalid_argument);
}

TEST_CASE("sampling is reproducible and paths extend") {
    const auto g = TimeGrid::uniform(1.0, 10);
    const auto a = sample_ensemble(g, 2, 50, 9);
    const auto b = sample_ensemble(g, 2, 50, 9);
    const auto c = sample_ensemble(g, 2, 80, 9);
    const auto d = sample_ensemble(g, 2, 50, 10);
    CHECK(a == b);
    CHECK_FALSE(a == d);
    for (std::size_t m = 0; m < 50; ++m)
        for (std::size_t l = 0; l < 10; ++l)
            for (std::size_t k = 0; k < 2; ++k) CHECK(a.increment(m, l, k) == c.increment(m, l, k));
    CHECK(path_stream_seed(9, 0) != path_stream_seed(9, 1));
    CHECK(path_stream_seed(9, 1) == path_stream_seed(9, 1));
}

TEST_CASE("positions are cumulative increments") {
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 5), 1, 7, 3);
    for (std::size_t m = 0; m < 7; ++m) {
        CHECK(e.position(0, m, 0) == 0.0);
        double w = 0.0;
        for (std::size_t l = 0; l < 5; ++l) {
            w += e.increment(m, l, 0);
            CHECK(e.position(l + 1, m, 0) == doctest::Approx(w).epsilon(1e-14));
        }
    }
}

TEST_CASE("increment moments and quadratic variation") {
    const std::size_t M = 20000, L = 50;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, L), 2, M, 21);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto col = e.increment_column(7, k);
        const double mean = std::accumulate(col.begin(), col.end(), 0.0) / double(M);
        double var = 0.0;
        for (double x : col) var += (x - mean) * (x - mean);
        var /= double(M - 1);
        const double dt = 1.0 / double(L);
        CHECK(std::abs(mean) < 4.0 * std::sqrt(dt / double(M)));
        CHECK(std::abs(var / dt - 1.0) < 4.0 * std::sqrt(2.0 / double(M)));
    }
    double qv = 0.0;
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t l = 0; l < L; ++l) qv += e.increment(m, l, 0) * e.increment(m, l, 0);
    CHECK(std::abs(qv / double(M) - 1.0) < 0.05);
    double cross = 0.0;
    for (std::size_t m = 0; m < M; ++m) cross += e.terminal_position(m, 0) * e.terminal_position(m, 1);
    CHECK(std::abs(cross / double(M)) < 4.0 / std::sqrt(double(M)));
}

TEST_CASE("terminal value is standard normal") {
    const std::size_t M = 50000;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 20), 1, M, 5);
    double s = 0.0, s2 = 0.0, s4 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double w = e.terminal_position(m, 0);
        s += w, s2 += w * w, s4 += w * w * w * w;
    }
    CHECK(std::abs(s / double(M)) < 4.0 / std::sqrt(double(M)));
    CHECK(std::abs(s2 / double(M) - 1.0) < 4.0 * std::sqrt(2.0 / double(M)));
    CHECK(std::abs(s4 / double(M) - 3.0) < 4.0 * std::sqrt(96.0 / double(M)));
}

TEST_CASE("bridge refinement keeps coarse positions") {
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 8), 2, 30, 4);
    const auto r = e.refine(4);
    CHECK(r.steps() == 32);
    CHECK(r.paths() == 30);
    for (std::size_t l = 0; l <= 8; ++l)
        for (std::size_t m = 0; m < 30; ++m)
            for (std::size_t k = 0; k < 2; ++k)
                CHECK(r.position(4 * l, m, k) == doctest::Approx(e.position(l, m, k)).epsilon(1e-12));
    CHECK(e.refine(4) == r);
}

TEST_CASE("bridge increments have the fine variance") {
    const std::size_t M = 40000;
    const auto r = sample_ensemble(TimeGrid::uniform(1.0, 4), 1, M, 6).refine(5);
    double var = 0.0;
    for (std::size_t m = 0; m < M; ++m) var += r.increment(m, 3, 0) * r.increment(m, 3, 0);
    CHECK(std::abs(var / double(M) / r.grid().dt(3) - 1.0) < 4.0 * std::sqrt(2.0 / double(M)));
}

TEST_CASE("monomial basis ordering") {
    RegressionBasis b{2, 2, 0.0};
    const auto terms = b.monomials();
    REQUIRE(terms.size() == 6);
    CHECK(b.size() == 6);
    CHECK(terms[0] == std::vector<int>{0, 0});
    CHECK(terms[1] == std::vector<int>{1, 0});
    CHECK(terms[2] == std::vector<int>{0, 1});
    CHECK(terms[3] == std::vector<int>{2, 0});
    CHECK(RegressionBasis{3, 1, 0.0}.size() == 4);
    CHECK(RegressionBasis{0, 3, 0.0}.size() == 1);
}

TEST_CASE("projection reproduces functions in the basis span") {
    const std::size_t M = 2000;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 10), 1, M, 8);
    ConditionalExpectation ce(e, RegressionBasis{2, 1, 0.0});
    std::vector<double> target(M);
    const auto w = e.position_column(6, 0);
    for (std::size_t m = 0; m < M; ++m) target[m] = 1.5 - 2.0 * w[m] + 0.25 * w[m] * w[m];
    const auto p = ce.project(6, target, 1);
    CHECK(p.coefficients(0, 0) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(p.coefficients(1, 0) == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(p.coefficients(2, 0) == doctest::Approx(0.25).epsilon(1e-9));
    for (std::size_t m = 0; m < M; ++m) CHECK(p.fitted[m] == doctest::Approx(target[m]).epsilon(1e-9));
    CHECK_FALSE(p.rank_deficient);
}

TEST_CASE("projection residual is orthogonal to the features") {
    const std::size_t M = 3000;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 10), 1, M, 12);
    ConditionalExpectation ce(e, RegressionBasis{2, 1, 0.0});
    std::vector<double> target(M);
    for (std::size_t m = 0; m < M; ++m) target[m] = std::sin(3.0 * e.terminal_position(m, 0));
    const auto p = ce.project(4, target, 1);
    const auto w = e.position_column(4, 0);
    double r0 = 0.0, r1 = 0.0, r2 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double r = target[m] - p.fitted[m];
        r0 += r, r1 += r * w[m], r2 += r * w[m] * w[m];
    }
    CHECK(std::abs(r0) < 1e-8);
    CHECK(std::abs(r1) < 1e-8);
    CHECK(std::abs(r2) < 1e-8);
}

TEST_CASE("time zero design is flagged without ridge and handled with ridge") {
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 4), 1, 500, 2);
    ConditionalExpectation plain(e, RegressionBasis{2, 1, 0.0});
    CHECK(plain.rank_deficient(0));
    CHECK_FALSE(plain.rank_deficient(2));
    CHECK(plain.flagged_steps() == 1);
    ConditionalExpectation ridge(e, RegressionBasis{2, 1, 1e-8});
    CHECK_FALSE(ridge.rank_deficient(0));
    std::vector<double> target(500);
    for (std::size_t m = 0; m < 500; ++m) target[m] = e.terminal_position(m, 0) + 2.0;
    const auto p = ridge.project(0, target, 1);
    double mean = 0.0;
    for (double x : target) mean += x / 500.0;
    CHECK(p.fitted[0] == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("conditional expectation oracles within three standard errors") {
    const std::size_t M = 100000;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 10), 1, M, 31);
    ConditionalExpectation ce(e, RegressionBasis{2, 1, 1e-8});
    std::vector<double> wt(M), wt2(M);
    for (std::size_t m = 0; m < M; ++m) {
        wt[m] = e.terminal_position(m, 0);
        wt2[m] = wt[m] * wt[m];
    }
    const std::size_t l = 5;
    const double t = 0.5, rest = 0.5;
    const auto a = ce.project(l, wt, 1).coefficients;
    CHECK(std::abs(a(0, 0)) < 3.0 * std::sqrt(rest / double(M)) * 1.5);
    CHECK(std::abs(a(1, 0) - 1.0) < 3.0 * std::sqrt(rest / (t * double(M))));
    CHECK(std::abs(a(2, 0)) < 3.0 * std::sqrt(rest / (2.0 * t * t * double(M))));
    const auto b = ce.project(l, wt2, 1).coefficients;
    CHECK(std::abs(b(0, 0) - rest) < 0.02);
    CHECK(std::abs(b(1, 0)) < 0.02);
    CHECK(std::abs(b(2, 0) - 1.0) < 0.02);
}

TEST_CASE("martingale Z estimates") {
    const std::size_t M = 100000;
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 10), 2, M, 41);
    ConditionalExpectation ce(e, RegressionBasis{2, 2, 1e-8});
    const std::size_t l = 4;
    std::vector<double> next(2 * M);
    for (std::size_t m = 0; m < M; ++m) {
        next[m] = e.position(l + 1, m, 0) * 2.0 + e.position(l + 1, m, 1);
        const double w = e.position(l + 1, m, 0);
        next[M + m] = w * w;
    }
    const auto z = martingale_z_estimate(ce, l, next, 2);
    REQUIRE(z.size() == 4 * M);
    double z00 = 0, z01 = 0, z11 = 0, slope = 0, sxx = 0;
    for (std::size_t m = 0; m < M; ++m) {
        z00 += z[m] / double(M);
        z01 += z[M + m] / double(M);
        z11 += z[3 * M + m] / double(M);
        const double w = e.position(l, m, 0);
        slope += w * z[2 * M + m];
        sxx += w * w;
    }
    CHECK(z00 == doctest::Approx(2.0).epsilon(0.02));
    CHECK(z01 == doctest::Approx(1.0).epsilon(0.02));
    CHECK(std::abs(z11) < 0.02);
    CHECK(slope / sxx == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("projection does not depend on the kernel table") {
    const auto e = sample_ensemble(TimeGrid::uniform(1.0, 6), 1, 1001, 17);
    std::vector<double> target(1001);
    for (std::size_t m = 0; m < 1001; ++m) target[m] = std::cos(e.terminal_position(m, 0));
    simd::set_active_isa(simd::Isa::scalar);
    ConditionalExpectation a(e, RegressionBasis{});
    const auto pa = a.project(3, target, 1).fitted;
    simd::set_active_isa(simd::Isa::avx2);
    ConditionalExpectation b(e, RegressionBasis{});
    const auto pb = b.project(3, target, 1).fitted;
    for (std::size_t m = 0; m < 1001; ++m) CHECK(pb[m] == doctest::Approx(pa[m]).epsilon(1e-10));
}
