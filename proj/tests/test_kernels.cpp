#include "bsde/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace bsde::simd;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST_CASE("scalar table is always available") {
    CHECK(isa_available(Isa::scalar));
    CHECK(kernels_for(Isa::scalar).isa == Isa::scalar);
    CHECK(isa_name(Isa::scalar) == "scalar");
}

TEST_CASE("vector kernels agree with the scalar reference") {
    const auto& ref = kernels_for(Isa::scalar);
    const auto& vec = kernels_for(Isa::avx2);
    if (!isa_available(Isa::avx2)) MESSAGE("avx2 unavailable, comparing scalar with itself");
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 63u, 1000u, 1001u}) {
        CAPTURE(n);
        const auto x = noise(n, 1 + n), y = noise(n, 100 + n);
        const double scale = 1.0 + std::sqrt(double(n));
        CHECK(vec.dot(x.data(), y.data(), n) == doctest::Approx(ref.dot(x.data(), y.data(), n)).epsilon(1e-12).scale(scale));
        CHECK(vec.squared_distance(x.data(), y.data(), n) ==
              doctest::Approx(ref.squared_distance(x.data(), y.data(), n)).epsilon(1e-12).scale(scale));

        auto a = y, b = y;
        ref.axpy(0.37, x.data(), a.data(), n);
        vec.axpy(0.37, x.data(), b.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-15));

        a = x, b = x;
        ref.scale(-2.5, a.data(), n);
        vec.scale(-2.5, b.data(), n);
        CHECK(a == b);

        std::vector<double> pa(n), pb(n);
        ref.scaled_product(1.5, x.data(), y.data(), pa.data(), n);
        vec.scaled_product(1.5, x.data(), y.data(), pb.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(pb[i] == doctest::Approx(pa[i]).epsilon(1e-15));
    }
}

TEST_CASE("weighted column max agrees across kernels") {
    const auto& ref = kernels_for(Isa::scalar);
    const auto& vec = kernels_for(Isa::avx2);
    for (std::size_t rows : {1u, 6u, 25u})
        for (std::size_t cols : {1u, 3u, 4u, 9u, 256u, 257u}) {
            auto table = noise(rows * cols, unsigned(rows * 31 + cols));
            for (double& v : table) v = v * v;
            auto w = noise(rows, 5);
            for (double& v : w) v = std::abs(v);
            const double a = ref.weighted_column_max(table.data(), rows, cols, w.data());
            const double b = vec.weighted_column_max(table.data(), rows, cols, w.data());
            CHECK(b == doctest::Approx(a).epsilon(1e-13));
        }
}

TEST_CASE("wrappers follow the active table") {
    const auto x = noise(33, 2), y = noise(33, 3);
    set_active_isa(Isa::scalar);
    CHECK(kernels().isa == Isa::scalar);
    const double s = dot(x, y);
    set_active_isa(Isa::avx2);
    CHECK(dot(x, y) == doctest::Approx(s).epsilon(1e-13));
    CHECK(squared_distance(x, x) == 0.0);
}
