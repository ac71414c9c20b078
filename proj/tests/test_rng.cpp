#include <doctest.h>

#include "hsbi/rng.hpp"

using namespace hsbi;

TEST_CASE("derived seeds separate streams and repeat exactly") {
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("engine is deterministic per seed") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform01();
        CHECK(x == b.uniform01());
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) differs = differs || (a2.uniform01() != c.uniform01());
    CHECK(differs);
}

TEST_CASE("normal quantile inverts the normal cdf") {
    for (double p : {1e-9, 1e-4, 0.025, 0.31, 0.5, 0.77, 0.975, 1.0 - 1e-4}) {
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    }
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
    CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
}

TEST_CASE("normal moments") {
    Rng rng(7);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    CHECK(sum / n == doctest::Approx(0.0).epsilon(1).scale(0.01));
    CHECK(sum_sq / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("truncated normal respects bounds and matches inverse-cdf moments") {
    Rng rng(11);
    double sum = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.trunc_normal(0.0, 1.0, -1.0, 2.0);
        CHECK(x >= -1.0);
        CHECK(x <= 2.0);
        sum += x;
    }
    // E[TN(0,1,-1,2)] = (phi(-1) - phi(2)) / (Phi(2) - Phi(-1))
    const double phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }(1.0);
    const double phi2 = std::exp(-2.0) / std::sqrt(2 * M_PI);
    const double expect = (phi - phi2) / (normal_cdf(2.0) - normal_cdf(-1.0));
    CHECK(sum / n == doctest::Approx(expect).epsilon(0.03));
}

TEST_CASE("binomial matches moments and support") {
    Rng rng(13);
    const long n_trials = 1000;
    const double p = 0.137;
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const long k = rng.binomial(n_trials, p);
        CHECK(k >= 0);
        CHECK(k <= n_trials);
        sum += static_cast<double>(k);
    }
    CHECK(sum / n == doctest::Approx(n_trials * p).epsilon(0.01));
    CHECK(rng.binomial(10, 0.0) == 0);
    CHECK(rng.binomial(10, 1.0) == 10);
    CHECK_THROWS_AS(rng.binomial(-1, 0.5), DomainError);
}

TEST_CASE("poisson matches moments for small and large rates") {
    Rng rng(17);
    for (double lambda : {0.5, 8.0, 120.0, 2400.0}) {
        double sum = 0.0, sum_sq = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double k = static_cast<double>(rng.poisson(lambda));
            CHECK(k >= 0);
            sum += k;
            sum_sq += k * k;
        }
        const double mean = sum / n;
        const double var = sum_sq / n - mean * mean;
        CHECK(mean == doctest::Approx(lambda).epsilon(0.03));
        CHECK(var == doctest::Approx(lambda).epsilon(0.08));
    }
    CHECK(rng.poisson(0.0) == 0);
    CHECK_THROWS_AS(rng.poisson(-1.0), DomainError);
}
