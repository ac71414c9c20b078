#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "hsbi/errors.hpp"

namespace hsbi {

// splitmix64 finaliser; used to derive child seeds so that (master, index, site)
// triples map to well-separated streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = mix64(master);
    h = mix64(h ^ (a + 0x2545f4914f6cdd1dULL));
    h = mix64(h ^ (b + 0x27220a95fe6ba9ULL));
    h = mix64(h ^ (c + 0x6c62272e07bb0142ULL));
    return h;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Wichura's PPND16 (AS 241): double-precision inverse of the standard normal CDF.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -val : val;
}

// Counter-free xoshiro-style engine built on splitmix64 output streams.
// Explicit samplers keep draw sequences identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_ - 0x9e3779b97f4a7c15ULL + state_);
    }

    // uniform on [2^-54, 1 - 2^-54]; avoids exact 0/1 so logs and logits stay finite
    double uniform01() {
        const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        constexpr double eps = 0x1.0p-54;
        return u < eps ? eps : (u > 1.0 - eps ? 1.0 - eps : u);
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double half_normal(double sd) { return std::fabs(normal()) * sd; }

    double log_normal(double mu_log, double sd_log) { return std::exp(mu_log + sd_log * normal()); }

    // exact inverse-CDF sampling on [a, b]
    double trunc_normal(double mean, double sd, double a, double b) {
        if (!(sd > 0.0)) throw DomainError("trunc_normal: sd must be positive");
        if (!(a < b)) throw DomainError("trunc_normal: need a < b");
        const double fa = normal_cdf((a - mean) / sd);
        const double fb = normal_cdf((b - mean) / sd);
        const double u = fa + (fb - fa) * uniform01();
        double x = mean + sd * normal_quantile(u);
        return x < a ? a : (x > b ? b : x);
    }

    // CDF inversion via pmf recurrence; exact for the n used by the tasks (n <= ~1e4)
    long binomial(long n, double p) {
        if (n < 0 || p < 0.0 || p > 1.0) throw DomainError("binomial: invalid n or p");
        if (n == 0 || p == 0.0) return 0;
        if (p == 1.0) return n;
        const bool flip = p > 0.5;
        const double q = flip ? 1.0 - p : p;
        const double u = uniform01();
        double pmf = std::pow(1.0 - q, static_cast<double>(n));
        double cdf = pmf;
        long k = 0;
        const double ratio = q / (1.0 - q);
        while (cdf < u && k < n) {
            pmf *= ratio * static_cast<double>(n - k) / static_cast<double>(k + 1);
            ++k;
            cdf += pmf;
        }
        const long out = flip ? n - k : k;
        return out;
    }

    long poisson(double lambda) {
        if (lambda < 0.0 || !std::isfinite(lambda)) throw DomainError("poisson: invalid rate");
        if (lambda == 0.0) return 0;
        if (lambda < 30.0) {
            // Knuth product method
            const double limit = std::exp(-lambda);
            double prod = uniform01();
            long k = 0;
            while (prod > limit) {
                prod *= uniform01();
                ++k;
            }
            return k;
        }
        return poisson_ptrs(lambda);
    }

private:
    // Hormann's PTRS transformed-rejection sampler, exact for large rates
    long poisson_ptrs(double lambda) {
        const double slam = std::sqrt(lambda);
        const double loglam = std::log(lambda);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform01() - 0.5;
            const double v = uniform01();
            const double us = 0.5 - std::fabs(u);
            const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
            if (us >= 0.07 && v <= vr) return static_cast<long>(k);
            if (k < 0.0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
                k * loglam - lambda - std::lgamma(k + 1.0)) {
                return static_cast<long>(k);
            }
        }
    }

    std::uint64_t state_;
};

}  // namespace hsbi
