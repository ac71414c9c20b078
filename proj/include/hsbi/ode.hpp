#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <vector>

#include "hsbi/errors.hpp"

namespace hsbi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct SolverConfig {
    double rtol = 1e-5;
    double atol = 1e-5;
    long max_steps = 200000;
};

struct SolverStats {
    long accepted = 0;
    long rejected = 0;
    long field_evals = 0;
};

using OdeField = std::function<void(double t, const Vec& y, Vec& dydt)>;

// Dormand-Prince 5(4) with adaptive step control (FSAL).
class Dopri5 {
public:
    explicit Dopri5(SolverConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg_.rtol > 0.0) || !(cfg_.atol > 0.0))
            throw DomainError("Dopri5: tolerances must be positive");
    }

    // Integrates y' = f(t, y) from t0 to t1 (t1 > t0), returning y(t1).
    Vec integrate(const OdeField& f, Vec y, double t0, double t1, SolverStats* stats = nullptr) const {
        if (t1 < t0) throw DomainError("Dopri5: backward integration not supported");
        if (t1 == t0) return y;
        const int n = static_cast<int>(y.size());
        Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), yerr(n);

        double t = t0;
        f(t, y, k1);
        long evals = 1;
        double h = initial_step(f, t, y, k1, t1 - t0);

        long accepted = 0, rejected = 0;
        double facold = 1e-4;
        for (long step = 0; step < cfg_.max_steps; ++step) {
            if (t + h > t1) h = t1 - t;
            if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(t), 1.0))
                throw NumericError("Dopri5: step size underflow at t=" + std::to_string(t));

            ytmp = y + h * (A21 * k1);
            f(t + C2 * h, ytmp, k2);
            ytmp = y + h * (A31 * k1 + A32 * k2);
            f(t + C3 * h, ytmp, k3);
            ytmp = y + h * (A41 * k1 + A42 * k2 + A43 * k3);
            f(t + C4 * h, ytmp, k4);
            ytmp = y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4);
            f(t + C5 * h, ytmp, k5);
            ytmp = y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5);
            f(t + h, ytmp, k6);
            ynew = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6);
            f(t + h, ynew, k7);
            evals += 6;

            yerr = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
            double err = 0.0;
            for (int i = 0; i < n; ++i) {
                const double sk = cfg_.atol + cfg_.rtol * std::max(std::fabs(y[i]), std::fabs(ynew[i]));
                const double e = yerr[i] / sk;
                err += e * e;
            }
            err = std::sqrt(err / std::max(n, 1));

            if (err <= 1.0) {
                // PI step-size stabilisation (Hairer beta = 0.04)
                const double fac = std::pow(err > 0 ? err : 1e-10, 0.2 - 0.04 * 0.75) /
                                   std::pow(facold, 0.04);
                double scale = 0.9 / fac;
                scale = std::min(10.0, std::max(0.2, scale));
                facold = std::max(err, 1e-4);
                t += h;
                y.swap(ynew);
                k1.swap(k7);
                ++accepted;
                if (t >= t1) {
                    if (stats) {
                        stats->accepted += accepted;
                        stats->rejected += rejected;
                        stats->field_evals += evals;
                    }
                    return y;
                }
                h *= scale;
            } else {
                double scale = 0.9 * std::pow(err, -0.2);
                scale = std::max(0.2, scale);
                h *= scale;
                ++rejected;
            }
        }
        throw NumericError("Dopri5: max_steps exceeded (t=" + std::to_string(t) + ")");
    }

    // Integrates through a sorted list of output times, recording y at each.
    // Output times become segment endpoints, so values at nodes carry no
    // interpolation error.
    Mat integrate_at(const OdeField& f, Vec y, double t0, const std::vector<double>& times,
                     SolverStats* stats = nullptr) const {
        Mat out(static_cast<int>(times.size()), y.size());
        double t = t0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (times[i] < t - 1e-12) throw DomainError("integrate_at: times must be sorted and >= t0");
            if (times[i] > t) {
                y = integrate(f, std::move(y), t, times[i], stats);
                t = times[i];
            }
            out.row(static_cast<int>(i)) = y.transpose();
        }
        return out;
    }

private:
    double initial_step(const OdeField& f, double t0, const Vec& y0, const Vec& f0,
                        double span) const {
        const double d0 = y0.norm() / std::sqrt(static_cast<double>(std::max<long>(y0.size(), 1)));
        const double d1 = f0.norm() / std::sqrt(static_cast<double>(std::max<long>(f0.size(), 1)));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, span);
        Vec y1 = y0 + h0 * f0;
        Vec f1(y0.size());
        f(t0 + h0, y1, f1);
        const double d2 = (f1 - f0).norm() / std::max(h0, 1e-300);
        double h1;
        if (std::max(d1, d2) <= 1e-15) {
            h1 = std::max(1e-6, h0 * 1e-3);
        } else {
            h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
        }
        return std::min({100.0 * h0, h1, span});
    }

    static constexpr double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9;
    static constexpr double A21 = 1.0 / 5;
    static constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
    static constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
    static constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561,
                            A54 = -212.0 / 729;
    static constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247,
                            A64 = 49.0 / 176, A65 = -5103.0 / 18656;
    static constexpr double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192,
                            A75 = -2187.0 / 6784, A76 = 11.0 / 84;
    static constexpr double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920,
                            E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40;

    SolverConfig cfg_;
};

}  // namespace hsbi
