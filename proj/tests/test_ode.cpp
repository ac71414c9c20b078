#include <doctest.h>

#include "hsbi/ode.hpp"

using namespace hsbi;

TEST_CASE("dopri5 solves the exponential ODE to tolerance") {
    Dopri5 solver({1e-5, 1e-5, 100000});
    Vec y0(1);
    y0 << 1.0;
    const Vec y1 = solver.integrate([](double, const Vec& y, Vec& dy) { dy = y; }, y0, 0.0, 1.0);
    CHECK(std::fabs(y1[0] - std::exp(1.0)) / std::exp(1.0) < 1e-5);
}

TEST_CASE("zero field is the identity map") {
    Dopri5 solver;
    Vec y0(3);
    y0 << 1.0, -2.0, 0.5;
    const Vec y1 =
        solver.integrate([](double, const Vec&, Vec& dy) { dy.setZero(); }, y0, 0.0, 1.0);
    CHECK((y1 - y0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear field scales by e over a unit horizon") {
    Dopri5 solver({1e-7, 1e-7, 100000});
    Vec y0(2);
    y0 << 0.3, -1.4;
    const Vec y1 = solver.integrate([](double, const Vec& y, Vec& dy) { dy = y; }, y0, 0.0, 1.0);
    for (int i = 0; i < 2; ++i)
        CHECK(y1[i] == doctest::Approx(std::exp(1.0) * y0[i]).epsilon(1e-5));
}

TEST_CASE("halving tolerances changes the answer by less than the coarse tolerance") {
    Vec y0(1);
    y0 << 1.0;
    auto field = [](double t, const Vec& y, Vec& dy) { dy[0] = std::sin(3.0 * t) * y[0]; };
    const double coarse_tol = 1e-5;
    Dopri5 coarse({coarse_tol, coarse_tol, 100000});
    Dopri5 fine({coarse_tol / 2, coarse_tol / 2, 100000});
    const double a = coarse.integrate(field, y0, 0.0, 2.0)[0];
    const double b = fine.integrate(field, y0, 0.0, 2.0)[0];
    CHECK(std::fabs(a - b) < coarse_tol);
}

TEST_CASE("integrate_at lands exactly on requested nodes") {
    Dopri5 solver({1e-9, 1e-9, 100000});
    Vec y0(1);
    y0 << 1.0;
    const std::vector<double> times = {0.25, 0.5, 1.0, 1.5};
    const Mat out =
        solver.integrate_at([](double, const Vec& y, Vec& dy) { dy = y; }, y0, 0.0, times);
    for (std::size_t i = 0; i < times.size(); ++i)
        CHECK(out(static_cast<long>(i), 0) ==
              doctest::Approx(std::exp(times[i])).epsilon(1e-7));
}

TEST_CASE("solver failure modes raise numeric errors") {
    Dopri5 tiny_budget({1e-12, 1e-12, 5});
    Vec y0(1);
    y0 << 1.0;
    CHECK_THROWS_AS(
        tiny_budget.integrate([](double, const Vec& y, Vec& dy) { dy = y; }, y0, 0.0, 10.0),
        NumericError);
    CHECK_THROWS_AS(Dopri5({-1.0, 1e-5, 10}), DomainError);
}

TEST_CASE("field evaluation counts are tracked") {
    Dopri5 solver;
    SolverStats stats;
    Vec y0(1);
    y0 << 1.0;
    solver.integrate([](double, const Vec& y, Vec& dy) { dy = y; }, y0, 0.0, 1.0, &stats);
    CHECK(stats.field_evals > 6);
    CHECK(stats.accepted > 0);
}
