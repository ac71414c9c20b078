#include <doctest.h>

#include "hsbi/diagnostics.hpp"

using namespace hsbi;

TEST_CASE("t_mse of constant classifiers hits the formula endpoints") {
    CHECK(lc2st_statistic(Vec::Constant(100, 0.5)) == doctest::Approx(0.0));
    CHECK(lc2st_statistic(Vec::Constant(100, 1.0)) == doctest::Approx(0.25));
    CHECK(lc2st_statistic(Vec::Constant(100, 0.0)) == doctest::Approx(0.25));
}

TEST_CASE("binary classifier separates an easy problem") {
    Rng rng(3);
    const int n = 600;
    Mat x(n, 2);
    Vec y(n);
    for (int i = 0; i < n; ++i) {
        const bool cls = i % 2 == 0;
        x(i, 0) = rng.normal(cls ? 2.0 : -2.0, 0.5);
        x(i, 1) = rng.normal(cls ? -1.0 : 1.0, 0.5);
        y[i] = cls ? 1.0 : 0.0;
    }
    ClassifierConfig cfg;
    cfg.max_epochs = 120;
    cfg.patience = 30;
    BinaryClassifier clf(2, cfg);
    clf.train(x, y, 9);
    const Vec p = clf.predict(x);
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += ((p[i] > 0.5) == (y[i] > 0.5)) ? 1 : 0;
    CHECK(correct > n * 9 / 10);
}

TEST_CASE("mmd2: identical sets give nonpositive statistic and p = 1") {
    Rng rng(5);
    Mat a(60, 2);
    for (long i = 0; i < a.rows(); ++i) {
        a(i, 0) = rng.normal();
        a(i, 1) = rng.normal();
    }
    const Mmd2Result res = mmd2_test(a, a, 100, 7);
    CHECK(res.mmd2 <= 1e-12);
    CHECK(res.p_value == doctest::Approx(1.0));
}

TEST_CASE("mmd2: separated gaussians reject at the permutation floor") {
    Rng rng(6);
    Mat a(400, 1), b(400, 1);
    for (long i = 0; i < 400; ++i) {
        a(i, 0) = rng.normal(0.0, 1.0);
        b(i, 0) = rng.normal(5.0, 1.0);
    }
    const Mmd2Result res = mmd2_test(a, b, 200, 8);
    CHECK(res.mmd2 > 0.1);
    CHECK(res.p_value <= 1.0 / 201.0 + 1e-12);
}

TEST_CASE("mmd2: zero permutations is an error") {
    Mat a = Mat::Random(10, 2), b = Mat::Random(10, 2);
    CHECK_THROWS_AS(mmd2_test(a, b, 0, 1), DiagnosticError);
}

TEST_CASE("mmd2 permutation p-values are roughly uniform under the null") {
    Rng rng(9);
    int below_half = 0;
    const int reps = 40;
    for (int rep = 0; rep < reps; ++rep) {
        Mat a(40, 1), b(40, 1);
        for (long i = 0; i < 40; ++i) {
            a(i, 0) = rng.normal();
            b(i, 0) = rng.normal();
        }
        const Mmd2Result res = mmd2_test(a, b, 60, derive_seed(10, rep));
        below_half += res.p_value <= 0.5 ? 1 : 0;
    }
    CHECK(below_half > reps / 5);
    CHECK(below_half < reps * 4 / 5);
}

TEST_CASE("tarp: calibrated linear-gaussian toy stays within the 0.1 band") {
    Rng rng(11);
    const int n_cases = 500, n_samples = 200;
    std::vector<Mat> samples;
    Mat truths(n_cases, 1);
    for (int j = 0; j < n_cases; ++j) {
        const double theta = rng.normal();
        const double y = theta + rng.normal();
        // exact posterior N(y/2, 1/2)
        truths(j, 0) = theta;
        Mat s(n_samples, 1);
        for (int k = 0; k < n_samples; ++k) s(k, 0) = rng.normal(y / 2.0, std::sqrt(0.5));
        samples.push_back(std::move(s));
    }
    const TarpResult res = tarp(samples, truths, 13);
    CHECK((res.ecp - res.alpha).cwiseAbs().maxCoeff() < 0.1);
    CHECK(res.atc < 0.05);
    CHECK(res.ks_p > 0.01);
}

TEST_CASE("tarp: samples pinned at the truth produce an extreme curve") {
    Rng rng(21);
    const int n_cases = 100;
    std::vector<Mat> samples;
    Mat truths(n_cases, 2);
    for (int j = 0; j < n_cases; ++j) {
        truths(j, 0) = rng.normal();
        truths(j, 1) = rng.normal();
        Mat s(16, 2);
        for (int k = 0; k < 16; ++k) s.row(k) = truths.row(j);
        samples.push_back(std::move(s));
    }
    const TarpResult res = tarp(samples, truths, 5);
    // every coverage value is 0, so ECP jumps to 1 immediately
    CHECK(res.ecp[0] == doctest::Approx(1.0));
    CHECK(res.atc > 0.4);
    CHECK(res.ks_p < 1e-6);
}

TEST_CASE("tarp rejects degenerate inputs") {
    std::vector<Mat> one_case = {Mat::Random(10, 2)};
    CHECK_THROWS_AS(tarp(one_case, Mat::Random(1, 2), 1), DiagnosticError);
    std::vector<Mat> flat = {Mat::Zero(10, 2), Mat::Zero(10, 2)};
    CHECK_THROWS_AS(tarp(flat, Mat::Zero(2, 2), 1), DiagnosticError);
}

TEST_CASE("factorisation oracle: eq(2) equals eq(1) for iid sites") {
    CHECK(factorisation_discrepancy(1, 1001, 3) < 1e-12);
    CHECK(factorisation_discrepancy(5, 1001, 3) < 1e-8);
    CHECK(factorisation_discrepancy(25, 1001, 4) < 1e-8);
}

TEST_CASE("factorisation oracle: shared noise breaks the iid premise") {
    FactorisationConfig corrupted;
    corrupted.shared_noise_sd = 1.0;
    CHECK(factorisation_discrepancy(5, 1001, 3, corrupted) > 1e-3);
}

TEST_CASE("cost table reproduces the telemetry arithmetic") {
    const CostReport rep = budget_report(1000, 1000, 2, 11.88, 0.00641);
    CHECK(rep.per_draw_speedup_rounded() == 1853);  // the source table prints 1852
    CHECK(rep.npe_hours_1dp() == doctest::Approx(6.6));
    CHECK(rep.lf_hours_1dp() == doctest::Approx(3.3));
    CHECK(rep.npe_seconds == doctest::Approx(1000.0 * 2 * 11.88));
    CHECK(rep.lf_seconds == doctest::Approx(1000.0 * 11.88 + 1000.0 * 2 * 0.00641));

    // t_like = t_sim degenerates to (N1 + N2 n_s) t_sim
    const CostReport same = budget_report(10, 20, 3, 2.0, 2.0);
    CHECK(same.lf_seconds == doctest::Approx((10.0 + 20.0 * 3) * 2.0));
}

TEST_CASE("posterior predictive shapes and count support") {
    const auto& m = get_task("gaussian_linear");
    Mat post(5, 1 + 2 * 5);
    Rng rng(31);
    for (long i = 0; i < post.rows(); ++i) {
        post(i, 0) = std::fabs(rng.normal()) + 0.1;
        for (long c = 1; c < post.cols(); ++c) post(i, c) = rng.normal();
    }
    BudgetLedger ledger;
    const Mat pred = posterior_predictive(m, post, 2, Vec(0), 5, &ledger);
    CHECK(pred.rows() == 5);
    CHECK(pred.cols() == 2 * 5);
    CHECK(ledger.true_simulator_calls == 10);

    // degenerate posterior at a fixed point: spread matches observation noise
    Mat degenerate(400, 11);
    for (long i = 0; i < degenerate.rows(); ++i) {
        degenerate(i, 0) = 0.5;
        for (long c = 1; c < 11; ++c) degenerate(i, c) = 1.0;
    }
    const Mat pp = posterior_predictive(m, degenerate, 2, Vec(0), 6);
    for (long c = 0; c < pp.cols(); ++c) {
        const double mean = pp.col(c).mean();
        const double var = (pp.col(c).array() - mean).square().mean();
        CHECK(mean == doctest::Approx(1.0).epsilon(0.1));
        CHECK(var == doctest::Approx(0.25).epsilon(0.2));
    }
}
