#include <doctest.h>

#include "hsbi/model.hpp"
#include "hsbi/tasks.hpp"

using namespace hsbi;

TEST_CASE("transform catalogue fixed points") {
    auto log_tf = ParameterTransform::log_positive();
    CHECK(log_tf.forward(1.0) == doctest::Approx(0.0));
    auto logit = ParameterTransform::scaled_logit(-10.0, 10.0);
    CHECK(logit.forward(0.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(logit.inverse(0.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("boundary inputs raise domain errors") {
    auto logit = ParameterTransform::scaled_logit(-1.0, 1.0);
    CHECK_THROWS_AS(logit.forward(-1.0), DomainError);
    CHECK_THROWS_AS(logit.forward(1.0), DomainError);
    CHECK_THROWS_AS(logit.forward(1.5), DomainError);
    auto log_tf = ParameterTransform::log_positive();
    CHECK_THROWS_AS(log_tf.forward(0.0), DomainError);
    CHECK_THROWS_AS(log_tf.forward(-2.0), DomainError);
}

TEST_CASE("round trip of 1000 prior draws per task stays within 1e-9") {
    for (const auto& name : task_names()) {
        const auto& model = get_task(name);
        double max_err = 0.0;
        for (int i = 0; i < 1000 / 4; ++i) {
            auto [theta_g, eta] = sample_prior(model, 4, derive_seed(99, i));
            const Vec u = to_unconstrained(model, theta_g, eta);
            auto [tg2, eta2] = to_constrained(model, u, 4);
            max_err = std::max(max_err, (theta_g - tg2).cwiseAbs().maxCoeff());
            max_err = std::max(max_err, (eta - eta2).cwiseAbs().maxCoeff());
        }
        INFO("task ", name);
        CHECK(max_err < 1e-9);
    }
}

TEST_CASE("log_det_jacobian matches finite differences of the inverse map") {
    const double h = 1e-6;
    std::vector<ParameterTransform> tfs = {
        ParameterTransform::identity(), ParameterTransform::log_positive(),
        ParameterTransform::scaled_logit(-10.0, 10.0), ParameterTransform::scaled_logit(0.2, 0.5)};
    Rng rng(5);
    for (const auto& tf : tfs) {
        for (int i = 0; i < 200; ++i) {
            const double u = rng.normal(0.0, 2.0);
            const double fd = (tf.inverse(u + h) - tf.inverse(u - h)) / (2.0 * h);
            if (tf.kind == ParameterTransform::Kind::Identity) {
                CHECK(tf.log_det_jacobian(u) == 0.0);
                continue;
            }
            const double ldj = tf.log_det_jacobian(u);
            CHECK(ldj == doctest::Approx(std::log(std::max(fd, 1e-300))).epsilon(1e-5));
        }
    }
}

TEST_CASE("forward maps prior support onto the real line") {
    auto logit = ParameterTransform::scaled_logit(0.2, 0.5);
    CHECK(logit.forward(0.2 + 1e-9) < -10.0);
    CHECK(logit.forward(0.5 - 1e-9) > 10.0);
    CHECK(std::isfinite(logit.forward(0.2 + 1e-13)));  // clamped, not infinite
}
