#pragma once

#include <cmath>

#include "hsbi/errors.hpp"

namespace hsbi {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Bijector between a constrained prior support and the real line, applied
// per dimension. forward: constrained -> unconstrained. log_det_jacobian is
// the log-derivative of the inverse map at an unconstrained point.
struct ParameterTransform {
    enum class Kind { Identity, Log, ScaledLogit };

    Kind kind = Kind::Identity;
    double lo = 0.0;
    double hi = 1.0;

    static ParameterTransform identity() { return {Kind::Identity, 0.0, 0.0}; }
    static ParameterTransform log_positive() { return {Kind::Log, 0.0, 0.0}; }
    static ParameterTransform scaled_logit(double a, double b) {
        if (!(a < b)) throw DomainError("scaled_logit: need lo < hi");
        return {Kind::ScaledLogit, a, b};
    }

    double forward(double x) const {
        switch (kind) {
            case Kind::Identity:
                return x;
            case Kind::Log:
                if (!(x > 0.0)) throw DomainError("log transform: input must be positive");
                return std::log(x);
            case Kind::ScaledLogit: {
                if (!(x > lo && x < hi))
                    throw DomainError("scaled_logit: input outside open interval");
                // clamp away from the endpoints so sampled extremes stay finite
                const double eps = 1e-12 * std::max(1.0, hi - lo);
                const double xc = std::min(std::max(x, lo + eps), hi - eps);
                const double z = (xc - lo) / (hi - lo);
                return std::log(z) - std::log1p(-z);
            }
        }
        return x;
    }

    double inverse(double u) const {
        switch (kind) {
            case Kind::Identity:
                return u;
            case Kind::Log:
                return std::exp(u);
            case Kind::ScaledLogit:
                return lo + (hi - lo) * sigmoid(u);
        }
        return u;
    }

    double log_det_jacobian(double u) const {
        switch (kind) {
            case Kind::Identity:
                return 0.0;
            case Kind::Log:
                return u;
            case Kind::ScaledLogit:
                return std::log(hi - lo) - softplus(u) - softplus(-u);
        }
        return 0.0;
    }
};

}  // namespace hsbi
