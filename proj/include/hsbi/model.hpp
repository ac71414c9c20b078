#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hsbi/errors.hpp"
#include "hsbi/rng.hpp"
#include "hsbi/transforms.hpp"

namespace hsbi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Wall-clock and call accounting. Simulation budget N counts true-simulator
// calls only; surrogate draws are tracked separately and never charged.
struct BudgetLedger {
    long true_simulator_calls = 0;
    long surrogate_draws = 0;
    double t_sim_seconds = 0.0;
    double t_like_seconds = 0.0;

    void merge(const BudgetLedger& other) {
        true_simulator_calls += other.true_simulator_calls;
        surrogate_draws += other.surrogate_draws;
        t_sim_seconds += other.t_sim_seconds;
        t_like_seconds += other.t_like_seconds;
    }
};

// Scalar prior component; a variable's prior is a list of these, one per dim.
struct Dist {
    enum class Kind { Normal, HalfNormal, LogNormal, Uniform, TruncNormal };

    Kind kind = Kind::Normal;
    double p1 = 0.0;  // mean / log-mean / sd (HalfNormal)
    double p2 = 1.0;  // sd / log-sd
    double lo = 0.0;
    double hi = 1.0;

    static Dist normal(double mean, double sd) { return {Kind::Normal, mean, sd, 0, 0}; }
    static Dist half_normal(double sd) { return {Kind::HalfNormal, sd, 0, 0, 0}; }
    static Dist log_normal(double mu_log, double sd_log) {
        return {Kind::LogNormal, mu_log, sd_log, 0, 0};
    }
    static Dist uniform(double a, double b) { return {Kind::Uniform, 0, 0, a, b}; }
    static Dist trunc_normal(double mean, double sd, double a, double b) {
        return {Kind::TruncNormal, mean, sd, a, b};
    }

    double sample(Rng& rng) const {
        switch (kind) {
            case Kind::Normal: return rng.normal(p1, p2);
            case Kind::HalfNormal: return rng.half_normal(p1);
            case Kind::LogNormal: return rng.log_normal(p1, p2);
            case Kind::Uniform: return rng.uniform(lo, hi);
            case Kind::TruncNormal: return rng.trunc_normal(p1, p2, lo, hi);
        }
        return 0.0;
    }

    ParameterTransform transform() const {
        switch (kind) {
            case Kind::Normal: return ParameterTransform::identity();
            case Kind::HalfNormal: return ParameterTransform::log_positive();
            case Kind::LogNormal: return ParameterTransform::log_positive();
            case Kind::Uniform: return ParameterTransform::scaled_logit(lo, hi);
            case Kind::TruncNormal: return ParameterTransform::scaled_logit(lo, hi);
        }
        return ParameterTransform::identity();
    }

    // closed at finite bounds: simulators accept the endpoints even though
    // the transforms clamp them away
    bool in_support(double x) const {
        switch (kind) {
            case Kind::Normal: return std::isfinite(x);
            case Kind::HalfNormal: return x > 0.0;
            case Kind::LogNormal: return x > 0.0;
            case Kind::Uniform: return x >= lo && x <= hi;
            case Kind::TruncNormal: return x >= lo && x <= hi;
        }
        return false;
    }
};

// One model variable; in the token layout each instance of a variable
// (per site for locals/observations) becomes one token.
struct VariableSpec {
    std::string name;
    int dim = 1;
    std::vector<Dist> prior;  // per dim; globals only
};

// eta_s | theta_g sampler.
using LocalPriorFn = std::function<Vec(const Vec& theta_g, Rng& rng)>;

// Pure stochastic map (theta_g, eta_s, schedule, seed) -> y_s.
using SimulatorFn =
    std::function<Vec(const Vec& theta_g, const Vec& eta_s, const std::vector<double>& schedule,
                      std::uint64_t seed)>;

// Generative contract of a two-level hierarchical model: global prior,
// exchangeable per-site local prior, per-site simulator, and an optional
// functional observation schedule.
struct HierarchicalModelSpec {
    std::string name;
    std::vector<VariableSpec> globals;
    std::string local_name = "eta";
    int d_local = 1;
    LocalPriorFn local_prior;
    std::vector<ParameterTransform> local_transforms;
    std::function<bool(const Vec& theta_g, const Vec& eta_s)> support_check;
    SimulatorFn simulator;

    std::string obs_name = "y";
    int d_obs = 1;               // per-site width; functional tasks: default points per site
    bool functional = false;     // observations recorded at continuous input coordinates
    int points_per_site = 0;
    double horizon = 0.0;
    bool obs_log1p = false;      // count-valued observations embedded via log1p

    int d_global() const {
        int d = 0;
        for (const auto& v : globals) d += v.dim;
        return d;
    }

    std::vector<ParameterTransform> global_transforms() const {
        std::vector<ParameterTransform> out;
        for (const auto& v : globals)
            for (const auto& d : v.prior) out.push_back(d.transform());
        return out;
    }
};

inline std::pair<Vec, Mat> sample_prior(const HierarchicalModelSpec& model, int n_sites,
                                        std::uint64_t seed) {
    if (n_sites < 1) throw DomainError("sample_prior: n_sites must be >= 1");
    Rng g_rng(derive_seed(seed, 0));
    Vec theta_g(model.d_global());
    int k = 0;
    for (const auto& v : model.globals)
        for (const auto& d : v.prior) theta_g[k++] = d.sample(g_rng);
    Mat eta(n_sites, model.d_local);
    for (int s = 0; s < n_sites; ++s) {
        Rng l_rng(derive_seed(seed, 1, static_cast<std::uint64_t>(s)));
        eta.row(s) = model.local_prior(theta_g, l_rng).transpose();
    }
    return {theta_g, eta};
}

inline Vec simulate_site(const HierarchicalModelSpec& model, const Vec& theta_g, const Vec& eta_s,
                         const std::vector<double>& schedule, std::uint64_t seed,
                         BudgetLedger* ledger = nullptr) {
    if (theta_g.size() != model.d_global() || eta_s.size() != model.d_local)
        throw LayoutError("simulate_site: parameter shape mismatch for task " + model.name);
    int k = 0;
    for (const auto& v : model.globals)
        for (const auto& d : v.prior) {
            if (!d.in_support(theta_g[k]))
                throw DomainError("simulate_site: global parameter " + v.name +
                                  " outside prior support");
            ++k;
        }
    if (model.support_check && !model.support_check(theta_g, eta_s))
        throw DomainError("simulate_site: local parameters outside prior support");
    if (model.functional) {
        for (double t : schedule)
            if (t < 0.0 || t > model.horizon)
                throw DomainError("simulate_site: schedule point outside [0, horizon]");
    }
    Vec y = model.simulator(theta_g, eta_s, schedule, seed);
    if (ledger) ledger->true_simulator_calls += 1;
    return y;
}

// Flattened unconstrained layout: [theta_g; eta_1; ...; eta_{n_s}].
inline Vec to_unconstrained(const HierarchicalModelSpec& model, const Vec& theta_g,
                            const Mat& eta) {
    const int d_g = model.d_global();
    const int n_sites = static_cast<int>(eta.rows());
    Vec u(d_g + n_sites * model.d_local);
    const auto g_tf = model.global_transforms();
    for (int i = 0; i < d_g; ++i) u[i] = g_tf[static_cast<std::size_t>(i)].forward(theta_g[i]);
    for (int s = 0; s < n_sites; ++s)
        for (int j = 0; j < model.d_local; ++j)
            u[d_g + s * model.d_local + j] =
                model.local_transforms[static_cast<std::size_t>(j)].forward(eta(s, j));
    return u;
}

inline std::pair<Vec, Mat> to_constrained(const HierarchicalModelSpec& model, const Vec& u,
                                          int n_sites) {
    const int d_g = model.d_global();
    if (u.size() != d_g + static_cast<long>(n_sites) * model.d_local)
        throw LayoutError("to_constrained: vector length does not match layout");
    Vec theta_g(d_g);
    const auto g_tf = model.global_transforms();
    for (int i = 0; i < d_g; ++i) theta_g[i] = g_tf[static_cast<std::size_t>(i)].inverse(u[i]);
    Mat eta(n_sites, model.d_local);
    for (int s = 0; s < n_sites; ++s)
        for (int j = 0; j < model.d_local; ++j)
            eta(s, j) = model.local_transforms[static_cast<std::size_t>(j)].inverse(
                u[d_g + s * model.d_local + j]);
    return {theta_g, eta};
}

}  // namespace hsbi
