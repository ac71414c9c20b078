#include "hsbi/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hsbi/ode.hpp"

namespace hsbi {

namespace {

namespace tc = task_constants;

Vec gaussian_linear_sim(const Vec& theta_g, const Vec& eta_s, const std::vector<double>&,
                        std::uint64_t seed) {
    const double sigma = theta_g[0];
    if (!(sigma > 0.0)) throw DomainError("gaussian_linear: sigma must be positive");
    Rng rng(seed);
    Vec y(eta_s.size());
    for (int i = 0; i < eta_s.size(); ++i) y[i] = eta_s[i] + sigma * rng.normal();
    return y;
}

Vec gaussian_mixture_sim(const Vec&, const Vec& eta_s, const std::vector<double>&,
                         std::uint64_t seed) {
    Rng rng(seed);
    const double sd = rng.uniform01() < 0.5 ? 1.0 : 0.1;
    Vec y(1);
    y[0] = eta_s[0] + sd * rng.normal();
    return y;
}

Vec sir_sim(const Vec& theta_g, const Vec& eta_s, const std::vector<double>&,
            std::uint64_t seed) {
    const double gamma = theta_g[0];
    const double beta = eta_s[0];
    if (!(gamma > 0.0) || !(beta > 0.0)) throw DomainError("sir: rates must be positive");
    const double N = tc::kSirPopulation;
    Vec y0(3);
    y0 << N - tc::kSirInitialInfected, tc::kSirInitialInfected, 0.0;
    auto field = [&](double, const Vec& y, Vec& dy) {
        const double si = beta * y[0] * y[1] / N;
        dy[0] = -si;
        dy[1] = si - gamma * y[1];
        dy[2] = gamma * y[1];
    };
    std::vector<double> times(tc::kSirObsPoints);
    for (int k = 0; k < tc::kSirObsPoints; ++k)
        times[static_cast<std::size_t>(k)] =
            tc::kSirHorizonDays * static_cast<double>(k + 1) / tc::kSirObsPoints;
    Dopri5 solver({1e-8, 1e-8, 200000});
    Mat states;
    try {
        states = solver.integrate_at(field, y0, 0.0, times);
    } catch (const NumericError& e) {
        throw SimulationError(std::string("sir: ODE solve failed (") + e.what() + ")");
    }
    Rng rng(seed);
    Vec y(tc::kSirObsPoints);
    for (int k = 0; k < tc::kSirObsPoints; ++k) {
        const double frac = std::clamp(states(k, 1) / N, 0.0, 1.0);
        y[k] = static_cast<double>(rng.binomial(tc::kSirBinomialTrials, frac));
    }
    return y;
}

Vec slcp_sim(const Vec& theta_g, const Vec& eta_s, const std::vector<double>&,
             std::uint64_t seed) {
    const double s1 = theta_g[0], s2 = theta_g[1], rho = theta_g[2];
    const double v1 = s1 * s1;  // sigma_1^2
    const double v2 = s2 * s2;
    const double c = std::tanh(rho) * v1 * v2;
    // Sigma = [[v1^2, c], [c, v2^2]]; Cholesky in closed form
    const double l11 = v1;
    if (!(l11 > 0.0)) throw DomainError("slcp: degenerate covariance (sigma_1 = 0)");
    const double l21 = c / l11;
    const double rem = v2 * v2 - l21 * l21;
    if (!(rem > 0.0)) throw DomainError("slcp: degenerate covariance (sigma_2 near 0)");
    const double l22 = std::sqrt(rem);
    Rng rng(seed);
    Vec y(2 * tc::kSlcpDrawsPerSite);
    for (int j = 0; j < tc::kSlcpDrawsPerSite; ++j) {
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        y[2 * j] = eta_s[0] + l11 * z1;
        y[2 * j + 1] = eta_s[1] + l21 * z1 + l22 * z2;
    }
    return y;
}

Vec two_moons_sim(const Vec&, const Vec& eta_s, const std::vector<double>&, std::uint64_t seed) {
    Rng rng(seed);
    const double a = rng.uniform(-M_PI / 2.0, M_PI / 2.0);
    const double r = rng.normal(0.1, 0.01);
    const double px = r * std::cos(a) + 0.25;
    const double py = r * std::sin(a);
    const double sum = eta_s[0] + eta_s[1];
    const double diff = -eta_s[0] + eta_s[1];
    Vec y(2);
    y[0] = px - std::fabs(sum) / std::sqrt(2.0);
    y[1] = py + diff / std::sqrt(2.0);
    return y;
}

Vec seir_sim(const Vec& theta_g, const Vec& eta_s, const std::vector<double>& schedule,
             std::uint64_t seed) {
    const double beta0 = theta_g[0];
    const double amp = eta_s[0];
    if (schedule.empty()) throw DomainError("seir: observation schedule must be non-empty");
    const double N = tc::kSeirPopulation;
    const double alpha = tc::kSeirIncubationRate;
    const double gamma = tc::kSeirRecoveryRate;
    const double phi = tc::kSeirSeasonalPhase;
    Vec y0(4);
    y0 << N - tc::kSeirInitialExposed, tc::kSeirInitialExposed, 0.0, 0.0;
    auto field = [&](double t, const Vec& y, Vec& dy) {
        const double beta_t = beta0 * (1.0 + amp * std::sin(2.0 * M_PI * t / 365.0 - phi));
        const double lambda = beta_t * y[2] / N;
        dy[0] = -lambda * y[0];
        dy[1] = lambda * y[0] - alpha * y[1];
        dy[2] = alpha * y[1] - gamma * y[2];
        dy[3] = gamma * y[2];
    };
    Dopri5 solver({1e-8, 1e-8, 400000});
    Mat states;
    try {
        states = solver.integrate_at(field, y0, 0.0, schedule);
    } catch (const NumericError& e) {
        throw SimulationError(std::string("seir: ODE solve failed (") + e.what() + ")");
    }
    Rng rng(seed);
    Vec y(static_cast<long>(schedule.size()));
    for (long k = 0; k < y.size(); ++k) {
        const double rate = std::max(alpha * states(k, 1), 0.0);
        y[k] = static_cast<double>(rng.poisson(rate));
    }
    return y;
}

HierarchicalModelSpec make_gaussian_linear(bool uniform_locals) {
    HierarchicalModelSpec m;
    m.name = uniform_locals ? "gaussian_linear_uniform" : "gaussian_linear";
    m.globals = {{"sigma", 1, {Dist::half_normal(1.0)}}};
    m.local_name = "mu";
    m.d_local = 5;
    if (uniform_locals) {
        m.local_prior = [](const Vec&, Rng& rng) {
            Vec eta(5);
            for (int i = 0; i < 5; ++i) eta[i] = rng.uniform(-10.0, 10.0);
            return eta;
        };
        m.local_transforms.assign(5, ParameterTransform::scaled_logit(-10.0, 10.0));
        m.support_check = [](const Vec&, const Vec& eta) {
            return (eta.array() >= -10.0).all() && (eta.array() <= 10.0).all();
        };
    } else {
        m.local_prior = [](const Vec&, Rng& rng) {
            Vec eta(5);
            for (int i = 0; i < 5; ++i) eta[i] = rng.normal();
            return eta;
        };
        m.local_transforms.assign(5, ParameterTransform::identity());
        m.support_check = [](const Vec&, const Vec& eta) { return eta.allFinite(); };
    }
    m.simulator = gaussian_linear_sim;
    m.d_obs = 5;
    return m;
}

HierarchicalModelSpec make_gaussian_mixture() {
    HierarchicalModelSpec m;
    m.name = "gaussian_mixture";
    m.globals = {{"mu_g", 1, {Dist::uniform(-10.0, 10.0)}},
                 {"sigma_g", 1, {Dist::half_normal(1.0)}}};
    m.local_name = "eta";
    m.d_local = 1;
    m.local_prior = [](const Vec& theta_g, Rng& rng) {
        Vec eta(1);
        eta[0] = rng.trunc_normal(theta_g[0], theta_g[1], -10.0, 10.0);
        return eta;
    };
    m.local_transforms = {ParameterTransform::scaled_logit(-10.0, 10.0)};
    m.support_check = [](const Vec&, const Vec& eta) {
        return eta[0] >= -10.0 && eta[0] <= 10.0;
    };
    m.simulator = gaussian_mixture_sim;
    m.d_obs = 1;
    return m;
}

HierarchicalModelSpec make_sir() {
    HierarchicalModelSpec m;
    m.name = "sir";
    m.globals = {{"gamma", 1, {Dist::log_normal(std::log(0.125), 0.2)}}};
    m.local_name = "beta";
    m.d_local = 1;
    m.local_prior = [](const Vec&, Rng& rng) {
        Vec eta(1);
        eta[0] = rng.log_normal(std::log(0.4), 0.5);
        return eta;
    };
    m.local_transforms = {ParameterTransform::log_positive()};
    m.support_check = [](const Vec&, const Vec& eta) { return eta[0] > 0.0; };
    m.simulator = sir_sim;
    m.d_obs = tc::kSirObsPoints;
    m.obs_log1p = true;
    return m;
}

HierarchicalModelSpec make_slcp() {
    HierarchicalModelSpec m;
    m.name = "slcp";
    m.globals = {{"sigma_1", 1, {Dist::uniform(-3.0, 3.0)}},
                 {"sigma_2", 1, {Dist::uniform(-3.0, 3.0)}},
                 {"rho", 1, {Dist::uniform(-3.0, 3.0)}}};
    m.local_name = "m";
    m.d_local = 2;
    m.local_prior = [](const Vec&, Rng& rng) {
        Vec eta(2);
        eta[0] = rng.uniform(-3.0, 3.0);
        eta[1] = rng.uniform(-3.0, 3.0);
        return eta;
    };
    m.local_transforms.assign(2, ParameterTransform::scaled_logit(-3.0, 3.0));
    m.support_check = [](const Vec&, const Vec& eta) {
        return (eta.array() >= -3.0).all() && (eta.array() <= 3.0).all();
    };
    m.simulator = slcp_sim;
    m.d_obs = 2 * tc::kSlcpDrawsPerSite;
    return m;
}

HierarchicalModelSpec make_two_moons() {
    HierarchicalModelSpec m;
    m.name = "two_moons";
    m.globals = {{"mu_g", 2, {Dist::uniform(-1.0, 1.0), Dist::uniform(-1.0, 1.0)}},
                 {"sigma_g", 2, {Dist::uniform(0.1, 3.0), Dist::uniform(0.1, 3.0)}}};
    m.local_name = "eta";
    m.d_local = 2;
    m.local_prior = [](const Vec& theta_g, Rng& rng) {
        Vec eta(2);
        eta[0] = rng.trunc_normal(theta_g[0], theta_g[2], -1.0, 1.0);
        eta[1] = rng.trunc_normal(theta_g[1], theta_g[3], -1.0, 1.0);
        return eta;
    };
    m.local_transforms.assign(2, ParameterTransform::scaled_logit(-1.0, 1.0));
    m.support_check = [](const Vec&, const Vec& eta) {
        return (eta.array() >= -1.0).all() && (eta.array() <= 1.0).all();
    };
    m.simulator = two_moons_sim;
    m.d_obs = 2;
    return m;
}

HierarchicalModelSpec make_seir() {
    HierarchicalModelSpec m;
    m.name = "seir";
    m.globals = {{"beta_0", 1, {Dist::uniform(0.1, 2.0)}}};
    m.local_name = "A";
    m.d_local = 1;
    m.local_prior = [](const Vec&, Rng& rng) {
        Vec eta(1);
        eta[0] = rng.uniform(0.2, 0.5);
        return eta;
    };
    m.local_transforms = {ParameterTransform::scaled_logit(0.2, 0.5)};
    m.support_check = [](const Vec& theta_g, const Vec& eta) {
        return theta_g[0] >= 0.1 && theta_g[0] <= 2.0 && eta[0] >= 0.2 && eta[0] <= 0.5;
    };
    m.simulator = seir_sim;
    m.functional = true;
    m.points_per_site = tc::kSeirPointsPerSite;
    m.horizon = tc::kSeirHorizonDays;
    m.d_obs = tc::kSeirPointsPerSite;
    m.obs_log1p = true;
    return m;
}

const std::map<std::string, HierarchicalModelSpec>& registry() {
    static const std::map<std::string, HierarchicalModelSpec> reg = [] {
        std::map<std::string, HierarchicalModelSpec> r;
        for (auto&& m : {make_gaussian_linear(false), make_gaussian_linear(true),
                         make_gaussian_mixture(), make_sir(), make_slcp(), make_two_moons(),
                         make_seir()})
            r.emplace(m.name, std::move(m));
        return r;
    }();
    return reg;
}

}  // namespace

const HierarchicalModelSpec& get_task(const std::string& name) {
    const auto& reg = registry();
    auto it = reg.find(name);
    if (it == reg.end()) {
        std::string known;
        for (const auto& [k, v] : reg) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown task '" + name + "'; available: " + known);
    }
    return it->second;
}

const HierarchicalModelSpec& get_task(TaskId id) {
    switch (id) {
        case TaskId::GaussianLinear: return get_task("gaussian_linear");
        case TaskId::GaussianLinearUniform: return get_task("gaussian_linear_uniform");
        case TaskId::GaussianMixture: return get_task("gaussian_mixture");
        case TaskId::SIR: return get_task("sir");
        case TaskId::SLCP: return get_task("slcp");
        case TaskId::TwoMoons: return get_task("two_moons");
        case TaskId::SEIR: return get_task("seir");
    }
    throw ConfigError("unknown task id");
}

std::vector<std::string> task_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : registry()) names.push_back(k);
    return names;
}

TaskId task_id_from_name(const std::string& name) {
    if (name == "gaussian_linear") return TaskId::GaussianLinear;
    if (name == "gaussian_linear_uniform") return TaskId::GaussianLinearUniform;
    if (name == "gaussian_mixture") return TaskId::GaussianMixture;
    if (name == "sir") return TaskId::SIR;
    if (name == "slcp") return TaskId::SLCP;
    if (name == "two_moons") return TaskId::TwoMoons;
    if (name == "seir") return TaskId::SEIR;
    get_task(name);  // throws with the registry listing
    throw ConfigError("unreachable");
}

std::vector<double> sample_schedule(const HierarchicalModelSpec&, int n_points, double horizon,
                                    std::uint64_t seed) {
    if (n_points < 1) throw DomainError("sample_schedule: n_points must be >= 1");
    Rng rng(seed);
    std::vector<double> times(static_cast<std::size_t>(n_points));
    for (auto& t : times) t = rng.uniform(0.0, horizon);
    std::sort(times.begin(), times.end());
    return times;
}

std::vector<double> default_schedule(const HierarchicalModelSpec& model, std::uint64_t seed) {
    if (!model.functional) return {};
    return sample_schedule(model, model.points_per_site, model.horizon, seed);
}

}  // namespace hsbi
