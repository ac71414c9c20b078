#include "hsbi/pipeline.hpp"

#include <chrono>

#include "hsbi/parallel.hpp"

namespace hsbi {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vec unconstrained_globals(const HierarchicalModelSpec& model, const Vec& theta_g) {
    const auto tf = model.global_transforms();
    Vec u(theta_g.size());
    for (long i = 0; i < theta_g.size(); ++i) u[i] = tf[static_cast<std::size_t>(i)].forward(theta_g[i]);
    return u;
}

Vec unconstrained_locals(const HierarchicalModelSpec& model, const Vec& eta_flat) {
    Vec u(eta_flat.size());
    const int d_l = model.d_local;
    for (long i = 0; i < eta_flat.size(); ++i)
        u[i] = model.local_transforms[static_cast<std::size_t>(i % d_l)].forward(eta_flat[i]);
    return u;
}

Vec constrained_locals(const HierarchicalModelSpec& model, const Vec& u_flat) {
    Vec x(u_flat.size());
    const int d_l = model.d_local;
    for (long i = 0; i < u_flat.size(); ++i)
        x[i] = model.local_transforms[static_cast<std::size_t>(i % d_l)].inverse(u_flat[i]);
    return x;
}

Vec constrained_globals(const HierarchicalModelSpec& model, const Vec& u) {
    const auto tf = model.global_transforms();
    Vec x(u.size());
    for (long i = 0; i < u.size(); ++i) x[i] = tf[static_cast<std::size_t>(i)].inverse(u[i]);
    return x;
}

std::vector<double> schedule_row_to_vector(const Mat& schedule, long row) {
    std::vector<double> out(static_cast<std::size_t>(schedule.cols()));
    for (long c = 0; c < schedule.cols(); ++c) out[static_cast<std::size_t>(c)] = schedule(row, c);
    return out;
}

VecX<NetScalar> zscore_cast(const Vec& raw, const Vec& mu, const Vec& sd) {
    return ((raw - mu).cwiseQuotient(sd)).cast<NetScalar>();
}

struct PreparedTraining {
    TokenLayout layout;
    ZScoreStats stats;
    FlowTrainSet<NetScalar> set;
};

// target/cond raw vectors per dataset row under a fixed layout
struct RawCase {
    Vec target;
    Vec cond;
    std::vector<double> schedule;
};

RawCase likelihood_case(const HierarchicalModelSpec& model, const Vec& theta_g, const Vec& eta_s,
                        const Vec& y_s, const std::vector<double>& schedule) {
    RawCase c;
    c.target = embed_obs(model, y_s);
    Vec ug = unconstrained_globals(model, theta_g);
    Vec ul = unconstrained_locals(model, eta_s);
    c.cond.resize(ug.size() + ul.size());
    c.cond << ug, ul;
    c.schedule = schedule;
    return c;
}

RawCase posterior_case(const HierarchicalModelSpec& model, const Vec& theta_g, const Vec& eta_flat,
                       const Vec& y_flat, const std::vector<double>& schedule) {
    RawCase c;
    Vec ug = unconstrained_globals(model, theta_g);
    Vec ul = unconstrained_locals(model, eta_flat);
    c.target.resize(ug.size() + ul.size());
    c.target << ug, ul;
    c.cond = embed_obs(model, y_flat);
    c.schedule = schedule;
    return c;
}

PreparedTraining prepare_training(const HierarchicalModelSpec& model, const TokenLayout& layout,
                                  const std::vector<RawCase>& cases, Net& net) {
    PreparedTraining prep;
    prep.layout = layout;
    ZScoreAccumulator acc;
    for (const auto& c : cases) acc.add(layout, c.target, c.cond);
    prep.stats = acc.finalize();
    const auto [t_mu, t_sd] = prep.stats.expand(layout, true);
    const auto [c_mu, c_sd] = prep.stats.expand(layout, false);
    prep.set.items.reserve(cases.size());
    prep.set.targets.reserve(cases.size());
    for (const auto& c : cases) {
        Vec t_z = (c.target - t_mu).cwiseQuotient(t_sd);
        Vec c_z = (c.cond - c_mu).cwiseQuotient(c_sd);
        TokenSequence seq = assemble_tokens(layout, t_z, c_z, c.schedule);
        prep.set.items.push_back(net.make_item(layout, seq));
        prep.set.targets.push_back(t_z.cast<NetScalar>());
    }
    return prep;
}

int dataset_points_per_site(const HierarchicalModelSpec& model, long schedule_cols, int n_sites) {
    if (!model.functional) return 0;
    if (schedule_cols % n_sites != 0)
        throw LayoutError("dataset schedule columns not divisible by site count");
    return static_cast<int>(schedule_cols / n_sites);
}

json curve_to_json(const std::vector<TrainingCurvePoint>& curve) {
    json arr = json::array();
    for (const auto& p : curve)
        arr.push_back({{"epoch", p.epoch}, {"train_loss", p.train_loss}, {"val_loss", p.val_loss}});
    return arr;
}

std::vector<TrainingCurvePoint> curve_from_json(const json& arr) {
    std::vector<TrainingCurvePoint> curve;
    for (const auto& p : arr)
        curve.push_back({p.at("epoch").get<int>(), p.at("train_loss").get<double>(),
                         p.at("val_loss").get<double>()});
    return curve;
}

}  // namespace

FlowRole Checkpoint::flow_role() const {
    if (role == "surrogate") return FlowRole::Likelihood;
    if (role == "posterior" || role == "joint") return FlowRole::Posterior;
    if (role == "pf_global") return FlowRole::PosteriorGlobal;
    if (role == "pf_local") return FlowRole::PosteriorLocal;
    throw ConfigError("checkpoint role '" + role + "' has no flow role");
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
    fs::create_directories(dir);
    json m;
    m["schema_version"] = kSchemaVersion;
    m["kind"] = "checkpoint";
    m["role"] = ckpt.role;
    m["task"] = ckpt.task;
    m["n_sites"] = ckpt.n_sites;
    m["points_per_site"] = ckpt.points_per_site;
    m["grouping_enabled"] = ckpt.grouping_enabled;
    m["seed"] = ckpt.seed;
    m["net_config"] = net_config_to_json(ckpt.net_cfg);
    m["net_shape"] = net_shape_to_json(ckpt.net->shape());
    m["zscore"] = zscore_to_json(ckpt.stats);
    m["curve"] = curve_to_json(ckpt.curve);
    m["config"] = ckpt.config_echo;
    const auto& store = ckpt.net->params();
    for (int i = 0; i < store.size(); ++i) {
        const std::string file = "param_" + std::to_string(i) + ".bin";
        m["arrays"][store.name(i)] =
            array_entry(file, "f32", store.value(i).rows(), store.value(i).cols());
        write_array(dir / file, store.value(i));
    }
    m["arrays"]["fourier_basis"] = array_entry("fourier_basis.bin", "f32",
                                               ckpt.net->fourier_basis().rows(),
                                               ckpt.net->fourier_basis().cols());
    write_array(dir / "fourier_basis.bin", ckpt.net->fourier_basis());
    write_manifest(dir, m);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const json m = read_manifest(dir);
    check_manifest(m, "checkpoint");
    Checkpoint ckpt;
    ckpt.role = m.at("role").get<std::string>();
    ckpt.task = m.at("task").get<std::string>();
    ckpt.n_sites = m.at("n_sites").get<int>();
    ckpt.points_per_site = m.at("points_per_site").get<int>();
    ckpt.grouping_enabled = m.at("grouping_enabled").get<bool>();
    ckpt.seed = m.at("seed").get<std::uint64_t>();
    ckpt.net_cfg = net_config_from_json(m.at("net_config"));
    ckpt.stats = zscore_from_json(m.at("zscore"));
    ckpt.curve = curve_from_json(m.at("curve"));
    ckpt.config_echo = m.value("config", json::object());
    const NetShape shape = net_shape_from_json(m.at("net_shape"));
    ckpt.net = std::make_shared<Net>(ckpt.net_cfg, shape);
    auto& store = ckpt.net->params();
    for (int i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        if (!m["arrays"].contains(name))
            throw FormatError("checkpoint missing array '" + name + "'");
        const auto& e = m["arrays"][name];
        const long rows = e.at("shape")[0].get<long>(), cols = e.at("shape")[1].get<long>();
        if (rows != store.value(i).rows() || cols != store.value(i).cols())
            throw FormatError("checkpoint array '" + name + "' has unexpected shape");
        store.value(i) = read_array_f32(dir / e.at("file").get<std::string>(), rows, cols);
    }
    const auto& be = m["arrays"]["fourier_basis"];
    ckpt.net->fourier_basis() = read_array_f32(dir / be.at("file").get<std::string>(),
                                               be.at("shape")[0].get<long>(),
                                               be.at("shape")[1].get<long>());
    return ckpt;
}

Checkpoint train_surrogate(const HierarchicalModelSpec& model, const SingleSiteDataset& ds,
                           const NetConfig& net_cfg, const TrainingConfig& train_cfg,
                           std::uint64_t seed) {
    if (ds.n == 0) throw TrainingError("train_surrogate: empty dataset");
    const int pts = dataset_points_per_site(model, ds.schedule.cols(), 1);
    const TokenLayout layout = build_layout(model, FlowRole::Likelihood, 1, pts);
    std::vector<RawCase> cases;
    cases.reserve(static_cast<std::size_t>(ds.n));
    for (long i = 0; i < ds.n; ++i)
        cases.push_back(likelihood_case(model, ds.theta_g.row(i).transpose(),
                                        ds.eta.row(i).transpose(), ds.y.row(i).transpose(),
                                        schedule_row_to_vector(ds.schedule, i)));
    Checkpoint ckpt;
    ckpt.role = "surrogate";
    ckpt.task = model.name;
    ckpt.n_sites = 1;
    ckpt.points_per_site = pts;
    ckpt.net_cfg = net_cfg;
    ckpt.seed = seed;
    ckpt.net = std::make_shared<Net>(net_cfg, NetShape::from_layout(layout));
    ckpt.net->init_params(seed);
    PreparedTraining prep = prepare_training(model, layout, cases, *ckpt.net);
    TrainResult res = train_flow(*ckpt.net, prep.set, train_cfg, derive_seed(seed, 0x511));
    ckpt.stats = std::move(prep.stats);
    ckpt.curve = std::move(res.curve);
    return ckpt;
}

Checkpoint train_posterior(const HierarchicalModelSpec& model, const MultiSiteDataset& ds,
                           const NetConfig& net_cfg, const TrainingConfig& train_cfg,
                           std::uint64_t seed, bool grouping_enabled, const std::string& role) {
    if (ds.n == 0) throw TrainingError("train_posterior: empty dataset");
    const int pts = dataset_points_per_site(model, ds.schedule.cols(), ds.n_sites);
    const TokenLayout layout =
        build_layout(model, FlowRole::Posterior, ds.n_sites, pts, grouping_enabled);
    std::vector<RawCase> cases;
    cases.reserve(static_cast<std::size_t>(ds.n));
    for (long i = 0; i < ds.n; ++i)
        cases.push_back(posterior_case(model, ds.theta_g.row(i).transpose(),
                                       ds.eta.row(i).transpose(), ds.y.row(i).transpose(),
                                       schedule_row_to_vector(ds.schedule, i)));
    Checkpoint ckpt;
    ckpt.role = role;
    ckpt.task = model.name;
    ckpt.n_sites = ds.n_sites;
    ckpt.points_per_site = pts;
    ckpt.grouping_enabled = grouping_enabled;
    ckpt.net_cfg = net_cfg;
    ckpt.seed = seed;
    ckpt.net = std::make_shared<Net>(net_cfg, NetShape::from_layout(layout));
    ckpt.net->init_params(seed);
    PreparedTraining prep = prepare_training(model, layout, cases, *ckpt.net);
    TrainResult res = train_flow(*ckpt.net, prep.set, train_cfg, derive_seed(seed, 0x9057));
    ckpt.stats = std::move(prep.stats);
    ckpt.curve = std::move(res.curve);
    return ckpt;
}

SurrogateSampler::SurrogateSampler(const HierarchicalModelSpec& model, const Checkpoint& ckpt,
                                   SolverConfig solver)
    : model_(&model), ckpt_(&ckpt), solver_(solver) {
    if (ckpt.flow_role() != FlowRole::Likelihood)
        throw ConfigError("SurrogateSampler requires a surrogate checkpoint");
    layout_ = build_layout(model, FlowRole::Likelihood, 1, ckpt.points_per_site,
                           ckpt.grouping_enabled);
    std::tie(target_mu_, target_sd_) = ckpt.stats.expand(layout_, true);
    std::tie(cond_mu_, cond_sd_) = ckpt.stats.expand(layout_, false);
}

Vec SurrogateSampler::draw(const Vec& theta_g, const Vec& eta_s,
                           const std::vector<double>& schedule, std::uint64_t seed,
                           BudgetLedger* ledger) const {
    Vec cond_raw(layout_.cond_dim);
    cond_raw << unconstrained_globals(*model_, theta_g), unconstrained_locals(*model_, eta_s);
    Vec cond_z = (cond_raw - cond_mu_).cwiseQuotient(cond_sd_);
    TokenSequence seq = assemble_tokens(layout_, Vec::Zero(layout_.target_dim), cond_z, schedule);
    TokenItem<NetScalar> item = ckpt_->net->make_item(layout_, seq);

    const auto t0 = std::chrono::steady_clock::now();
    Vec z;
    std::uint64_t attempt_seed = seed;
    for (int attempt = 0;; ++attempt) {
        try {
            Rng rng(derive_seed(attempt_seed, 0xBA5E));
            Vec base(layout_.target_dim);
            for (long k = 0; k < base.size(); ++k) base[k] = rng.normal();
            z = integrate_flow(*ckpt_->net, item, base, solver_);
            break;
        } catch (const NumericError& e) {
            if (attempt >= 2)
                throw SimulationError(std::string("surrogate draw failed after retries: ") +
                                      e.what());
            attempt_seed = derive_seed(attempt_seed, 0x2E72);
        }
    }
    if (ledger) {
        ledger->surrogate_draws += 1;
        ledger->t_like_seconds += seconds_since(t0);
    }
    Vec target_raw = target_mu_ + target_sd_.cwiseProduct(z);
    return unembed_obs(*model_, target_raw);
}

MultiSiteDataset generate_multi_site_dataset_with(const HierarchicalModelSpec& model,
                                                  const SiteDrawFn& draw, long n, int n_sites,
                                                  std::uint64_t seed, int points_per_site,
                                                  int workers) {
    MultiSiteDataset ds = make_multi_site_skeleton(model, n, n_sites, seed, points_per_site);
    const int pts = model.functional
                        ? (points_per_site > 0 ? points_per_site : model.points_per_site)
                        : 0;
    const int d_y = model.functional ? pts : model.d_obs;
    const int nw = worker_count(workers);
    std::vector<BudgetLedger> ledgers(static_cast<std::size_t>(nw));
    parallel_chunks(n, nw, [&](long first, long last, int w) {
        auto& ledger = ledgers[static_cast<std::size_t>(w)];
        for (long i = first; i < last; ++i) {
            const std::uint64_t row_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
            for (int s = 0; s < n_sites; ++s) {
                std::vector<double> sched;
                if (model.functional) {
                    sched.resize(static_cast<std::size_t>(pts));
                    for (int j = 0; j < pts; ++j)
                        sched[static_cast<std::size_t>(j)] =
                            ds.schedule(i, static_cast<long>(s) * pts + j);
                }
                const Vec y = draw(
                    ds.theta_g.row(i).transpose(),
                    ds.eta.row(i).segment(static_cast<long>(s) * model.d_local, model.d_local)
                        .transpose(),
                    sched, derive_seed(row_seed, 0xD2A3, static_cast<std::uint64_t>(s)), &ledger);
                ds.y.row(i).segment(static_cast<long>(s) * d_y, d_y) = y.transpose();
            }
        }
    });
    for (const auto& l : ledgers) ds.ledger.merge(l);
    ds.origin = "surrogate";
    return ds;
}

MultiSiteDataset generate_multi_site_dataset(const HierarchicalModelSpec& model,
                                             const Checkpoint& surrogate, long n, int n_sites,
                                             std::uint64_t seed, const SolverConfig& solver,
                                             int points_per_site, int workers) {
    if (points_per_site < 0) points_per_site = surrogate.points_per_site;
    SurrogateSampler sampler(model, surrogate, solver);
    return generate_multi_site_dataset_with(
        model,
        [&sampler](const Vec& tg, const Vec& es, const std::vector<double>& sched,
                   std::uint64_t s, BudgetLedger* ledger) {
            return sampler.draw(tg, es, sched, s, ledger);
        },
        n, n_sites, seed, points_per_site, workers);
}

PosteriorSampler::PosteriorSampler(const HierarchicalModelSpec& model, const Checkpoint& ckpt,
                                   SolverConfig solver)
    : model_(&model), ckpt_(&ckpt), solver_(solver) {
    if (ckpt.flow_role() != FlowRole::Posterior)
        throw ConfigError("PosteriorSampler requires a posterior or joint checkpoint");
    layout_ = build_layout(model, FlowRole::Posterior, ckpt.n_sites, ckpt.points_per_site,
                           ckpt.grouping_enabled);
    std::tie(target_mu_, target_sd_) = ckpt.stats.expand(layout_, true);
    std::tie(cond_mu_, cond_sd_) = ckpt.stats.expand(layout_, false);
}

PosteriorDraws PosteriorSampler::sample(const Vec& y_obs_flat, const Vec& schedule_flat,
                                        long n_samples, std::uint64_t seed, int workers) const {
    if (y_obs_flat.size() != layout_.cond_dim)
        throw LayoutError("posterior sample: observation length does not match the layout");
    Vec cond_z = (embed_obs(*model_, y_obs_flat) - cond_mu_).cwiseQuotient(cond_sd_);
    std::vector<double> sched(static_cast<std::size_t>(schedule_flat.size()));
    for (long i = 0; i < schedule_flat.size(); ++i) sched[static_cast<std::size_t>(i)] = schedule_flat[i];
    TokenSequence seq = assemble_tokens(layout_, Vec::Zero(layout_.target_dim), cond_z, sched);

    PosteriorDraws out;
    out.samples.resize(n_samples, layout_.target_dim);
    const int nw = worker_count(workers);
    std::vector<long> failures(static_cast<std::size_t>(nw), 0);
    parallel_chunks(n_samples, nw, [&](long first, long last, int w) {
        TokenItem<NetScalar> item = ckpt_->net->make_item(layout_, seq);
        for (long i = first; i < last; ++i) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0xBA5E));
            Vec base(layout_.target_dim);
            for (long k = 0; k < base.size(); ++k) base[k] = rng.normal();
            try {
                const Vec z = integrate_flow(*ckpt_->net, item, base, solver_);
                const Vec u = target_mu_ + target_sd_.cwiseProduct(z);
                auto [theta_g, eta] = to_constrained(*model_, u, ckpt_->n_sites);
                Vec row(layout_.target_dim);
                row.head(theta_g.size()) = theta_g;
                for (int s = 0; s < ckpt_->n_sites; ++s)
                    row.segment(theta_g.size() + static_cast<long>(s) * model_->d_local,
                                model_->d_local) = eta.row(s).transpose();
                out.samples.row(i) = row.transpose();
            } catch (const NumericError&) {
                failures[static_cast<std::size_t>(w)] += 1;
                out.samples.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
            }
        }
    });
    for (long f : failures) out.failures += f;
    if (out.failures == n_samples) throw NumericError("posterior sampling: every integration failed");
    return out;
}

PfSampler::PfSampler(const HierarchicalModelSpec& model, const Checkpoint& global_ckpt,
                     const Checkpoint& local_ckpt, SolverConfig solver)
    : model_(&model), global_ckpt_(&global_ckpt), local_ckpt_(&local_ckpt), solver_(solver) {
    if (global_ckpt.flow_role() != FlowRole::PosteriorGlobal ||
        local_ckpt.flow_role() != FlowRole::PosteriorLocal)
        throw ConfigError("PfSampler requires pf_global and pf_local checkpoints");
}

PosteriorDraws PfSampler::sample(const Vec& y_obs_flat, const Vec& schedule_flat, long n_samples,
                                 std::uint64_t seed, int workers) const {
    const int n_sites = global_ckpt_->n_sites;
    const int pts = global_ckpt_->points_per_site;
    const TokenLayout g_layout = build_layout(*model_, FlowRole::PosteriorGlobal, n_sites, pts,
                                              global_ckpt_->grouping_enabled);
    const TokenLayout l_layout = build_layout(*model_, FlowRole::PosteriorLocal, 1, pts,
                                              local_ckpt_->grouping_enabled);
    const auto [g_tmu, g_tsd] = global_ckpt_->stats.expand(g_layout, true);
    const auto [g_cmu, g_csd] = global_ckpt_->stats.expand(g_layout, false);
    const auto [l_tmu, l_tsd] = local_ckpt_->stats.expand(l_layout, true);
    const auto [l_cmu, l_csd] = local_ckpt_->stats.expand(l_layout, false);

    if (y_obs_flat.size() != g_layout.cond_dim)
        throw LayoutError("pf sample: observation length does not match the layout");
    Vec g_cond_z = (embed_obs(*model_, y_obs_flat) - g_cmu).cwiseQuotient(g_csd);
    std::vector<double> sched(static_cast<std::size_t>(schedule_flat.size()));
    for (long i = 0; i < schedule_flat.size(); ++i) sched[static_cast<std::size_t>(i)] = schedule_flat[i];
    TokenSequence g_seq = assemble_tokens(g_layout, Vec::Zero(g_layout.target_dim), g_cond_z, sched);

    const int d_g = model_->d_global();
    const int d_y = model_->functional ? pts : model_->d_obs;
    PosteriorDraws out;
    out.samples.resize(n_samples, d_g + static_cast<long>(n_sites) * model_->d_local);
    const int nw = worker_count(workers);
    std::vector<long> failures(static_cast<std::size_t>(nw), 0);
    parallel_chunks(n_samples, nw, [&](long first, long last, int w) {
        TokenItem<NetScalar> g_item = global_ckpt_->net->make_item(g_layout, g_seq);
        for (long i = first; i < last; ++i) {
            try {
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0xBA5E));
                Vec base(g_layout.target_dim);
                for (long k = 0; k < base.size(); ++k) base[k] = rng.normal();
                const Vec gz = integrate_flow(*global_ckpt_->net, g_item, base, solver_);
                const Vec ug = g_tmu + g_tsd.cwiseProduct(gz);
                out.samples.row(i).head(d_g) = constrained_globals(*model_, ug).transpose();

                for (int s = 0; s < n_sites; ++s) {
                    Vec l_cond_raw(l_layout.cond_dim);
                    Vec y_s = y_obs_flat.segment(static_cast<long>(s) * d_y, d_y);
                    l_cond_raw << ug, embed_obs(*model_, y_s);
                    Vec l_cond_z = (l_cond_raw - l_cmu).cwiseQuotient(l_csd);
                    std::vector<double> s_sched;
                    if (model_->functional) {
                        s_sched.resize(static_cast<std::size_t>(pts));
                        for (int j = 0; j < pts; ++j)
                            s_sched[static_cast<std::size_t>(j)] =
                                schedule_flat[static_cast<long>(s) * pts + j];
                    }
                    TokenSequence l_seq = assemble_tokens(l_layout, Vec::Zero(l_layout.target_dim),
                                                          l_cond_z, s_sched);
                    TokenItem<NetScalar> l_item = local_ckpt_->net->make_item(l_layout, l_seq);
                    Vec l_base(l_layout.target_dim);
                    for (long k = 0; k < l_base.size(); ++k) l_base[k] = rng.normal();
                    const Vec lz = integrate_flow(*local_ckpt_->net, l_item, l_base, solver_);
                    const Vec ul = l_tmu + l_tsd.cwiseProduct(lz);
                    out.samples.row(i).segment(d_g + static_cast<long>(s) * model_->d_local,
                                               model_->d_local) =
                        constrained_locals(*model_, ul).transpose();
                }
            } catch (const NumericError&) {
                failures[static_cast<std::size_t>(w)] += 1;
                out.samples.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
            }
        }
    });
    for (long f : failures) out.failures += f;
    if (out.failures == n_samples) throw NumericError("pf sampling: every integration failed");
    return out;
}

std::vector<int> stick_breaking_site_counts(long budget, int n_sites, std::uint64_t seed) {
    if (budget < 1) throw DomainError("stick_breaking: budget must be >= 1");
    if (n_sites < 1) throw DomainError("stick_breaking: n_sites must be >= 1");
    Rng rng(seed);
    std::vector<int> counts;
    long remaining = budget;
    while (remaining > 0) {
        const long cap = std::min<long>(n_sites, remaining);
        const long n = 1 + static_cast<long>(rng.next_u64() % static_cast<std::uint64_t>(cap));
        counts.push_back(static_cast<int>(n));
        remaining -= n;
    }
    return counts;
}

namespace {

// PF ablation: global estimator on variable-site-count simulations, local
// estimator on single-site slices conditioned on global-estimator draws.
PipelineResult run_pf(const RunOptions& opts, const HierarchicalModelSpec& model) {
    if (opts.net.arch == NetConfig::Arch::Mlp)
        throw ConfigError("pf method requires the transformer (variable token counts)");
    PipelineResult result;
    const int pts = model.functional
                        ? (opts.points_per_site > 0 ? opts.points_per_site : model.points_per_site)
                        : 0;
    const auto counts =
        stick_breaking_site_counts(opts.n_budget, opts.n_sites, derive_seed(opts.seed, 0x57C));

    // simulate variable-site-count batches
    struct Sim {
        Vec theta_g;
        Mat eta;        // n_k x d_l
        Mat y;          // n_k x d_y
        Mat schedule;   // n_k x pts
    };
    std::vector<Sim> sims(counts.size());
    BudgetLedger ledger;
    const int d_y = model.functional ? pts : model.d_obs;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const int n_k = counts[k];
        const std::uint64_t sim_seed = derive_seed(opts.seed, 0x51A7, k);
        auto [theta_g, eta] = sample_prior(model, n_k, sim_seed);
        Sim sim;
        sim.theta_g = theta_g;
        sim.eta = eta;
        sim.y.resize(n_k, d_y);
        sim.schedule.resize(n_k, pts);
        for (int s = 0; s < n_k; ++s) {
            std::vector<double> sched;
            if (model.functional) {
                sched = sample_schedule(model, pts, model.horizon,
                                        derive_seed(sim_seed, 0x5C4ED, static_cast<std::uint64_t>(s)));
                for (int j = 0; j < pts; ++j) sim.schedule(s, j) = sched[static_cast<std::size_t>(j)];
            }
            const auto t0 = std::chrono::steady_clock::now();
            sim.y.row(s) = simulate_site(model, theta_g, eta.row(s).transpose(), sched,
                                         derive_seed(sim_seed, 0x51A1, static_cast<std::uint64_t>(s)),
                                         &ledger)
                               .transpose();
            ledger.t_sim_seconds += seconds_since(t0);
        }
        sims[k] = std::move(sim);
    }

    // global estimator q(theta_g | y) over variable site counts
    const TokenLayout ceiling_layout =
        build_layout(model, FlowRole::PosteriorGlobal, opts.n_sites, pts);
    Checkpoint global_ckpt;
    global_ckpt.role = "pf_global";
    global_ckpt.task = model.name;
    global_ckpt.n_sites = opts.n_sites;
    global_ckpt.points_per_site = pts;
    global_ckpt.net_cfg = opts.net;
    global_ckpt.seed = opts.seed;
    global_ckpt.net = std::make_shared<Net>(opts.net, NetShape::from_layout(ceiling_layout));
    global_ckpt.net->init_params(derive_seed(opts.seed, 0x6708));
    {
        std::vector<TokenLayout> layouts;
        std::vector<RawCase> cases;
        ZScoreAccumulator acc;
        for (const auto& sim : sims) {
            const int n_k = static_cast<int>(sim.eta.rows());
            TokenLayout layout = build_layout(model, FlowRole::PosteriorGlobal, n_k, pts);
            RawCase c;
            c.target = unconstrained_globals(model, sim.theta_g);
            Vec y_flat(static_cast<long>(n_k) * d_y);
            for (int s = 0; s < n_k; ++s) y_flat.segment(static_cast<long>(s) * d_y, d_y) = sim.y.row(s);
            c.cond = embed_obs(model, y_flat);
            for (int s = 0; s < n_k; ++s)
                for (int j = 0; j < pts; ++j) c.schedule.push_back(sim.schedule(s, j));
            acc.add(layout, c.target, c.cond);
            layouts.push_back(std::move(layout));
            cases.push_back(std::move(c));
        }
        global_ckpt.stats = acc.finalize();
        FlowTrainSet<NetScalar> set;
        for (std::size_t k = 0; k < cases.size(); ++k) {
            const auto [t_mu, t_sd] = global_ckpt.stats.expand(layouts[k], true);
            const auto [c_mu, c_sd] = global_ckpt.stats.expand(layouts[k], false);
            Vec t_z = (cases[k].target - t_mu).cwiseQuotient(t_sd);
            Vec c_z = (cases[k].cond - c_mu).cwiseQuotient(c_sd);
            TokenSequence seq = assemble_tokens(layouts[k], t_z, c_z, cases[k].schedule);
            set.items.push_back(global_ckpt.net->make_item(layouts[k], seq));
            set.targets.push_back(t_z.cast<NetScalar>());
        }
        TrainResult res = train_flow(*global_ckpt.net, set, opts.train, derive_seed(opts.seed, 0x6701));
        global_ckpt.curve = std::move(res.curve);
    }

    // local estimator q(eta_s | theta_g, y_s) on single-site slices, with
    // theta_g drawn from the trained global estimator at each simulation's y
    const TokenLayout l_layout = build_layout(model, FlowRole::PosteriorLocal, 1, pts);
    Checkpoint local_ckpt;
    local_ckpt.role = "pf_local";
    local_ckpt.task = model.name;
    local_ckpt.n_sites = 1;
    local_ckpt.points_per_site = pts;
    local_ckpt.net_cfg = opts.net;
    local_ckpt.seed = opts.seed;
    local_ckpt.net = std::make_shared<Net>(opts.net, NetShape::from_layout(l_layout));
    local_ckpt.net->init_params(derive_seed(opts.seed, 0x10CA));
    {
        const auto [g_tmu, g_tsd] = global_ckpt.stats.expand(
            build_layout(model, FlowRole::PosteriorGlobal, 1, pts), true);
        std::vector<RawCase> cases;
        for (std::size_t k = 0; k < sims.size(); ++k) {
            const auto& sim = sims[k];
            const int n_k = static_cast<int>(sim.eta.rows());
            // one global draw per simulation from q(theta_g | y^{(k)})
            TokenLayout gk = build_layout(model, FlowRole::PosteriorGlobal, n_k, pts);
            const auto [c_mu, c_sd] = global_ckpt.stats.expand(gk, false);
            Vec y_flat(static_cast<long>(n_k) * d_y);
            for (int s = 0; s < n_k; ++s) y_flat.segment(static_cast<long>(s) * d_y, d_y) = sim.y.row(s);
            Vec c_z = (embed_obs(model, y_flat) - c_mu).cwiseQuotient(c_sd);
            std::vector<double> sched_all;
            for (int s = 0; s < n_k; ++s)
                for (int j = 0; j < pts; ++j) sched_all.push_back(sim.schedule(s, j));
            TokenSequence g_seq = assemble_tokens(gk, Vec::Zero(gk.target_dim), c_z, sched_all);
            TokenItem<NetScalar> g_item = global_ckpt.net->make_item(gk, g_seq);
            Rng rng(derive_seed(opts.seed, 0x93A2, k));
            Vec base(gk.target_dim);
            for (long j = 0; j < base.size(); ++j) base[j] = rng.normal();
            Vec ug_hat;
            try {
                ug_hat = g_tmu + g_tsd.cwiseProduct(
                                     integrate_flow(*global_ckpt.net, g_item, base, opts.solver));
            } catch (const NumericError&) {
                ug_hat = unconstrained_globals(model, sim.theta_g);  // fall back to the true draw
            }
            for (int s = 0; s < n_k; ++s) {
                RawCase c;
                c.target = unconstrained_locals(model, sim.eta.row(s).transpose());
                Vec y_s = sim.y.row(s).transpose();
                c.cond.resize(l_layout.cond_dim);
                c.cond << ug_hat, embed_obs(model, y_s);
                if (model.functional)
                    for (int j = 0; j < pts; ++j) c.schedule.push_back(sim.schedule(s, j));
                cases.push_back(std::move(c));
            }
        }
        PreparedTraining prep = prepare_training(model, l_layout, cases, *local_ckpt.net);
        TrainResult res =
            train_flow(*local_ckpt.net, prep.set, opts.train, derive_seed(opts.seed, 0x10C1));
        local_ckpt.stats = std::move(prep.stats);
        local_ckpt.curve = std::move(res.curve);
    }

    result.ledger = ledger;
    result.checkpoints.emplace_back("pf_global", std::move(global_ckpt));
    result.checkpoints.emplace_back("pf_local", std::move(local_ckpt));
    result.report["stick_breaking_batches"] = counts.size();
    return result;
}

}  // namespace

PipelineResult run_pipeline(const RunOptions& opts) {
    const HierarchicalModelSpec& model = get_task(opts.task);
    opts.train.validate();
    PipelineResult result;
    result.report["task"] = opts.task;
    result.report["method"] = opts.method;
    result.report["n_budget"] = opts.n_budget;
    result.report["n_sites"] = opts.n_sites;
    result.report["seed"] = opts.seed;

    NetConfig net_cfg = opts.net;
    const bool grouping = opts.method != "no_grouping";
    if (opts.method == "mlp") net_cfg.arch = NetConfig::Arch::Mlp;

    const bool save_ds = !opts.save_datasets_dir.empty();
    if (opts.method == "lf" || opts.method == "mlp" || opts.method == "no_grouping") {
        SingleSiteDataset d_s = generate_single_site_dataset(model, opts.n_budget, opts.seed,
                                                             opts.points_per_site, opts.workers);
        result.ledger.merge(d_s.ledger);
        if (save_ds)
            save_dataset(fs::path(opts.save_datasets_dir) / "dataset_single", d_s, opts.config_echo);
        Checkpoint surrogate =
            train_surrogate(model, d_s, net_cfg, opts.train, derive_seed(opts.seed, 0xF1));
        MultiSiteDataset d_m = generate_multi_site_dataset(
            model, surrogate, opts.n_budget, opts.n_sites, derive_seed(opts.seed, 0xD2),
            opts.solver, opts.points_per_site, opts.workers);
        result.ledger.merge(d_m.ledger);
        if (save_ds)
            save_dataset(fs::path(opts.save_datasets_dir) / "dataset_multi", d_m, opts.config_echo);
        Checkpoint posterior = train_posterior(model, d_m, net_cfg, opts.train,
                                               derive_seed(opts.seed, 0xF2), grouping);
        result.checkpoints.emplace_back("surrogate", std::move(surrogate));
        result.checkpoints.emplace_back("posterior", std::move(posterior));
    } else if (opts.method == "direct") {
        MultiSiteDataset d_m = generate_direct_dataset(model, opts.n_budget, opts.n_sites,
                                                       opts.seed, opts.points_per_site, opts.workers);
        result.ledger.merge(d_m.ledger);
        if (save_ds)
            save_dataset(fs::path(opts.save_datasets_dir) / "dataset_multi", d_m, opts.config_echo);
        Checkpoint posterior = train_posterior(model, d_m, net_cfg, opts.train,
                                               derive_seed(opts.seed, 0xF2), grouping);
        result.checkpoints.emplace_back("posterior", std::move(posterior));
    } else if (opts.method == "joint") {
        // one estimator; posterior-stage data sampled from the estimator itself
        SingleSiteDataset d_s = generate_single_site_dataset(model, opts.n_budget, opts.seed,
                                                             opts.points_per_site, opts.workers);
        result.ledger.merge(d_s.ledger);
        const int pts = dataset_points_per_site(model, d_s.schedule.cols(), 1);
        const TokenLayout like_layout = build_layout(model, FlowRole::Likelihood, 1, pts);
        const TokenLayout post_layout = build_layout(model, FlowRole::Posterior, opts.n_sites, pts);
        NetShape shape = NetShape::from_layout(post_layout);
        shape.fixed_tokens = 0;  // joint training mixes layouts; MLP unsupported
        if (net_cfg.arch == NetConfig::Arch::Mlp)
            throw ConfigError("joint method requires the transformer (mixed token layouts)");

        Checkpoint joint;
        joint.role = "joint";
        joint.task = model.name;
        joint.n_sites = opts.n_sites;
        joint.points_per_site = pts;
        joint.net_cfg = net_cfg;
        joint.seed = opts.seed;
        joint.net = std::make_shared<Net>(net_cfg, shape);
        joint.net->init_params(derive_seed(opts.seed, 0x701));

        std::vector<RawCase> like_cases;
        for (long i = 0; i < d_s.n; ++i)
            like_cases.push_back(likelihood_case(model, d_s.theta_g.row(i).transpose(),
                                                 d_s.eta.row(i).transpose(), d_s.y.row(i).transpose(),
                                                 schedule_row_to_vector(d_s.schedule, i)));
        PreparedTraining like_prep = prepare_training(model, like_layout, like_cases, *joint.net);
        TrainResult stage1 =
            train_flow(*joint.net, like_prep.set, opts.train, derive_seed(opts.seed, 0x702));
        joint.stats = like_prep.stats;

        Checkpoint as_surrogate = joint;
        as_surrogate.role = "surrogate";
        as_surrogate.n_sites = 1;
        MultiSiteDataset d_m = generate_multi_site_dataset(
            model, as_surrogate, opts.n_budget, opts.n_sites, derive_seed(opts.seed, 0xD2),
            opts.solver, opts.points_per_site, opts.workers);
        result.ledger.merge(d_m.ledger);
        if (save_ds)
            save_dataset(fs::path(opts.save_datasets_dir) / "dataset_multi", d_m, opts.config_echo);

        // concatenation of surrogate-stage and posterior-stage data
        FlowTrainSet<NetScalar> combined = std::move(like_prep.set);
        const auto [t_mu, t_sd] = joint.stats.expand(post_layout, true);
        const auto [c_mu, c_sd] = joint.stats.expand(post_layout, false);
        for (long i = 0; i < d_m.n; ++i) {
            RawCase c = posterior_case(model, d_m.theta_g.row(i).transpose(),
                                       d_m.eta.row(i).transpose(), d_m.y.row(i).transpose(),
                                       schedule_row_to_vector(d_m.schedule, i));
            Vec t_z = (c.target - t_mu).cwiseQuotient(t_sd);
            Vec c_z = (c.cond - c_mu).cwiseQuotient(c_sd);
            TokenSequence seq = assemble_tokens(post_layout, t_z, c_z, c.schedule);
            combined.items.push_back(joint.net->make_item(post_layout, seq));
            combined.targets.push_back(t_z.cast<NetScalar>());
        }
        TrainResult stage2 = train_flow(*joint.net, combined, opts.train,
                                        derive_seed(opts.seed, 0x703), stage1.curve);
        joint.curve = std::move(stage2.curve);
        result.checkpoints.emplace_back("joint", std::move(joint));
    } else if (opts.method == "pf") {
        PipelineResult pf = run_pf(opts, model);
        result.ledger.merge(pf.ledger);
        for (auto& [k, v] : pf.report.items()) result.report[k] = v;
        result.checkpoints = std::move(pf.checkpoints);
    } else {
        throw ConfigError("unknown method '" + opts.method +
                          "'; expected lf | direct | joint | mlp | no_grouping | pf");
    }

    result.report["ledger"] = ledger_to_json(result.ledger);
    for (auto& [role, ckpt] : result.checkpoints) {
        ckpt.config_echo = opts.config_echo;
        result.report["curves"][role] = json{{"epochs", ckpt.curve.size()},
                                             {"final_val_loss",
                                              ckpt.curve.empty() ? 0.0 : ckpt.curve.back().val_loss}};
    }
    return result;
}

Checkpoint refine_lf_posterior(const HierarchicalModelSpec& model, const Checkpoint& surrogate,
                               const Checkpoint& posterior, const Vec& y_obs_flat,
                               const Vec& schedule_flat, long n_refine,
                               const TrainingConfig& train_cfg, std::uint64_t seed,
                               BudgetLedger* ledger) {
    PosteriorSampler sampler(model, posterior, {});
    PosteriorDraws draws = sampler.sample(y_obs_flat, schedule_flat, n_refine,
                                          derive_seed(seed, 0x2EF1), train_cfg.workers);
    SurrogateSampler surr(model, surrogate, {});
    const int n_sites = posterior.n_sites;
    const int pts = posterior.points_per_site;
    const int d_y = model.functional ? pts : model.d_obs;
    const int d_g = model.d_global();
    const TokenLayout layout = build_layout(model, FlowRole::Posterior, n_sites, pts,
                                            posterior.grouping_enabled);

    Checkpoint refined = posterior;
    refined.net = std::make_shared<Net>(posterior.net_cfg, posterior.net->shape());
    for (int p = 0; p < posterior.net->params().size(); ++p)
        refined.net->params().value(p) = posterior.net->params().value(p);
    refined.net->fourier_basis() = posterior.net->fourier_basis();

    const auto [t_mu, t_sd] = refined.stats.expand(layout, true);
    const auto [c_mu, c_sd] = refined.stats.expand(layout, false);
    FlowTrainSet<NetScalar> set;
    BudgetLedger local_ledger;
    for (long i = 0; i < draws.samples.rows(); ++i) {
        if (!draws.samples.row(i).allFinite()) continue;
        const Vec theta_g = draws.samples.row(i).head(d_g).transpose();
        Vec y_flat(static_cast<long>(n_sites) * d_y);
        for (int s = 0; s < n_sites; ++s) {
            const Vec eta_s =
                draws.samples.row(i).segment(d_g + static_cast<long>(s) * model.d_local, model.d_local)
                    .transpose();
            std::vector<double> sched;
            if (model.functional) {
                sched.resize(static_cast<std::size_t>(pts));
                for (int j = 0; j < pts; ++j)
                    sched[static_cast<std::size_t>(j)] = schedule_flat[static_cast<long>(s) * pts + j];
            }
            y_flat.segment(static_cast<long>(s) * d_y, d_y) =
                surr.draw(theta_g, eta_s, sched,
                          derive_seed(seed, 0x2EF2, static_cast<std::uint64_t>(i),
                                      static_cast<std::uint64_t>(s)),
                          &local_ledger);
        }
        const Vec eta_flat = draws.samples.row(i).tail(static_cast<long>(n_sites) * model.d_local)
                                 .transpose();
        std::vector<double> sched_all(static_cast<std::size_t>(schedule_flat.size()));
        for (long j = 0; j < schedule_flat.size(); ++j)
            sched_all[static_cast<std::size_t>(j)] = schedule_flat[j];
        RawCase c = posterior_case(model, theta_g, eta_flat, y_flat, sched_all);
        Vec t_z = (c.target - t_mu).cwiseQuotient(t_sd);
        Vec c_z = (c.cond - c_mu).cwiseQuotient(c_sd);
        TokenSequence seq = assemble_tokens(layout, t_z, c_z, c.schedule);
        set.items.push_back(refined.net->make_item(layout, seq));
        set.targets.push_back(t_z.cast<NetScalar>());
    }
    if (set.items.empty()) throw TrainingError("refinement produced no usable samples");
    TrainResult res =
        train_flow(*refined.net, set, train_cfg, derive_seed(seed, 0x2EF3), refined.curve);
    refined.curve = std::move(res.curve);
    if (ledger) ledger->merge(local_ledger);
    return refined;
}

}  // namespace hsbi
