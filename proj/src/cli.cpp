#include "hsbi/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

namespace hsbi {

namespace {

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("field '" + (path.empty() ? key : path + "." + key) + "' has invalid type");
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const fs::path& file, const std::string& text) {
    fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out << text;
}

Vec unconstrained_row(const HierarchicalModelSpec& model, const Vec& constrained_row, int n_sites) {
    const int d_g = model.d_global();
    const auto g_tf = model.global_transforms();
    Vec u(constrained_row.size());
    for (int i = 0; i < d_g; ++i) u[i] = g_tf[static_cast<std::size_t>(i)].forward(constrained_row[i]);
    for (int s = 0; s < n_sites; ++s)
        for (int j = 0; j < model.d_local; ++j) {
            const long k = d_g + static_cast<long>(s) * model.d_local + j;
            u[k] = model.local_transforms[static_cast<std::size_t>(j)].forward(constrained_row[k]);
        }
    return u;
}

// classifier-facing observation representation: embedded values plus the
// normalised schedule when the task is functional
Vec observation_features(const HierarchicalModelSpec& model, const Vec& y_flat,
                         const Vec& schedule_flat) {
    Vec x = embed_obs(model, y_flat);
    if (!model.functional || schedule_flat.size() == 0) return x;
    Vec out(x.size() + schedule_flat.size());
    out << x, schedule_flat / (model.horizon > 0 ? model.horizon : 1.0);
    return out;
}

}  // namespace

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    cfg.task = get_field<std::string>(j, "", "task", "");
    cfg.method = get_field<std::string>(j, "", "method", cfg.method);
    cfg.n = get_field<long>(j, "", "n", cfg.n);
    cfg.n_sites = get_field<int>(j, "", "n_sites", cfg.n_sites);
    cfg.seed = get_field<std::uint64_t>(j, "", "seed", cfg.seed);
    cfg.points_per_site = get_field<int>(j, "", "points_per_site", cfg.points_per_site);
    cfg.workers = get_field<int>(j, "", "workers", cfg.workers);
    cfg.output_dir = get_field<std::string>(j, "", "output_dir", "");

    if (j.contains("net")) cfg.net = net_config_from_json(j.at("net"));
    if (j.contains("training")) {
        const auto& t = j.at("training");
        cfg.training.learning_rate = get_field<double>(t, "training", "learning_rate",
                                                       cfg.training.learning_rate);
        cfg.training.batch_size = get_field<int>(t, "training", "batch_size", cfg.training.batch_size);
        cfg.training.patience = get_field<int>(t, "training", "patience", cfg.training.patience);
        cfg.training.max_epochs = get_field<int>(t, "training", "max_epochs", cfg.training.max_epochs);
        cfg.training.validation_fraction =
            get_field<double>(t, "training", "validation_fraction", cfg.training.validation_fraction);
        cfg.training.sigma_min = get_field<double>(t, "training", "sigma_min", cfg.training.sigma_min);
        cfg.training.verbose = get_field<bool>(t, "training", "verbose", cfg.training.verbose);
    }
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        cfg.solver.rtol = get_field<double>(s, "solver", "rtol", cfg.solver.rtol);
        cfg.solver.atol = get_field<double>(s, "solver", "atol", cfg.solver.atol);
        cfg.solver.max_steps = get_field<long>(s, "solver", "max_steps", cfg.solver.max_steps);
    }
    if (j.contains("diagnostics")) {
        const auto& d = j.at("diagnostics");
        cfg.n_observations = get_field<int>(d, "diagnostics", "n_observations", cfg.n_observations);
        cfg.n_posterior_samples =
            get_field<long>(d, "diagnostics", "n_posterior_samples", cfg.n_posterior_samples);
        cfg.n_tarp_cases = get_field<int>(d, "diagnostics", "n_tarp_cases", cfg.n_tarp_cases);
        cfg.mmd_permutations =
            get_field<int>(d, "diagnostics", "mmd_permutations", cfg.mmd_permutations);
        cfg.lc2st.n_cal = get_field<long>(d, "diagnostics", "lc2st_n_cal", cfg.lc2st.n_cal);
        cfg.lc2st.n_eval = get_field<long>(d, "diagnostics", "lc2st_n_eval", cfg.lc2st.n_eval);
        cfg.lc2st.cv_folds = get_field<int>(d, "diagnostics", "lc2st_cv_folds", cfg.lc2st.cv_folds);
        cfg.lc2st.null_ensemble =
            get_field<int>(d, "diagnostics", "lc2st_null_ensemble", cfg.lc2st.null_ensemble);
        cfg.lc2st.classifier.max_epochs =
            get_field<int>(d, "diagnostics", "lc2st_classifier_max_epochs",
                           cfg.lc2st.classifier.max_epochs);
    }

    // validation with field paths
    if (cfg.n < 1) throw ConfigError("field 'n' must be >= 1");
    if (cfg.n_sites < 1) throw ConfigError("field 'n_sites' must be >= 1");
    cfg.training.workers = cfg.workers;
    cfg.lc2st.workers = cfg.workers;
    try {
        cfg.training.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("field 'training': ") + e.what());
    }
    if (!(cfg.solver.rtol > 0.0) || !(cfg.solver.atol > 0.0))
        throw ConfigError("field 'solver.rtol'/'solver.atol' must be positive");
    cfg.echo = j;
    return cfg;
}

int cmd_simulate(const RunConfig& cfg, bool multi_site) {
    if (cfg.task.empty()) throw ConfigError("field 'task' is required");
    if (cfg.output_dir.empty()) throw ConfigError("field 'output_dir' is required");
    const auto& model = get_task(cfg.task);
    if (multi_site) {
        MultiSiteDataset ds = generate_direct_dataset(model, cfg.n, cfg.n_sites, cfg.seed,
                                                      cfg.points_per_site, cfg.workers);
        save_dataset(cfg.output_dir, ds, cfg.echo);
        std::cout << "dataset: " << cfg.output_dir << "\nledger: "
                  << ledger_to_json(ds.ledger).dump() << "\n";
    } else {
        SingleSiteDataset ds = generate_single_site_dataset(model, cfg.n, cfg.seed,
                                                            cfg.points_per_site, cfg.workers);
        save_dataset(cfg.output_dir, ds, cfg.echo);
        std::cout << "dataset: " << cfg.output_dir << "\nledger: "
                  << ledger_to_json(ds.ledger).dump() << "\n";
    }
    return 0;
}

namespace {

json run_manifest(const RunConfig& cfg, const PipelineResult& result,
                  const std::vector<std::string>& roles) {
    json m;
    m["schema_version"] = kSchemaVersion;
    m["kind"] = "run";
    m["task"] = cfg.task;
    m["method"] = cfg.method;
    m["n"] = cfg.n;
    m["n_sites"] = cfg.n_sites;
    m["seed"] = cfg.seed;
    m["ledger"] = ledger_to_json(result.ledger);
    m["report"] = result.report;
    m["checkpoints"] = roles;
    m["config"] = cfg.echo;
    return m;
}

}  // namespace

int cmd_train(const RunConfig& cfg, bool resume) {
    if (cfg.task.empty()) throw ConfigError("field 'task' is required");
    if (cfg.output_dir.empty()) throw ConfigError("field 'output_dir' is required");
    const fs::path out = cfg.output_dir;

    if (resume) {
        // continue posterior-stage training from the saved run
        LoadedRun run = load_run(out);
        const auto& model = get_task(cfg.task);
        const std::string role = run.has_role("posterior") ? "posterior" : "joint";
        if (!run.has_role(role)) throw ConfigError("resume: run has no posterior/joint checkpoint");
        Checkpoint ckpt = run.by_role(role);
        MultiSiteDataset d_m = load_multi_site_dataset(out / "dataset_multi");
        Checkpoint resumed = train_posterior(model, d_m, ckpt.net_cfg, cfg.training,
                                             derive_seed(cfg.seed, 0x2E5),
                                             ckpt.grouping_enabled, role);
        // splice: restart training continues the persisted curve
        std::vector<TrainingCurvePoint> curve = ckpt.curve;
        for (auto p : resumed.curve) {
            p.epoch += curve.empty() ? 0 : curve.back().epoch + 1;
            curve.push_back(p);
        }
        resumed.curve = std::move(curve);
        resumed.config_echo = cfg.echo;
        save_checkpoint(out / role, resumed);
        std::cout << "resumed " << role << " for " << resumed.curve.size() << " total epochs\n";
        return 0;
    }

    RunOptions opts;
    opts.task = cfg.task;
    opts.method = cfg.method;
    opts.n_budget = cfg.n;
    opts.n_sites = cfg.n_sites;
    opts.seed = cfg.seed;
    opts.net = cfg.net;
    opts.train = cfg.training;
    opts.solver = cfg.solver;
    opts.points_per_site = cfg.points_per_site;
    opts.workers = cfg.workers;
    opts.config_echo = cfg.echo;
    opts.save_datasets_dir = out.string();  // stage datasets archived with the run

    PipelineResult result = run_pipeline(opts);
    std::vector<std::string> roles;
    for (const auto& [role, ckpt] : result.checkpoints) {
        save_checkpoint(out / role, ckpt);
        roles.push_back(role);
    }
    write_manifest(out, run_manifest(cfg, result, roles));
    std::cout << "run: " << out.string() << "\nledger: " << ledger_to_json(result.ledger).dump()
              << "\n";
    return 0;
}

const Checkpoint& LoadedRun::by_role(const std::string& role) const {
    for (const auto& [r, c] : checkpoints)
        if (r == role) return c;
    throw ConfigError("run has no checkpoint with role '" + role + "'");
}

bool LoadedRun::has_role(const std::string& role) const {
    for (const auto& [r, c] : checkpoints)
        if (r == role) return true;
    return false;
}

LoadedRun load_run(const fs::path& run_dir) {
    LoadedRun run;
    run.manifest = read_manifest(run_dir);
    check_manifest(run.manifest, "run");
    run.method = run.manifest.value("method", "lf");
    for (const auto& role : run.manifest.at("checkpoints"))
        run.checkpoints.emplace_back(role.get<std::string>(),
                                     load_checkpoint(run_dir / role.get<std::string>()));
    return run;
}

PosteriorDraws sample_from_run(const LoadedRun& run, const HierarchicalModelSpec& model,
                               const Vec& y_obs_flat, const Vec& schedule_flat, long n_samples,
                               std::uint64_t seed, const SolverConfig& solver, int workers) {
    if (run.has_role("pf_global")) {
        PfSampler sampler(model, run.by_role("pf_global"), run.by_role("pf_local"), solver);
        return sampler.sample(y_obs_flat, schedule_flat, n_samples, seed, workers);
    }
    const std::string role = run.has_role("posterior") ? "posterior" : "joint";
    PosteriorSampler sampler(model, run.by_role(role), solver);
    return sampler.sample(y_obs_flat, schedule_flat, n_samples, seed, workers);
}

int cmd_sample(const RunConfig& cfg, const std::string& run_dir, const std::string& obs_dataset,
               long obs_index, long n_samples, const std::string& out_dir, long refine_n) {
    LoadedRun run = load_run(run_dir);
    const std::string task = run.manifest.at("task").get<std::string>();
    const auto& model = get_task(task);
    MultiSiteDataset obs = load_multi_site_dataset(obs_dataset);
    if (obs_index < 0 || obs_index >= obs.n)
        throw ConfigError("obs index " + std::to_string(obs_index) + " outside dataset of " +
                          std::to_string(obs.n) + " rows");
    const Vec y_obs = obs.y.row(obs_index).transpose();
    const Vec sched = obs.schedule.cols() > 0 ? Vec(obs.schedule.row(obs_index).transpose())
                                              : Vec(0);

    if (refine_n > 0) {
        if (!run.has_role("surrogate") || !run.has_role("posterior"))
            throw ConfigError("refinement requires surrogate and posterior checkpoints");
        BudgetLedger refine_ledger;
        Checkpoint refined = refine_lf_posterior(model, run.by_role("surrogate"),
                                                 run.by_role("posterior"), y_obs, sched, refine_n,
                                                 cfg.training, derive_seed(cfg.seed, 0x32F1),
                                                 &refine_ledger);
        for (auto& [r, c] : run.checkpoints)
            if (r == "posterior") c = refined;
        std::cout << "refined posterior; surrogate draws "
                  << refine_ledger.surrogate_draws << "\n";
    }

    PosteriorDraws draws = sample_from_run(run, model, y_obs, sched, n_samples, cfg.seed,
                                           cfg.solver, cfg.workers);
    fs::create_directories(out_dir);
    write_array(fs::path(out_dir) / "samples.bin", draws.samples);
    json m;
    m["schema_version"] = kSchemaVersion;
    m["kind"] = "samples";
    m["task"] = task;
    m["n_sites"] = run.manifest.at("n_sites");
    m["n_samples"] = n_samples;
    m["failures"] = draws.failures;
    m["seed"] = cfg.seed;
    m["obs_dataset"] = obs_dataset;
    m["obs_index"] = obs_index;
    m["arrays"]["samples"] = array_entry("samples.bin", "f64", draws.samples.rows(),
                                         draws.samples.cols());
    m["config"] = cfg.echo;
    write_manifest(out_dir, m);
    std::cout << "samples: " << out_dir << " (failures " << draws.failures << ")\n";
    return 0;
}

namespace {

struct Observation {
    Vec theta_true;     // constrained [theta_g; eta...]
    Vec y_flat;
    Vec schedule_flat;
};

Observation draw_observation(const HierarchicalModelSpec& model, int n_sites, int pts,
                             std::uint64_t seed, BudgetLedger* ledger) {
    Observation obs;
    auto [theta_g, eta] = sample_prior(model, n_sites, seed);
    const int d_y = model.functional ? pts : model.d_obs;
    obs.y_flat.resize(static_cast<long>(n_sites) * d_y);
    obs.schedule_flat.resize(model.functional ? static_cast<long>(n_sites) * pts : 0);
    for (int s = 0; s < n_sites; ++s) {
        std::vector<double> sched;
        if (model.functional) {
            sched = sample_schedule(model, pts, model.horizon,
                                    derive_seed(seed, 0x5C4ED, static_cast<std::uint64_t>(s)));
            for (int j = 0; j < pts; ++j)
                obs.schedule_flat[static_cast<long>(s) * pts + j] = sched[static_cast<std::size_t>(j)];
        }
        obs.y_flat.segment(static_cast<long>(s) * d_y, d_y) =
            simulate_site(model, theta_g, eta.row(s).transpose(), sched,
                          derive_seed(seed, 0x51A1, static_cast<std::uint64_t>(s)), ledger);
    }
    obs.theta_true.resize(theta_g.size() + static_cast<long>(n_sites) * model.d_local);
    obs.theta_true.head(theta_g.size()) = theta_g;
    for (int s = 0; s < n_sites; ++s)
        obs.theta_true.segment(theta_g.size() + static_cast<long>(s) * model.d_local,
                               model.d_local) = eta.row(s).transpose();
    return obs;
}

std::string csv_escape(const std::string& s) { return s; }

}  // namespace

int cmd_evaluate(const RunConfig& cfg, const std::string& run_dir, const std::string& diagnostic,
                 const std::string& out_dir, const std::string& samples_a,
                 const std::string& samples_b) {
    fs::create_directories(out_dir);

    if (diagnostic == "mmd2") {
        if (samples_a.empty() || samples_b.empty())
            throw ConfigError("mmd2 needs --samples-a and --samples-b sample directories");
        auto load_samples = [](const std::string& dir) {
            const json m = read_manifest(dir);
            check_manifest(m, "samples");
            const auto& e = m.at("arrays").at("samples");
            return read_array_f64(fs::path(dir) / e.at("file").get<std::string>(),
                                  e.at("shape")[0].get<long>(), e.at("shape")[1].get<long>());
        };
        const Mat a = load_samples(samples_a);
        const Mat b = load_samples(samples_b);
        const Mmd2Result res = mmd2_test(a, b, cfg.mmd_permutations, cfg.seed);
        json rep{{"diagnostic", "mmd2"},
                 {"mmd2", res.mmd2},
                 {"p_value", res.p_value},
                 {"n_a", a.rows()},
                 {"n_b", b.rows()},
                 {"n_permutations", cfg.mmd_permutations},
                 {"config", cfg.echo}};
        write_text(fs::path(out_dir) / "mmd2.json", rep.dump(2) + "\n");
        std::cout << "mmd2 " << res.mmd2 << " p " << res.p_value << "\n";
        return 0;
    }

    LoadedRun run = load_run(run_dir);
    const std::string task = run.manifest.at("task").get<std::string>();
    const auto& model = get_task(task);
    const int n_sites = run.manifest.at("n_sites").get<int>();
    const Checkpoint& any_ckpt = run.checkpoints.front().second;
    const int pts = any_ckpt.points_per_site;
    const int d_g = model.d_global();
    const long theta_dim = d_g + static_cast<long>(n_sites) * model.d_local;
    BudgetLedger eval_ledger;

    if (diagnostic == "lc2st") {
        // classifier works on (x, theta) in unconstrained theta space with
        // embedded observations (+ normalised schedules for functional tasks)
        PosteriorFn posterior = [&](const Vec& x, long n, std::uint64_t s) {
            const long d_y_total = static_cast<long>(n_sites) * (model.functional ? pts : model.d_obs);
            const Vec y_flat = x.head(d_y_total);
            Vec sched_flat(model.functional ? static_cast<long>(n_sites) * pts : 0);
            if (model.functional)
                sched_flat = x.tail(sched_flat.size()) * (model.horizon > 0 ? model.horizon : 1.0);
            // x carries embedded counts; samplers expect raw observations
            Vec y_raw = unembed_obs(model, y_flat);
            PosteriorDraws draws =
                sample_from_run(run, model, y_raw, sched_flat, n, s, cfg.solver, cfg.workers);
            Mat u = Mat::Zero(draws.samples.rows(), theta_dim);
            for (long i = 0; i < draws.samples.rows(); ++i)
                if (draws.samples.row(i).allFinite())
                    u.row(i) =
                        unconstrained_row(model, draws.samples.row(i).transpose(), n_sites)
                            .transpose();
            return u;
        };
        JointSampler joint = [&](long i) {
            Observation obs = draw_observation(model, n_sites, pts,
                                               derive_seed(cfg.seed, 0xCA1, static_cast<std::uint64_t>(i)),
                                               &eval_ledger);
            Vec theta_u = unconstrained_row(model, obs.theta_true, n_sites);
            return std::make_pair(theta_u, observation_features(model, obs.y_flat, obs.schedule_flat));
        };

        Lc2stTester tester(cfg.lc2st);
        tester.fit(posterior, joint, derive_seed(cfg.seed, 0x7E57));

        std::string csv = "task,method,n,n_sites,observation,t_mse,p_value\n";
        json per_obs = json::array();
        double mean = 0.0, m2 = 0.0;
        for (int o = 0; o < cfg.n_observations; ++o) {
            Observation obs = draw_observation(model, n_sites, pts,
                                               derive_seed(cfg.seed, 0x0B5E, static_cast<std::uint64_t>(o)),
                                               &eval_ledger);
            const Vec x_obs = observation_features(model, obs.y_flat, obs.schedule_flat);
            const Mat post = posterior(x_obs, cfg.lc2st.n_eval,
                                       derive_seed(cfg.seed, 0xE7A1, static_cast<std::uint64_t>(o)));
            const Lc2stResult res = tester.evaluate(x_obs, post);
            per_obs.push_back({{"observation", o}, {"t_mse", res.t_mse}, {"p_value", res.p_value}});
            csv += csv_escape(task) + "," + run.method + "," + std::to_string(cfg.n) + "," +
                   std::to_string(n_sites) + "," + std::to_string(o) + "," +
                   std::to_string(res.t_mse) + "," + std::to_string(res.p_value) + "\n";
            const double delta = res.t_mse - mean;
            mean += delta / static_cast<double>(o + 1);
            m2 += delta * (res.t_mse - mean);
        }
        const double sd = cfg.n_observations > 1
                              ? std::sqrt(m2 / static_cast<double>(cfg.n_observations - 1))
                              : 0.0;
        const double ci95 = 1.96 * sd / std::sqrt(static_cast<double>(cfg.n_observations));
        json rep{{"diagnostic", "lc2st"},   {"task", task},
                 {"method", run.method},    {"n", cfg.n},
                 {"n_sites", n_sites},      {"mean_t_mse", mean},
                 {"ci95", ci95},            {"per_observation", per_obs},
                 {"eval_ledger", ledger_to_json(eval_ledger)},
                 {"config", cfg.echo}};
        write_text(fs::path(out_dir) / "lc2st.json", rep.dump(2) + "\n");
        write_text(fs::path(out_dir) / "lc2st.csv", csv);
        csv = "task,method,N,n_s,metric,mean,ci95\n" + csv_escape(task) + "," + run.method + "," +
              std::to_string(cfg.n) + "," + std::to_string(n_sites) + ",lc2st," +
              std::to_string(mean) + "," + std::to_string(ci95) + "\n";
        write_text(fs::path(out_dir) / "summary.csv", csv);
        std::cout << "lc2st mean " << mean << " ci95 " << ci95 << "\n";
        return 0;
    }

    if (diagnostic == "tarp") {
        std::vector<Mat> case_samples;
        Mat truths(cfg.n_tarp_cases, theta_dim);
        for (int c = 0; c < cfg.n_tarp_cases; ++c) {
            Observation obs = draw_observation(model, n_sites, pts,
                                               derive_seed(cfg.seed, 0x7A2, static_cast<std::uint64_t>(c)),
                                               &eval_ledger);
            PosteriorDraws draws = sample_from_run(run, model, obs.y_flat, obs.schedule_flat,
                                                   cfg.n_posterior_samples,
                                                   derive_seed(cfg.seed, 0x7A3, static_cast<std::uint64_t>(c)),
                                                   cfg.solver, cfg.workers);
            // keep finite rows only
            std::vector<long> ok;
            for (long r = 0; r < draws.samples.rows(); ++r)
                if (draws.samples.row(r).allFinite()) ok.push_back(r);
            Mat clean(static_cast<long>(ok.size()), theta_dim);
            for (std::size_t r = 0; r < ok.size(); ++r) clean.row(static_cast<long>(r)) = draws.samples.row(ok[r]);
            case_samples.push_back(std::move(clean));
            truths.row(c) = obs.theta_true.transpose();
        }
        const TarpResult res = tarp(case_samples, truths, derive_seed(cfg.seed, 0x7A4));
        std::string curve = "alpha,ecp\n";
        for (long k = 0; k < res.alpha.size(); ++k)
            curve += std::to_string(res.alpha[k]) + "," + std::to_string(res.ecp[k]) + "\n";
        write_text(fs::path(out_dir) / "tarp_curve.csv", curve);
        json rep{{"diagnostic", "tarp"},
                 {"task", task},
                 {"method", run.method},
                 {"n_cases", cfg.n_tarp_cases},
                 {"atc", res.atc},
                 {"ks_p_value", res.ks_p},
                 {"eval_ledger", ledger_to_json(eval_ledger)},
                 {"config", cfg.echo}};
        write_text(fs::path(out_dir) / "tarp.json", rep.dump(2) + "\n");
        std::cout << "tarp atc " << res.atc << " ks_p " << res.ks_p << "\n";
        return 0;
    }

    if (diagnostic == "ppc") {
        Observation obs = draw_observation(model, n_sites, pts, derive_seed(cfg.seed, 0x99C),
                                           &eval_ledger);
        PosteriorDraws draws = sample_from_run(run, model, obs.y_flat, obs.schedule_flat,
                                               cfg.n_posterior_samples, derive_seed(cfg.seed, 0x99D),
                                               cfg.solver, cfg.workers);
        std::vector<long> ok;
        for (long r = 0; r < draws.samples.rows(); ++r)
            if (draws.samples.row(r).allFinite()) ok.push_back(r);
        Mat clean(static_cast<long>(ok.size()), theta_dim);
        for (std::size_t r = 0; r < ok.size(); ++r) clean.row(static_cast<long>(r)) = draws.samples.row(ok[r]);
        const Mat pred = posterior_predictive(model, clean, n_sites, obs.schedule_flat,
                                              derive_seed(cfg.seed, 0x99E), &eval_ledger);
        write_array(fs::path(out_dir) / "predictive.bin", pred);
        // quantile bands per observation coordinate
        std::string csv = "coordinate,observed,q05,q25,q50,q75,q95\n";
        for (long c = 0; c < pred.cols(); ++c) {
            std::vector<double> col(pred.rows());
            for (long r = 0; r < pred.rows(); ++r) col[static_cast<std::size_t>(r)] = pred(r, c);
            std::sort(col.begin(), col.end());
            auto q = [&](double p) {
                return col[static_cast<std::size_t>(p * static_cast<double>(col.size() - 1))];
            };
            csv += std::to_string(c) + "," + std::to_string(obs.y_flat[c]) + "," +
                   std::to_string(q(0.05)) + "," + std::to_string(q(0.25)) + "," +
                   std::to_string(q(0.50)) + "," + std::to_string(q(0.75)) + "," +
                   std::to_string(q(0.95)) + "\n";
        }
        write_text(fs::path(out_dir) / "ppc_bands.csv", csv);
        json rep{{"diagnostic", "ppc"},
                 {"task", task},
                 {"n_draws", clean.rows()},
                 {"arrays", {{"predictive", array_entry("predictive.bin", "f64", pred.rows(), pred.cols())}}},
                 {"eval_ledger", ledger_to_json(eval_ledger)},
                 {"config", cfg.echo}};
        write_text(fs::path(out_dir) / "ppc.json", rep.dump(2) + "\n");
        std::cout << "ppc draws " << clean.rows() << "\n";
        return 0;
    }

    throw ConfigError("unknown diagnostic '" + diagnostic + "'; expected lc2st | tarp | mmd2 | ppc");
}

int cmd_benchmark(const json& sweep_config, const std::string& out_dir) {
    const auto tasks = sweep_config.value("tasks", std::vector<std::string>{});
    const auto methods = sweep_config.value("methods", std::vector<std::string>{"lf"});
    const auto budgets = sweep_config.value("n", std::vector<long>{});
    const auto site_counts = sweep_config.value("n_sites", std::vector<int>{});
    if (tasks.empty() || budgets.empty() || site_counts.empty())
        throw ConfigError("sweep config needs 'tasks', 'n', and 'n_sites' lists");
    json base = sweep_config.value("base", json::object());

    std::string csv = "task,method,N,n_s,metric,mean,ci95\n";
    for (const auto& task : tasks)
        for (const auto& method : methods)
            for (long n : budgets)
                for (int ns : site_counts) {
                    json cell = base;
                    cell["task"] = task;
                    cell["method"] = method;
                    cell["n"] = n;
                    cell["n_sites"] = ns;
                    if (!cell.contains("seed")) cell["seed"] = sweep_config.value("seed", 1);
                    const std::string cell_hash = hex64(fnv1a(cell.dump()));
                    const fs::path cell_dir = fs::path(out_dir) / "cells" / cell_hash;
                    const fs::path metric_file = cell_dir / "eval" / "lc2st.json";
                    if (!fs::exists(metric_file)) {
                        RunConfig cfg = RunConfig::from_json(cell);
                        cfg.output_dir = (cell_dir / "run").string();
                        cfg.echo = cell;
                        cmd_train(cfg, false);
                        cmd_evaluate(cfg, (cell_dir / "run").string(), "lc2st",
                                     (cell_dir / "eval").string(), "", "");
                    }
                    std::ifstream in(metric_file);
                    json metric;
                    in >> metric;
                    csv += task + "," + method + "," + std::to_string(n) + "," +
                           std::to_string(ns) + ",lc2st," +
                           std::to_string(metric.at("mean_t_mse").get<double>()) + "," +
                           std::to_string(metric.at("ci95").get<double>()) + "\n";
                }
    write_text(fs::path(out_dir) / "results.csv", csv);
    std::cout << "benchmark results: " << (fs::path(out_dir) / "results.csv").string() << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv) {
    std::string csv = "task,method,N,n_s,metric,mean,ci95\n";
    for (const auto& dir : run_dirs) {
        const fs::path p = fs::path(dir) / "lc2st.json";
        std::ifstream in(p);
        if (!in) throw FormatError("missing " + p.string());
        json j;
        in >> j;
        csv += j.value("task", std::string("?")) + "," + j.value("method", std::string("?")) + "," +
               std::to_string(j.value("n", 0L)) + "," + std::to_string(j.value("n_sites", 0)) +
               ",lc2st," + std::to_string(j.at("mean_t_mse").get<double>()) + "," +
               std::to_string(j.at("ci95").get<double>()) + "\n";
    }
    write_text(out_csv, csv);
    std::cout << "report: " << out_csv << "\n";
    return 0;
}

int cmd_report_cost(long n1, long n2, int n_sites, double t_sim, double t_like,
                    const std::string& out_json) {
    const CostReport rep = budget_report(n1, n2, n_sites, t_sim, t_like);
    const json j = rep.to_json();
    if (!out_json.empty()) write_text(out_json, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace hsbi
