#include "hsbi/dataset.hpp"

#include <chrono>
#include <cmath>

#include "hsbi/parallel.hpp"

namespace hsbi {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int schedule_cols(const HierarchicalModelSpec& model, int points_per_site) {
    if (!model.functional) return 0;
    return points_per_site > 0 ? points_per_site : model.points_per_site;
}

}  // namespace

Vec embed_obs(const HierarchicalModelSpec& model, const Vec& y) {
    if (!model.obs_log1p) return y;
    return y.array().max(0.0).log1p();
}

Vec unembed_obs(const HierarchicalModelSpec& model, const Vec& v) {
    if (!model.obs_log1p) return v;
    Vec y(v.size());
    for (long i = 0; i < v.size(); ++i) y[i] = std::max(0.0, std::round(std::expm1(v[i])));
    return y;
}

SingleSiteDataset generate_single_site_dataset(const HierarchicalModelSpec& model, long n,
                                               std::uint64_t seed, int points_per_site,
                                               int workers) {
    if (n < 1) throw DomainError("generate_single_site_dataset: n must be >= 1");
    const int pts = schedule_cols(model, points_per_site);
    SingleSiteDataset ds;
    ds.task = model.name;
    ds.n = n;
    ds.seed = seed;
    ds.theta_g.resize(n, model.d_global());
    ds.eta.resize(n, model.d_local);
    ds.y.resize(n, model.functional ? pts : model.d_obs);
    ds.schedule.resize(n, pts);

    const int nw = worker_count(workers);
    std::vector<BudgetLedger> ledgers(static_cast<std::size_t>(nw));
    parallel_chunks(n, nw, [&](long first, long last, int w) {
        auto& ledger = ledgers[static_cast<std::size_t>(w)];
        for (long i = first; i < last; ++i) {
            const std::uint64_t row_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
            auto [theta_g, eta] = sample_prior(model, 1, row_seed);
            std::vector<double> sched;
            if (model.functional) {
                sched = sample_schedule(model, pts, model.horizon, derive_seed(row_seed, 0x5C4ED));
                for (int j = 0; j < pts; ++j) ds.schedule(i, j) = sched[static_cast<std::size_t>(j)];
            }
            const auto t0 = std::chrono::steady_clock::now();
            Vec y;
            try {
                y = simulate_site(model, theta_g, eta.row(0).transpose(), sched,
                                  derive_seed(row_seed, 0x51A1), &ledger);
            } catch (const Error& e) {
                throw SimulationError("sample " + std::to_string(i) + ": " + e.what());
            }
            ledger.t_sim_seconds += seconds_since(t0);
            ds.theta_g.row(i) = theta_g.transpose();
            ds.eta.row(i) = eta.row(0);
            ds.y.row(i) = y.transpose();
        }
    });
    for (const auto& l : ledgers) ds.ledger.merge(l);
    return ds;
}

MultiSiteDataset make_multi_site_skeleton(const HierarchicalModelSpec& model, long n, int n_sites,
                                          std::uint64_t seed, int points_per_site) {
    if (n < 1) throw DomainError("multi-site dataset: n must be >= 1");
    if (n_sites < 1) throw DomainError("multi-site dataset: n_sites must be >= 1");
    const int pts = schedule_cols(model, points_per_site);
    const int d_y = model.functional ? pts : model.d_obs;
    MultiSiteDataset ds;
    ds.task = model.name;
    ds.n = n;
    ds.n_sites = n_sites;
    ds.seed = seed;
    ds.theta_g.resize(n, model.d_global());
    ds.eta.resize(n, static_cast<long>(n_sites) * model.d_local);
    ds.y = Mat::Zero(n, static_cast<long>(n_sites) * d_y);
    ds.schedule.resize(n, static_cast<long>(n_sites) * pts);
    for (long i = 0; i < n; ++i) {
        const std::uint64_t row_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        auto [theta_g, eta] = sample_prior(model, n_sites, row_seed);
        ds.theta_g.row(i) = theta_g.transpose();
        for (int s = 0; s < n_sites; ++s) {
            ds.eta.row(i).segment(static_cast<long>(s) * model.d_local, model.d_local) = eta.row(s);
            if (model.functional) {
                const auto sched = sample_schedule(model, pts, model.horizon,
                                                   derive_seed(row_seed, 0x5C4ED,
                                                               static_cast<std::uint64_t>(s)));
                for (int j = 0; j < pts; ++j)
                    ds.schedule(i, static_cast<long>(s) * pts + j) = sched[static_cast<std::size_t>(j)];
            }
        }
    }
    return ds;
}

MultiSiteDataset generate_direct_dataset(const HierarchicalModelSpec& model, long n, int n_sites,
                                         std::uint64_t seed, int points_per_site, int workers) {
    MultiSiteDataset ds = make_multi_site_skeleton(model, n, n_sites, seed, points_per_site);
    const int pts = schedule_cols(model, points_per_site);
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
                        sched[static_cast<std::size_t>(j)] = ds.schedule(i, static_cast<long>(s) * pts + j);
                }
                const auto t0 = std::chrono::steady_clock::now();
                Vec y;
                try {
                    y = simulate_site(model, ds.theta_g.row(i).transpose(),
                                      ds.eta.row(i)
                                          .segment(static_cast<long>(s) * model.d_local, model.d_local)
                                          .transpose(),
                                      sched, derive_seed(row_seed, 0x51A1, static_cast<std::uint64_t>(s)),
                                      &ledger);
                } catch (const Error& e) {
                    throw SimulationError("sample " + std::to_string(i) + " site " +
                                          std::to_string(s) + ": " + e.what());
                }
                ledger.t_sim_seconds += seconds_since(t0);
                ds.y.row(i).segment(static_cast<long>(s) * d_y, d_y) = y.transpose();
            }
        }
    });
    for (const auto& l : ledgers) ds.ledger.merge(l);
    ds.origin = "simulator";
    return ds;
}

namespace {

json dataset_manifest(const std::string& kind, const std::string& task, long n, int n_sites,
                      const Mat& theta_g, const Mat& eta, const Mat& y, const Mat& schedule,
                      std::uint64_t seed, const std::string& origin, const BudgetLedger& ledger,
                      const json& config_echo) {
    json m;
    m["schema_version"] = kSchemaVersion;
    m["kind"] = kind;
    m["task"] = task;
    m["n"] = n;
    m["n_sites"] = n_sites;
    m["seed"] = seed;
    m["origin"] = origin;
    m["arrays"]["theta_g"] = array_entry("theta_g.bin", "f64", theta_g.rows(), theta_g.cols());
    m["arrays"]["eta"] = array_entry("eta.bin", "f64", eta.rows(), eta.cols());
    m["arrays"]["y"] = array_entry("y.bin", "f64", y.rows(), y.cols());
    if (schedule.cols() > 0)
        m["arrays"]["schedule"] = array_entry("schedule.bin", "f64", schedule.rows(), schedule.cols());
    m["ledger"] = ledger_to_json(ledger);
    m["config"] = config_echo;
    return m;
}

Mat load_named_array(const fs::path& dir, const json& manifest, const std::string& name) {
    if (!manifest["arrays"].contains(name)) throw FormatError("manifest missing array '" + name + "'");
    const auto& e = manifest["arrays"][name];
    return read_array_f64(dir / e.at("file").get<std::string>(), e.at("shape")[0].get<long>(),
                          e.at("shape")[1].get<long>());
}

}  // namespace

void save_dataset(const fs::path& dir, const SingleSiteDataset& ds, const json& config_echo) {
    fs::create_directories(dir);
    write_array(dir / "theta_g.bin", ds.theta_g);
    write_array(dir / "eta.bin", ds.eta);
    write_array(dir / "y.bin", ds.y);
    if (ds.schedule.cols() > 0) write_array(dir / "schedule.bin", ds.schedule);
    write_manifest(dir, dataset_manifest("dataset_single_site", ds.task, ds.n, 1, ds.theta_g,
                                         ds.eta, ds.y, ds.schedule, ds.seed, "simulator",
                                         ds.ledger, config_echo));
}

void save_dataset(const fs::path& dir, const MultiSiteDataset& ds, const json& config_echo) {
    fs::create_directories(dir);
    write_array(dir / "theta_g.bin", ds.theta_g);
    write_array(dir / "eta.bin", ds.eta);
    write_array(dir / "y.bin", ds.y);
    if (ds.schedule.cols() > 0) write_array(dir / "schedule.bin", ds.schedule);
    write_manifest(dir, dataset_manifest("dataset_multi_site", ds.task, ds.n, ds.n_sites,
                                         ds.theta_g, ds.eta, ds.y, ds.schedule, ds.seed, ds.origin,
                                         ds.ledger, config_echo));
}

SingleSiteDataset load_single_site_dataset(const fs::path& dir) {
    const json m = read_manifest(dir);
    check_manifest(m, "dataset_single_site");
    SingleSiteDataset ds;
    ds.task = m.at("task").get<std::string>();
    ds.n = m.at("n").get<long>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.theta_g = load_named_array(dir, m, "theta_g");
    ds.eta = load_named_array(dir, m, "eta");
    ds.y = load_named_array(dir, m, "y");
    ds.schedule = m["arrays"].contains("schedule") ? load_named_array(dir, m, "schedule")
                                                   : Mat(ds.n, 0);
    ds.ledger = ledger_from_json(m.at("ledger"));
    return ds;
}

MultiSiteDataset load_multi_site_dataset(const fs::path& dir) {
    const json m = read_manifest(dir);
    check_manifest(m, "dataset_multi_site");
    MultiSiteDataset ds;
    ds.task = m.at("task").get<std::string>();
    ds.n = m.at("n").get<long>();
    ds.n_sites = m.at("n_sites").get<int>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.origin = m.value("origin", "simulator");
    ds.theta_g = load_named_array(dir, m, "theta_g");
    ds.eta = load_named_array(dir, m, "eta");
    ds.y = load_named_array(dir, m, "y");
    ds.schedule = m["arrays"].contains("schedule") ? load_named_array(dir, m, "schedule")
                                                   : Mat(ds.n, 0);
    ds.ledger = ledger_from_json(m.at("ledger"));
    return ds;
}

bool dataset_is_multi_site(const fs::path& dir) {
    const json m = read_manifest(dir);
    return m.value("kind", "") == "dataset_multi_site";
}

}  // namespace hsbi
