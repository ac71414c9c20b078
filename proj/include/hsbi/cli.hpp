#pragma once

#include "hsbi/diagnostics.hpp"

namespace hsbi {

// Parsed + validated run configuration. JSON schema (all keys optional unless
// noted): task (required for compute commands), method, n, n_sites, seed,
// points_per_site, workers, output_dir, net {...}, training {...},
// solver {...}, diagnostics {...}. CLI flags override file values.
struct RunConfig {
    std::string task;
    std::string method = "lf";
    long n = 1000;
    int n_sites = 10;
    std::uint64_t seed = 1;
    int points_per_site = -1;
    int workers = 0;
    std::string output_dir;

    NetConfig net;
    TrainingConfig training;
    SolverConfig solver;

    // diagnostics
    Lc2stConfig lc2st;
    int n_observations = 10;
    long n_posterior_samples = 2000;
    int n_tarp_cases = 100;
    int mmd_permutations = 200;

    json echo;  // full merged config, persisted verbatim into outputs

    static RunConfig from_json(const json& j);
};

json load_config_file(const std::string& path);

// Commands return 0 on success; main maps exceptions to exit codes.
int cmd_simulate(const RunConfig& cfg, bool multi_site);
int cmd_train(const RunConfig& cfg, bool resume);
int cmd_sample(const RunConfig& cfg, const std::string& run_dir, const std::string& obs_dataset,
               long obs_index, long n_samples, const std::string& out_dir, long refine_n = 0);
int cmd_evaluate(const RunConfig& cfg, const std::string& run_dir, const std::string& diagnostic,
                 const std::string& out_dir, const std::string& samples_a,
                 const std::string& samples_b);
int cmd_benchmark(const json& sweep_config, const std::string& out_dir);
int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv);
int cmd_report_cost(long n1, long n2, int n_sites, double t_sim, double t_like,
                    const std::string& out_json);

// Builds the posterior-side sampler for a trained run directory (posterior /
// joint / pf checkpoints inside).
struct LoadedRun {
    json manifest;
    std::string method;
    std::vector<std::pair<std::string, Checkpoint>> checkpoints;

    const Checkpoint& by_role(const std::string& role) const;
    bool has_role(const std::string& role) const;
};
LoadedRun load_run(const fs::path& run_dir);

PosteriorDraws sample_from_run(const LoadedRun& run, const HierarchicalModelSpec& model,
                               const Vec& y_obs_flat, const Vec& schedule_flat, long n_samples,
                               std::uint64_t seed, const SolverConfig& solver, int workers);

}  // namespace hsbi
