#pragma once

#include <memory>
#include <optional>

#include "hsbi/dataset.hpp"
#include "hsbi/train.hpp"

namespace hsbi {

// Networks train and sample in float32; oracles and gradient checks
// instantiate the double variants directly.
using NetScalar = float;
using Net = VectorFieldNet<NetScalar>;

struct Checkpoint {
    std::string role;  // surrogate | posterior | joint | pf_global | pf_local
    std::string task;
    int n_sites = 1;
    int points_per_site = 0;
    bool grouping_enabled = true;
    NetConfig net_cfg;
    std::shared_ptr<Net> net;
    ZScoreStats stats;
    std::vector<TrainingCurvePoint> curve;
    std::uint64_t seed = 0;
    json config_echo;

    FlowRole flow_role() const;
};

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& dir);

// Stage 1: per-site neural surrogate q(y_s | theta_g, eta_s) from D_s.
Checkpoint train_surrogate(const HierarchicalModelSpec& model, const SingleSiteDataset& ds,
                           const NetConfig& net_cfg, const TrainingConfig& train_cfg,
                           std::uint64_t seed);

// Stage 2 estimator q(theta_g, eta | y) from multi-site data.
Checkpoint train_posterior(const HierarchicalModelSpec& model, const MultiSiteDataset& ds,
                           const NetConfig& net_cfg, const TrainingConfig& train_cfg,
                           std::uint64_t seed, bool grouping_enabled = true,
                           const std::string& role = "posterior");

// Draws synthetic per-site observations from a trained surrogate.
class SurrogateSampler {
public:
    SurrogateSampler(const HierarchicalModelSpec& model, const Checkpoint& ckpt,
                     SolverConfig solver = {});

    Vec draw(const Vec& theta_g, const Vec& eta_s, const std::vector<double>& schedule,
             std::uint64_t seed, BudgetLedger* ledger = nullptr) const;

private:
    const HierarchicalModelSpec* model_;
    const Checkpoint* ckpt_;
    SolverConfig solver_;
    TokenLayout layout_;
    Vec target_mu_, target_sd_, cond_mu_, cond_sd_;
};

// Multi-site training data with observations synthesised by the surrogate;
// performs zero true-simulator calls, charges n * n_sites surrogate draws.
MultiSiteDataset generate_multi_site_dataset(const HierarchicalModelSpec& model,
                                             const Checkpoint& surrogate, long n, int n_sites,
                                             std::uint64_t seed, const SolverConfig& solver = {},
                                             int points_per_site = -1, int workers = 0);

// Same data path with an injectable per-site sampler (e.g. the true simulator
// wrapped as an oracle surrogate).
using SiteDrawFn = std::function<Vec(const Vec& theta_g, const Vec& eta_s,
                                     const std::vector<double>& schedule, std::uint64_t seed,
                                     BudgetLedger* ledger)>;
MultiSiteDataset generate_multi_site_dataset_with(const HierarchicalModelSpec& model,
                                                  const SiteDrawFn& draw, long n, int n_sites,
                                                  std::uint64_t seed, int points_per_site = -1,
                                                  int workers = 0);

struct PosteriorDraws {
    Mat samples;  // n x (d_g + n_sites * d_local), constrained space
    long failures = 0;
};

// Samples (theta_g, eta) from a posterior/joint checkpoint given one
// observation (flattened y and schedule as stored in a multi-site dataset).
class PosteriorSampler {
public:
    PosteriorSampler(const HierarchicalModelSpec& model, const Checkpoint& ckpt,
                     SolverConfig solver = {});

    PosteriorDraws sample(const Vec& y_obs_flat, const Vec& schedule_flat, long n_samples,
                          std::uint64_t seed, int workers = 0) const;

    const TokenLayout& layout() const { return layout_; }

private:
    const HierarchicalModelSpec* model_;
    const Checkpoint* ckpt_;
    SolverConfig solver_;
    TokenLayout layout_;
    Vec target_mu_, target_sd_, cond_mu_, cond_sd_;
};

// Two-stage sampler for the posterior-factorisation ablation.
class PfSampler {
public:
    PfSampler(const HierarchicalModelSpec& model, const Checkpoint& global_ckpt,
              const Checkpoint& local_ckpt, SolverConfig solver = {});

    PosteriorDraws sample(const Vec& y_obs_flat, const Vec& schedule_flat, long n_samples,
                          std::uint64_t seed, int workers = 0) const;

private:
    const HierarchicalModelSpec* model_;
    const Checkpoint* global_ckpt_;
    const Checkpoint* local_ckpt_;
    SolverConfig solver_;
};

struct RunOptions {
    std::string task = "gaussian_linear";
    std::string method = "lf";  // lf | direct | joint | mlp | no_grouping | pf
    long n_budget = 1000;
    int n_sites = 10;
    std::uint64_t seed = 1;
    NetConfig net;
    TrainingConfig train;
    SolverConfig solver;
    int points_per_site = -1;
    int workers = 0;
    bool sequential_refinement = false;
    std::string save_datasets_dir;  // when set, stage datasets are persisted here
    json config_echo;
};

struct PipelineResult {
    std::vector<std::pair<std::string, Checkpoint>> checkpoints;  // role -> checkpoint
    BudgetLedger ledger;
    json report;
};

// Runs the configured training pipeline (Algorithm 1 stages or an ablation).
PipelineResult run_pipeline(const RunOptions& opts);

// Stick-breaking site counts: n_k ~ Uniform{1..min(n_sites, remaining)} until
// the budget is spent exactly.
std::vector<int> stick_breaking_site_counts(long budget, int n_sites, std::uint64_t seed);

// Optional sequential refinement: resamples parameters from the current
// posterior at y_obs, synthesises fresh surrogate observations, and continues
// posterior training. Returns the refined checkpoint.
Checkpoint refine_lf_posterior(const HierarchicalModelSpec& model, const Checkpoint& surrogate,
                               const Checkpoint& posterior, const Vec& y_obs_flat,
                               const Vec& schedule_flat, long n_refine,
                               const TrainingConfig& train_cfg, std::uint64_t seed,
                               BudgetLedger* ledger = nullptr);

}  // namespace hsbi
