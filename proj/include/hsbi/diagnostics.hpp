#pragma once

#include <functional>

#include "hsbi/pipeline.hpp"

namespace hsbi {

// ----- binary classifier (two hidden layers of rectified-linear units) -----

struct ClassifierConfig {
    int hidden = 32;
    int layers = 2;
    double learning_rate = 3e-4;
    int batch_size = 100;
    int patience = 100;
    double min_delta = 1e-2;
    double val_fraction = 0.10;
    int max_epochs = 1000;
};

class BinaryClassifier {
public:
    BinaryClassifier(int input_dim, const ClassifierConfig& cfg);

    void train(const Mat& features, const Vec& labels, std::uint64_t seed);
    // P(class 1 | x)
    Vec predict(const Mat& features) const;

private:
    ClassifierConfig cfg_;
    int input_dim_;
    ParamStore<double> store_;
    std::vector<int> weight_ids_, bias_ids_;
};

// ----- local classifier two-sample test -----

struct Lc2stConfig {
    ClassifierConfig classifier;
    int cv_folds = 10;
    int null_ensemble = 100;  // H; 0 skips the null (p = NaN)
    long n_cal = 2000;        // joint calibration pairs
    long n_eval = 2000;       // posterior draws at x_obs
    int workers = 0;
};

struct Lc2stResult {
    double t_mse = 0.0;
    double p_value = 0.0;
    double null_q95 = 0.0;
    std::vector<double> null_stats;
};

// t_MSE = (1/n) sum (d_i - 1/2)^2 over classifier outputs at the observation.
double lc2st_statistic(const Vec& classifier_probs);

// joint(i) -> (theta, x) pair from p(theta, x); posterior(x, n, seed) -> n
// draws from q(theta | x), one row each.
using JointSampler = std::function<std::pair<Vec, Vec>(long)>;
using PosteriorFn = std::function<Mat(const Vec&, long, std::uint64_t)>;

// The classifier ensemble and the null ensemble are observation-independent;
// fit once, then evaluate the statistic at any number of observations.
class Lc2stTester {
public:
    explicit Lc2stTester(Lc2stConfig cfg) : cfg_(std::move(cfg)) {}

    void fit(const PosteriorFn& posterior, const JointSampler& joint, std::uint64_t seed);
    Lc2stResult evaluate(const Vec& x_obs, const Mat& posterior_draws) const;

private:
    Lc2stConfig cfg_;
    std::vector<BinaryClassifier> folds_;
    std::vector<BinaryClassifier> nulls_;
    Vec mu_, sd_;
    long d_x_ = 0, d_theta_ = 0;
};

Lc2stResult lc2st(const PosteriorFn& posterior, const JointSampler& joint, const Vec& x_obs,
                  const Lc2stConfig& cfg, std::uint64_t seed);

// ----- TARP coverage diagnostic -----

struct TarpResult {
    Vec alpha;    // credibility grid
    Vec ecp;      // expected coverage probability
    double atc = 0.0;   // area between curve and diagonal
    double ks_p = 0.0;  // KS test of coverage-rank uniformity
};

TarpResult tarp(const std::vector<Mat>& posterior_samples, const Mat& true_params,
                std::uint64_t seed, int n_alpha = 101);

// ----- MMD^2 permutation test -----

struct Mmd2Result {
    double mmd2 = 0.0;
    double p_value = 1.0;
};

// Unbiased MMD^2 with an RBF kernel (median-heuristic bandwidth on the pooled
// set); permutation p-value under the >= convention including the observed
// statistic.
Mmd2Result mmd2_test(const Mat& samples_a, const Mat& samples_b, int n_permutations,
                     std::uint64_t seed);

// ----- posterior predictive -----

// One simulated observation per posterior draw, either from the true
// simulator (ledger charged) or from a trained surrogate.
Mat posterior_predictive(const HierarchicalModelSpec& model, const Mat& posterior_samples,
                         int n_sites, const Vec& schedule_flat, std::uint64_t seed,
                         BudgetLedger* ledger = nullptr);
Mat posterior_predictive(const SurrogateSampler& surrogate, const HierarchicalModelSpec& model,
                         const Mat& posterior_samples, int n_sites, const Vec& schedule_flat,
                         std::uint64_t seed, BudgetLedger* ledger = nullptr);

// ----- factorisation oracle (conjugate 1-D Gaussian) -----

struct FactorisationConfig {
    double prior_mean = 0.0;
    double prior_sd = 1.0;
    double noise_sd = 0.7;
    double shared_noise_sd = 0.0;  // > 0 corrupts the i.i.d. premise
    double grid_halfwidth_sds = 8.0;
};

// Max absolute difference of centred log densities between the joint
// posterior and the compositional product form, on a grid.
double factorisation_discrepancy(int n_sites, int grid_points, std::uint64_t seed,
                                 const FactorisationConfig& cfg = {});

// ----- simulator-vs-surrogate cost accounting -----

struct CostReport {
    long n1 = 0;  // single-site (true simulator) samples
    long n2 = 0;  // synthesised multi-site samples
    int n_sites = 1;
    double t_sim_seconds = 0.0;
    double t_like_seconds = 0.0;
    double npe_seconds = 0.0;  // N * n_s * t_sim
    double pf_seconds = 0.0;   // N * (n_s / 2) * t_sim
    double lf_seconds = 0.0;   // N1 * t_sim + N2 * n_s * t_like
    double per_draw_speedup = 0.0;
    double end_to_end_speedup = 0.0;

    long per_draw_speedup_rounded() const;
    double npe_hours_1dp() const;
    double pf_hours_1dp() const;
    double lf_hours_1dp() const;
    json to_json() const;
};

CostReport budget_report(long n1, long n2, int n_sites, double t_sim_seconds,
                         double t_like_seconds);

}  // namespace hsbi
