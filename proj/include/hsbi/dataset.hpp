#pragma once

#include <filesystem>
#include <string>

#include "hsbi/io.hpp"
#include "hsbi/model.hpp"
#include "hsbi/tasks.hpp"

namespace hsbi {

// Single-site tuples D_s = {(theta_g, eta_s, y_s, i_s)}: one prior draw and
// one simulator call each.
struct SingleSiteDataset {
    std::string task;
    long n = 0;
    Mat theta_g;   // N x d_g       (constrained space)
    Mat eta;       // N x d_l
    Mat y;         // N x d_y
    Mat schedule;  // N x points_per_site (0 cols for fixed-dimension tasks)
    std::uint64_t seed = 0;
    BudgetLedger ledger;
};

// Multi-site tuples D_m = {(theta_g, eta, y, i)} with site-major flattening.
struct MultiSiteDataset {
    std::string task;
    long n = 0;
    int n_sites = 1;
    Mat theta_g;   // N x d_g
    Mat eta;       // N x (n_sites * d_l)
    Mat y;         // N x (n_sites * d_y)
    Mat schedule;  // N x (n_sites * points_per_site)
    std::uint64_t seed = 0;
    std::string origin = "simulator";  // simulator | surrogate
    BudgetLedger ledger;
};

// Observation embedding for the flow: count-valued observations enter as
// log1p(counts); everything else passes through.
Vec embed_obs(const HierarchicalModelSpec& model, const Vec& y);
Vec unembed_obs(const HierarchicalModelSpec& model, const Vec& v);

SingleSiteDataset generate_single_site_dataset(const HierarchicalModelSpec& model, long n,
                                               std::uint64_t seed, int points_per_site = -1,
                                               int workers = 0);

// Multi-site data straight from the true simulator (the Direct ablation's
// data path); charges n * n_sites true calls.
MultiSiteDataset generate_direct_dataset(const HierarchicalModelSpec& model, long n, int n_sites,
                                         std::uint64_t seed, int points_per_site = -1,
                                         int workers = 0);

// Prior draws plus schedules with observations left unfilled (surrogate
// synthesis fills them in the pipeline).
MultiSiteDataset make_multi_site_skeleton(const HierarchicalModelSpec& model, long n, int n_sites,
                                          std::uint64_t seed, int points_per_site = -1);

void save_dataset(const fs::path& dir, const SingleSiteDataset& ds, const json& config_echo);
void save_dataset(const fs::path& dir, const MultiSiteDataset& ds, const json& config_echo);
SingleSiteDataset load_single_site_dataset(const fs::path& dir);
MultiSiteDataset load_multi_site_dataset(const fs::path& dir);
bool dataset_is_multi_site(const fs::path& dir);

}  // namespace hsbi
