#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "hsbi/model.hpp"

namespace hsbi {

// Which side of the estimator the flow transports. Posterior: targets are
// the parameter tokens, observations condition. Likelihood: targets are one
// site's observation tokens, parameters condition. The Global/Local variants
// serve the posterior-factorisation ablation.
enum class FlowRole { Posterior, Likelihood, PosteriorGlobal, PosteriorLocal };

// Static token layout for (model, role, n_sites, points/site). Token order is
// fixed and documented: globals, then per-site locals, then per-site
// observations; offsets index the flattened target/conditioning vectors.
struct TokenLayout {
    struct Token {
        int var_id = 1;       // 1..L
        int position = 0;     // intra-variable position
        int group_id = 0;     // 0 reserved for non-site tokens
        int width = 1;        // leading entries of the value slot that are real
        bool target = false;  // member of the flow-target index set
        int offset = 0;       // into the target vector (target) or conditioning vector
        bool has_fn = false;
        int fn_offset = 0;    // into the flattened schedule vector
    };

    std::vector<Token> tokens;
    FlowRole role = FlowRole::Posterior;
    int n_sites = 1;
    int points_per_site = 0;  // functional observations only
    int d_value = 1;          // d_v: zero-padded token value width
    int target_dim = 0;
    int cond_dim = 0;
    int n_variables = 0;      // L
    int max_positions = 1;    // P_max
    int max_groups = 1;       // G_max (index 0 reserved)
    bool functional = false;
    double horizon = 0.0;
    bool obs_log1p = false;
    bool grouping_enabled = true;

    int size() const { return static_cast<int>(tokens.size()); }
    std::vector<int> target_token_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < size(); ++i)
            if (tokens[static_cast<std::size_t>(i)].target) idx.push_back(i);
        return idx;
    }
};

// Parallel token arrays carrying values plus embedding metadata.
struct TokenSequence {
    Mat values;                     // T x d_v, zero-padded
    std::vector<int> var_ids;       // 1..L
    std::vector<int> positions;     // 0..P_max-1
    std::vector<int> group_ids;     // 0 for non-site tokens
    Mat fn_inputs;                  // T x 1 normalised coordinates; 0 cols when absent
    std::vector<char> target_mask;  // 1 = flow-target token

    int size() const { return static_cast<int>(var_ids.size()); }
};

TokenLayout build_layout(const HierarchicalModelSpec& model, FlowRole role, int n_sites,
                         int points_per_site = -1, bool grouping_enabled = true);

// Fills token values from flattened target/conditioning vectors (already in
// embedding space: unconstrained parameters, log1p counts). schedule holds
// raw observation coordinates, flattened site-major; normalised by the
// horizon before storage.
TokenSequence assemble_tokens(const TokenLayout& layout, const Vec& target_values,
                              const Vec& cond_values, const std::vector<double>& schedule = {});

// Inverse of assemble on the target slots.
Vec gather_targets(const TokenLayout& layout, const TokenSequence& tokens);

// Scatters per-token readout rows (n_target_tokens x d_v) back into the
// flattened target layout, dropping padded slots.
Vec scatter_readout(const TokenLayout& layout, const Mat& target_token_rows);

// e_fn = [cos(2 pi B xi); sin(2 pi B xi)] for a single coordinate vector.
// basis is (d_fn/2) x d_xi.
Vec fourier_features(const Vec& xi, const Mat& basis);

// Per-(var_id, position) normalisation statistics pooled over sites and
// dataset rows; expandable to any site count of the same model.
struct ZScoreStats {
    struct Key {
        int var_id;
        int position;
        bool operator<(const Key& o) const {
            return var_id != o.var_id ? var_id < o.var_id : position < o.position;
        }
    };
    std::map<Key, std::pair<Vec, Vec>> stats;  // mean, sd (length = token width)

    // Flattened per-slot mean/sd for the layout's target or conditioning vector.
    std::pair<Vec, Vec> expand(const TokenLayout& layout, bool target_side) const;
};

class ZScoreAccumulator {
public:
    void add(const TokenLayout& layout, const Vec& target_values, const Vec& cond_values);
    ZScoreStats finalize(double min_sd = 1e-8) const;

private:
    struct Moments {
        Vec sum, sum_sq;
        long count = 0;
    };
    std::map<ZScoreStats::Key, Moments> acc_;
};

}  // namespace hsbi
