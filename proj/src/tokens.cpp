#include "hsbi/tokens.hpp"

#include <cmath>

namespace hsbi {

TokenLayout build_layout(const HierarchicalModelSpec& model, FlowRole role, int n_sites,
                         int points_per_site, bool grouping_enabled) {
    if (n_sites < 1) throw LayoutError("build_layout: n_sites must be >= 1");
    TokenLayout layout;
    layout.role = role;
    layout.n_sites = n_sites;
    layout.functional = model.functional;
    layout.horizon = model.horizon;
    layout.obs_log1p = model.obs_log1p;
    layout.grouping_enabled = grouping_enabled;
    layout.points_per_site =
        model.functional ? (points_per_site > 0 ? points_per_site : model.points_per_site) : 0;

    const int n_gvars = static_cast<int>(model.globals.size());
    const int local_id = n_gvars + 1;
    const int obs_id = n_gvars + 2;
    layout.n_variables = obs_id;

    const int obs_token_width = model.functional ? 1 : model.d_obs;
    const int obs_tokens_per_site = model.functional ? layout.points_per_site : 1;

    int d_v = obs_token_width;
    for (const auto& v : model.globals) d_v = std::max(d_v, v.dim);
    d_v = std::max(d_v, model.d_local);
    layout.d_value = d_v;

    const bool globals_target = role == FlowRole::Posterior || role == FlowRole::PosteriorGlobal;
    const bool locals_present = role != FlowRole::PosteriorGlobal;
    const bool locals_target = role == FlowRole::Posterior || role == FlowRole::PosteriorLocal;
    const bool obs_target = role == FlowRole::Likelihood;
    const int local_sites = (role == FlowRole::Likelihood || role == FlowRole::PosteriorLocal)
                                ? 1
                                : n_sites;
    const int obs_sites = (role == FlowRole::Likelihood || role == FlowRole::PosteriorLocal)
                              ? 1
                              : n_sites;
    if ((role == FlowRole::Likelihood || role == FlowRole::PosteriorLocal) && n_sites != 1)
        throw LayoutError("build_layout: single-site roles require n_sites == 1");

    int target_off = 0, cond_off = 0, fn_off = 0;
    auto push = [&](int var_id, int pos, int grp, int width, bool target, bool has_fn) {
        TokenLayout::Token t;
        t.var_id = var_id;
        t.position = pos;
        t.group_id = grp;
        t.width = width;
        t.target = target;
        t.offset = target ? target_off : cond_off;
        (target ? target_off : cond_off) += width;
        t.has_fn = has_fn;
        if (has_fn) t.fn_offset = fn_off++;
        layout.tokens.push_back(t);
    };

    for (int g = 0; g < n_gvars; ++g)
        push(g + 1, 0, 0, model.globals[static_cast<std::size_t>(g)].dim, globals_target, false);
    if (locals_present)
        for (int s = 0; s < local_sites; ++s)
            push(local_id, 0, s + 1, model.d_local, locals_target, false);
    for (int s = 0; s < obs_sites; ++s)
        for (int j = 0; j < obs_tokens_per_site; ++j)
            push(obs_id, j, s + 1, obs_token_width, obs_target, model.functional);

    layout.target_dim = target_off;
    layout.cond_dim = cond_off;
    layout.max_positions = model.functional ? std::max(layout.points_per_site, 1) : 1;
    layout.max_groups = std::max(local_sites, obs_sites) + 1;

    if (grouping_enabled) {
        std::set<std::tuple<int, int, int>> keys;
        for (const auto& t : layout.tokens)
            if (!keys.insert({t.var_id, t.position, t.group_id}).second)
                throw LayoutError("build_layout: duplicate (var_id, position, group_id) key");
    }
    return layout;
}

TokenSequence assemble_tokens(const TokenLayout& layout, const Vec& target_values,
                              const Vec& cond_values, const std::vector<double>& schedule) {
    if (target_values.size() != layout.target_dim)
        throw LayoutError("assemble_tokens: target vector length mismatch");
    if (cond_values.size() != layout.cond_dim)
        throw LayoutError("assemble_tokens: conditioning vector length mismatch");
    const int T = layout.size();
    TokenSequence seq;
    seq.values = Mat::Zero(T, layout.d_value);
    seq.var_ids.resize(static_cast<std::size_t>(T));
    seq.positions.resize(static_cast<std::size_t>(T));
    seq.group_ids.resize(static_cast<std::size_t>(T));
    seq.target_mask.resize(static_cast<std::size_t>(T));
    const bool has_fn = layout.functional;
    seq.fn_inputs = has_fn ? Mat::Zero(T, 1) : Mat(T, 0);

    for (int i = 0; i < T; ++i) {
        const auto& t = layout.tokens[static_cast<std::size_t>(i)];
        const Vec& src = t.target ? target_values : cond_values;
        seq.values.row(i).head(t.width) = src.segment(t.offset, t.width).transpose();
        seq.var_ids[static_cast<std::size_t>(i)] = t.var_id;
        seq.positions[static_cast<std::size_t>(i)] = t.position;
        seq.group_ids[static_cast<std::size_t>(i)] = layout.grouping_enabled ? t.group_id : 0;
        seq.target_mask[static_cast<std::size_t>(i)] = t.target ? 1 : 0;
        if (t.has_fn) {
            if (t.fn_offset >= static_cast<int>(schedule.size()))
                throw LayoutError("assemble_tokens: schedule shorter than functional tokens");
            const double denom = layout.horizon > 0.0 ? layout.horizon : 1.0;
            seq.fn_inputs(i, 0) = schedule[static_cast<std::size_t>(t.fn_offset)] / denom;
        }
    }
    return seq;
}

Vec gather_targets(const TokenLayout& layout, const TokenSequence& tokens) {
    Vec out(layout.target_dim);
    for (int i = 0; i < layout.size(); ++i) {
        const auto& t = layout.tokens[static_cast<std::size_t>(i)];
        if (t.target) out.segment(t.offset, t.width) = tokens.values.row(i).head(t.width).transpose();
    }
    return out;
}

Vec scatter_readout(const TokenLayout& layout, const Mat& target_token_rows) {
    Vec out = Vec::Zero(layout.target_dim);
    int r = 0;
    for (const auto& t : layout.tokens) {
        if (!t.target) continue;
        if (r >= target_token_rows.rows())
            throw LayoutError("scatter_readout: fewer rows than target tokens");
        out.segment(t.offset, t.width) = target_token_rows.row(r).head(t.width).transpose();
        ++r;
    }
    if (r != target_token_rows.rows())
        throw LayoutError("scatter_readout: row count does not match target tokens");
    return out;
}

Vec fourier_features(const Vec& xi, const Mat& basis) {
    if (basis.cols() != xi.size())
        throw LayoutError("fourier_features: basis column count must match xi length");
    const Vec proj = 2.0 * M_PI * (basis * xi);
    Vec out(2 * proj.size());
    out.head(proj.size()) = proj.array().cos();
    out.tail(proj.size()) = proj.array().sin();
    return out;
}

std::pair<Vec, Vec> ZScoreStats::expand(const TokenLayout& layout, bool target_side) const {
    const int dim = target_side ? layout.target_dim : layout.cond_dim;
    Vec mu = Vec::Zero(dim), sd = Vec::Ones(dim);
    for (const auto& t : layout.tokens) {
        if (t.target != target_side) continue;
        auto it = stats.find({t.var_id, t.position});
        if (it == stats.end())
            throw LayoutError("ZScoreStats: missing stats for var_id=" + std::to_string(t.var_id) +
                              " position=" + std::to_string(t.position));
        mu.segment(t.offset, t.width) = it->second.first;
        sd.segment(t.offset, t.width) = it->second.second;
    }
    return {mu, sd};
}

void ZScoreAccumulator::add(const TokenLayout& layout, const Vec& target_values,
                            const Vec& cond_values) {
    for (const auto& t : layout.tokens) {
        const Vec& src = t.target ? target_values : cond_values;
        auto& m = acc_[{t.var_id, t.position}];
        if (m.count == 0) {
            m.sum = Vec::Zero(t.width);
            m.sum_sq = Vec::Zero(t.width);
        }
        const Vec v = src.segment(t.offset, t.width);
        m.sum += v;
        m.sum_sq += v.cwiseProduct(v);
        m.count += 1;
    }
}

ZScoreStats ZScoreAccumulator::finalize(double min_sd) const {
    ZScoreStats out;
    for (const auto& [key, m] : acc_) {
        const double n = static_cast<double>(m.count);
        Vec mean = m.sum / n;
        Vec var = (m.sum_sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
        Vec sd = var.cwiseSqrt().cwiseMax(min_sd);
        out.stats[key] = {mean, sd};
    }
    return out;
}

}  // namespace hsbi
