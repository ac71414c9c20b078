#pragma once

#include <span>

#include "hsbi/nets.hpp"
#include "hsbi/ode.hpp"

namespace hsbi {

struct PathConfig {
    double sigma_min = 1e-4;  // in (0, 1)
};

// u_t(theta_t | theta_1) = (theta_1 - (1 - sigma_min) theta_t) / (1 - (1 - sigma_min) t)
template <typename D>
D ot_target(const D& theta_t, const D& theta_1, double t, double sigma_min) {
    const double denom = 1.0 - (1.0 - sigma_min) * t;
    if (!(denom > 0.0)) throw DomainError("ot_target: 1 - (1 - sigma_min) t must be positive");
    return (theta_1 - (1.0 - sigma_min) * theta_t) / denom;
}

inline Vec ot_target_vec(const Vec& theta_t, const Vec& theta_1, double t, double sigma_min) {
    const double denom = 1.0 - (1.0 - sigma_min) * t;
    if (!(denom > 0.0)) throw DomainError("ot_target: 1 - (1 - sigma_min) t must be positive");
    return (theta_1 - (1.0 - sigma_min) * theta_t) / denom;
}

// theta_t = t theta_1 + (1 - (1 - sigma_min) t) eps; the affine Gaussian path
// whose conditional field is ot_target.
inline Vec sample_path_point(const Vec& theta_1, double t, const Vec& eps, double sigma_min) {
    return t * theta_1 + (1.0 - (1.0 - sigma_min) * t) * eps;
}

// Builds the FMPE regression graph for a slice of a batch on one tape and
// backpropagates: mean over items of || v - u ||^2, each item at its own
// (t, eps) draw derived from item_seeds. Returns the slice's summed loss
// (caller divides by the full batch size). Items are mutated (target rows).
template <typename S>
double cfm_slice_backward(VectorFieldNet<S>& net, std::span<TokenItem<S>* const> items,
                          std::span<const VecX<S>* const> targets,
                          std::span<const std::uint64_t> item_seeds, double sigma_min,
                          double inv_batch, bool train, std::vector<MatX<S>>& grads) {
    // transformer batches with one shared token layout run as a single
    // stacked graph; everything else falls back to per-item graphs
    bool stackable = net.config().arch == NetConfig::Arch::Transformer && items.size() > 1;
    for (std::size_t i = 1; stackable && i < items.size(); ++i)
        stackable = items[i]->values.rows() == items[0]->values.rows() &&
                    items[i]->target_rows.size() == items[0]->target_rows.size();
    if (stackable) {
        Tape<S> tape(&net.params(), &grads);
        std::vector<S> times(items.size());
        long total_target_rows = 0;
        for (const auto* it : items) total_target_rows += static_cast<long>(it->target_rows.size());
        MatX<S> u_rows(total_target_rows, items[0]->values.cols());
        MatX<S> mask(total_target_rows, items[0]->values.cols());
        long row0 = 0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            Rng rng(item_seeds[i]);
            const double t = rng.uniform01();
            times[i] = S(t);
            const VecX<S>& theta_1 = *targets[i];
            VecX<S> eps(theta_1.size());
            for (long k = 0; k < eps.size(); ++k) eps[k] = S(rng.normal());
            VecX<S> theta_t = S(t) * theta_1 + S(1.0 - (1.0 - sigma_min) * t) * eps;
            VecX<S> u = (theta_1 - S(1.0 - sigma_min) * theta_t) / S(1.0 - (1.0 - sigma_min) * t);
            items[i]->set_target_state(theta_t);
            const long n_t = static_cast<long>(items[i]->target_rows.size());
            u_rows.middleRows(row0, n_t) = items[i]->target_rows_matrix(u);
            mask.middleRows(row0, n_t) = items[i]->target_slot_mask;
            row0 += n_t;
        }
        auto pred = net.forward_readout_stacked(tape, items, std::span<const S>(times));
        auto diff = tape.sub(pred, tape.constant(std::move(u_rows)));
        auto loss = tape.sum_squares(tape.hadamard(diff, tape.constant(std::move(mask))));
        const double loss_sum = static_cast<double>(tape.value(loss)(0, 0));
        if (!std::isfinite(loss_sum))
            throw NumericError("cfm loss non-finite over a batch slice of " +
                               std::to_string(items.size()) + " items");
        tape.backward(tape.scale(loss, S(inv_batch)));
        return loss_sum;
    }

    Tape<S> tape(&net.params(), &grads);
    typename Tape<S>::Var total{-1};
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        Rng rng(item_seeds[i]);
        const double t = rng.uniform01();
        const VecX<S>& theta_1 = *targets[i];
        const int dim = static_cast<int>(theta_1.size());
        VecX<S> eps(dim);
        for (int k = 0; k < dim; ++k) eps[k] = S(rng.normal());
        VecX<S> theta_t = S(t) * theta_1 + S(1.0 - (1.0 - sigma_min) * t) * eps;
        VecX<S> u = (theta_1 - S(1.0 - sigma_min) * theta_t) / S(1.0 - (1.0 - sigma_min) * t);

        items[i]->set_target_state(theta_t);
        Rng drop_rng(derive_seed(item_seeds[i], 0xD60));
        auto pred = net.forward_readout(tape, *items[i], S(t), train, drop_rng);
        typename Tape<S>::Var item_loss;
        if (net.config().arch == NetConfig::Arch::Mlp) {
            MatX<S> u_row = u.transpose();
            item_loss = tape.sum_squares(tape.sub(pred, tape.constant(std::move(u_row))));
        } else {
            MatX<S> u_rows = items[i]->target_rows_matrix(u);
            auto diff = tape.sub(pred, tape.constant(std::move(u_rows)));
            item_loss =
                tape.sum_squares(tape.hadamard(diff, tape.constant(items[i]->target_slot_mask)));
        }
        auto scaled = tape.scale(item_loss, S(inv_batch));
        total = (total.idx < 0) ? scaled : tape.add_scalar(total, scaled);
        loss_sum += static_cast<double>(tape.value(item_loss)(0, 0));
    }
    if (total.idx >= 0) {
        if (!std::isfinite(loss_sum))
            throw NumericError("cfm loss non-finite over a batch slice of " +
                               std::to_string(items.size()) + " items");
        tape.backward(total);
    }
    return loss_sum;
}

// Evaluation-mode loss for one item (no graph, no dropout).
template <typename S>
double cfm_loss_eval(VectorFieldNet<S>& net, TokenItem<S>& item, const VecX<S>& theta_1,
                     std::uint64_t seed, double sigma_min) {
    Rng rng(seed);
    const double t = rng.uniform01();
    const int dim = static_cast<int>(theta_1.size());
    VecX<S> eps(dim);
    for (int k = 0; k < dim; ++k) eps[k] = S(rng.normal());
    VecX<S> theta_t = S(t) * theta_1 + S(1.0 - (1.0 - sigma_min) * t) * eps;
    VecX<S> u = (theta_1 - S(1.0 - sigma_min) * theta_t) / S(1.0 - (1.0 - sigma_min) * t);
    item.set_target_state(theta_t);
    VecX<S> v = net.vector_field(item, S(t));
    return static_cast<double>((v - u).squaredNorm());
}

// Closed-form loss of the zero field, mean over the same (t, eps) draws:
// the baseline a trained field must beat.
template <typename S>
double cfm_zero_field_baseline(std::span<const VecX<S>> targets,
                               std::span<const std::uint64_t> item_seeds, double sigma_min) {
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Rng rng(item_seeds[i]);
        const double t = rng.uniform01();
        const int dim = static_cast<int>(targets[i].size());
        VecX<S> eps(dim);
        for (int k = 0; k < dim; ++k) eps[k] = S(rng.normal());
        VecX<S> theta_t = S(t) * targets[i] + S(1.0 - (1.0 - sigma_min) * t) * eps;
        VecX<S> u = (targets[i] - S(1.0 - sigma_min) * theta_t) / S(1.0 - (1.0 - sigma_min) * t);
        total += static_cast<double>(u.squaredNorm());
    }
    return total / static_cast<double>(targets.size());
}

// Integrates d theta / dt = v(theta, t | conditioning) from the base draw at
// t = 0 to the (z-scored, unconstrained) sample at t = 1.
template <typename S>
Vec integrate_flow(VectorFieldNet<S>& net, TokenItem<S>& item, const Vec& base_draw,
                   const SolverConfig& solver_cfg, SolverStats* stats = nullptr) {
    if (base_draw.size() != item.target_dim)
        throw LayoutError("integrate_flow: base draw length does not match the target layout");
    Dopri5 solver(solver_cfg);
    auto field = [&](double t, const Vec& y, Vec& dy) {
        item.set_target_state(y.template cast<S>());
        dy = net.vector_field(item, S(t)).template cast<double>();
    };
    return solver.integrate(field, base_draw, 0.0, 1.0, stats);
}

}  // namespace hsbi
