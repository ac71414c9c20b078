#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "hsbi/flow.hpp"
#include "hsbi/parallel.hpp"

namespace hsbi {

struct TrainingConfig {
    double learning_rate = 1e-4;
    int batch_size = 100;
    int patience = 100;       // epochs without validation improvement
    int max_epochs = 1000;
    double validation_fraction = 0.10;
    double min_delta = 0.0;   // required improvement to reset patience
    double sigma_min = 1e-4;
    int workers = 0;          // 0 = HSBI_WORKERS / hardware
    bool verbose = false;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patience > max_epochs) throw ConfigError("patience must be <= max_epochs");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw ConfigError("validation_fraction must lie in [0, 1)");
        if (!(sigma_min > 0.0 && sigma_min < 1.0)) throw ConfigError("sigma_min must lie in (0, 1)");
    }
};

struct TrainingCurvePoint {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<TrainingCurvePoint> curve;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

// Conditioned flow-matching training cases: immutable conditioning tokens and
// z-scored targets. Target rows are scratch space the loss overwrites.
template <typename S>
struct FlowTrainSet {
    std::vector<TokenItem<S>> items;
    std::vector<VecX<S>> targets;

    long size() const { return static_cast<long>(items.size()); }
};

// Adam + early stopping on a validation split, restoring the best epoch's
// parameters. Deterministic given seed and worker count.
template <typename S>
TrainResult train_flow(VectorFieldNet<S>& net, FlowTrainSet<S>& data, const TrainingConfig& cfg,
                       std::uint64_t seed, std::vector<TrainingCurvePoint> prior_curve = {}) {
    cfg.validate();
    const long n = data.size();
    if (n == 0) throw TrainingError("empty training set");

    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    {
        Rng rng(derive_seed(seed, 0x5B1F));
        for (long i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1))]);
    }
    const long n_val = std::min<long>(n - 1, static_cast<long>(std::floor(cfg.validation_fraction *
                                                                          static_cast<double>(n))));
    std::vector<long> val_idx(order.begin(), order.begin() + n_val);
    std::vector<long> train_idx(order.begin() + n_val, order.end());
    if (train_idx.empty()) throw TrainingError("validation split leaves no training data");

    const int nw = worker_count(cfg.workers);
    AdamOptimizer<S> opt(cfg.learning_rate);
    std::vector<std::vector<MatX<S>>> worker_grads(static_cast<std::size_t>(nw));
    std::vector<MatX<S>> grads = net.params().zero_grads();

    auto validation_loss = [&](int /*epoch*/) {
        if (val_idx.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::vector<double> partial(static_cast<std::size_t>(nw), 0.0);
        parallel_chunks(static_cast<long>(val_idx.size()), nw, [&](long first, long last, int w) {
            for (long k = first; k < last; ++k) {
                const long i = val_idx[static_cast<std::size_t>(k)];
                // fixed draws across epochs so successive losses are comparable
                partial[static_cast<std::size_t>(w)] += cfm_loss_eval(
                    net, data.items[static_cast<std::size_t>(i)],
                    data.targets[static_cast<std::size_t>(i)],
                    derive_seed(seed, 0x7A11D, static_cast<std::uint64_t>(i)), cfg.sigma_min);
            }
        });
        double total = 0.0;
        for (double p : partial) total += p;
        return total / static_cast<double>(val_idx.size());
    };

    TrainResult result;
    result.curve = std::move(prior_curve);
    const int epoch0 = result.curve.empty() ? 0 : result.curve.back().epoch + 1;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_best = 0;
    std::vector<MatX<S>> best_params;
    auto snapshot = [&] {
        best_params.clear();
        for (int p = 0; p < net.params().size(); ++p) best_params.push_back(net.params().value(p));
    };

    const bool track_val = !val_idx.empty();
    for (int epoch = epoch0; epoch < epoch0 + cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(seed, 0xE9, static_cast<std::uint64_t>(epoch)));
        for (long i = static_cast<long>(train_idx.size()) - 1; i > 0; --i)
            std::swap(train_idx[static_cast<std::size_t>(i)],
                      train_idx[static_cast<std::size_t>(shuffle_rng.next_u64() %
                                                         static_cast<std::uint64_t>(i + 1))]);

        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1 = std::min(train_idx.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            const long bsize = static_cast<long>(b1 - b0);
            const double inv_batch = 1.0 / static_cast<double>(bsize);
            std::vector<double> partial(static_cast<std::size_t>(nw), 0.0);
            parallel_chunks(bsize, nw, [&](long first, long last, int w) {
                auto& wg = worker_grads[static_cast<std::size_t>(w)];
                if (wg.empty()) wg = net.params().zero_grads();
                std::vector<TokenItem<S>*> slice_items;
                std::vector<const VecX<S>*> slice_targets;
                std::vector<std::uint64_t> slice_seeds;
                slice_items.reserve(static_cast<std::size_t>(last - first));
                for (long k = first; k < last; ++k) {
                    const long i = train_idx[b0 + static_cast<std::size_t>(k)];
                    slice_items.push_back(&data.items[static_cast<std::size_t>(i)]);
                    slice_targets.push_back(&data.targets[static_cast<std::size_t>(i)]);
                    slice_seeds.push_back(derive_seed(seed, 0xB05, static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(b0 + static_cast<std::size_t>(k))));
                }
                partial[static_cast<std::size_t>(w)] = cfm_slice_backward<S>(
                    net, std::span<TokenItem<S>* const>(slice_items),
                    std::span<const VecX<S>* const>(slice_targets),
                    std::span<const std::uint64_t>(slice_seeds), cfg.sigma_min, inv_batch, true, wg);
            });
            for (auto& g : grads) g.setZero();
            double batch_loss = 0.0;
            for (int w = 0; w < nw; ++w) {
                auto& wg = worker_grads[static_cast<std::size_t>(w)];
                if (wg.empty()) continue;
                for (std::size_t p = 0; p < grads.size(); ++p) {
                    grads[p] += wg[p];
                    wg[p].setZero();
                }
                batch_loss += partial[static_cast<std::size_t>(w)];
            }
            opt.step(net.params(), grads);
            epoch_loss += batch_loss * inv_batch;
            ++batches;
        }
        epoch_loss /= static_cast<double>(std::max<long>(batches, 1));
        if (!std::isfinite(epoch_loss))
            throw TrainingError("training loss diverged at epoch " + std::to_string(epoch) +
                                " (curve length " + std::to_string(result.curve.size()) + ")");

        const double val = track_val ? validation_loss(epoch) : epoch_loss;
        result.curve.push_back({epoch, epoch_loss, val});
        if (cfg.verbose)
            std::fprintf(stderr, "[train] epoch %d train %.5f val %.5f\n", epoch, epoch_loss, val);

        if (val < best_val - cfg.min_delta) {
            best_val = val;
            best_epoch = epoch;
            since_best = 0;
            snapshot();
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    if (best_epoch >= 0 && !best_params.empty())
        for (int p = 0; p < net.params().size(); ++p)
            net.params().value(p) = best_params[static_cast<std::size_t>(p)];
    result.best_epoch = best_epoch;
    result.best_val_loss = best_val;
    return result;
}

}  // namespace hsbi
