#include "hsbi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsbi/parallel.hpp"

namespace hsbi {

// ----------------------------------------------------------------- classifier

BinaryClassifier::BinaryClassifier(int input_dim, const ClassifierConfig& cfg)
    : cfg_(cfg), input_dim_(input_dim) {
    int w_in = input_dim;
    for (int l = 0; l < cfg_.layers; ++l) {
        weight_ids_.push_back(store_.add("W" + std::to_string(l), w_in, cfg_.hidden));
        bias_ids_.push_back(store_.add("b" + std::to_string(l), 1, cfg_.hidden, ParamKind::Bias));
        w_in = cfg_.hidden;
    }
    weight_ids_.push_back(store_.add("Wout", w_in, 1));
    bias_ids_.push_back(store_.add("bout", 1, 1, ParamKind::Bias));
}

namespace {

typename Tape<double>::Var classifier_logits(Tape<double>& tape, const MatX<double>& x,
                                             const std::vector<int>& weights,
                                             const std::vector<int>& biases) {
    auto h = tape.constant(x);
    for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
        h = tape.add_row(tape.matmul(h, tape.param(weights[l])), tape.param(biases[l]));
        h = tape.relu(h);
    }
    return tape.add_row(tape.matmul(h, tape.param(weights.back())), tape.param(biases.back()));
}

}  // namespace

void BinaryClassifier::train(const Mat& features, const Vec& labels, std::uint64_t seed) {
    if (features.rows() != labels.size() || features.rows() < 4)
        throw DiagnosticError("classifier: need matching features/labels with >= 4 rows");
    if (features.cols() != input_dim_) throw DiagnosticError("classifier: feature width mismatch");

    Rng init_rng(derive_seed(seed, 0xC1A55));
    for (int i = 0; i < store_.size(); ++i) {
        auto& m = store_.value(i);
        if (store_.kind(i) == ParamKind::Bias) {
            m.setZero();
        } else {
            const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (long c = 0; c < m.cols(); ++c)
                for (long r = 0; r < m.rows(); ++r) m(r, c) = init_rng.uniform(-a, a);
        }
    }

    const long n = features.rows();
    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(seed, 0x5871));
    for (long i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffle_rng.next_u64() %
                                                 static_cast<std::uint64_t>(i + 1))]);
    const long n_val = std::max<long>(1, static_cast<long>(std::floor(cfg_.val_fraction *
                                                                      static_cast<double>(n))));
    std::vector<long> val_idx(order.begin(), order.begin() + n_val);
    std::vector<long> train_idx(order.begin() + n_val, order.end());

    Mat val_x(static_cast<long>(val_idx.size()), features.cols());
    MatX<double> val_y(static_cast<long>(val_idx.size()), 1);
    for (std::size_t i = 0; i < val_idx.size(); ++i) {
        val_x.row(static_cast<long>(i)) = features.row(val_idx[i]);
        val_y(static_cast<long>(i), 0) = labels[val_idx[i]];
    }

    AdamOptimizer<double> opt(cfg_.learning_rate);
    auto grads = store_.zero_grads();
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<MatX<double>> best_params;
    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
        Rng erng(derive_seed(seed, 0xE72C, static_cast<std::uint64_t>(epoch)));
        for (long i = static_cast<long>(train_idx.size()) - 1; i > 0; --i)
            std::swap(train_idx[static_cast<std::size_t>(i)],
                      train_idx[static_cast<std::size_t>(erng.next_u64() %
                                                         static_cast<std::uint64_t>(i + 1))]);
        for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += static_cast<std::size_t>(cfg_.batch_size)) {
            const std::size_t b1 =
                std::min(train_idx.size(), b0 + static_cast<std::size_t>(cfg_.batch_size));
            Mat bx(static_cast<long>(b1 - b0), features.cols());
            MatX<double> by(static_cast<long>(b1 - b0), 1);
            for (std::size_t k = b0; k < b1; ++k) {
                bx.row(static_cast<long>(k - b0)) = features.row(train_idx[k]);
                by(static_cast<long>(k - b0), 0) = labels[train_idx[k]];
            }
            Tape<double> tape(&store_, &grads);
            auto loss = tape.logistic_bce(classifier_logits(tape, bx, weight_ids_, bias_ids_), by);
            for (auto& g : grads) g.setZero();
            tape.backward(loss);
            if (!std::isfinite(tape.value(loss)(0, 0)))
                throw DiagnosticError("classifier training diverged");
            opt.step(store_, grads);
        }
        Tape<double> vtape(&store_, nullptr);
        const double val =
            vtape.value(vtape.logistic_bce(classifier_logits(vtape, val_x, weight_ids_, bias_ids_),
                                           val_y))(0, 0);
        if (val < best_val - cfg_.min_delta) {
            best_val = val;
            since_best = 0;
            best_params.clear();
            for (int p = 0; p < store_.size(); ++p) best_params.push_back(store_.value(p));
        } else if (++since_best >= cfg_.patience) {
            break;
        }
    }
    if (!best_params.empty())
        for (int p = 0; p < store_.size(); ++p)
            store_.value(p) = best_params[static_cast<std::size_t>(p)];
}

Vec BinaryClassifier::predict(const Mat& features) const {
    Tape<double> tape(const_cast<ParamStore<double>*>(&store_), nullptr);
    auto logits = classifier_logits(tape, features, weight_ids_, bias_ids_);
    const auto& z = tape.value(logits);
    Vec p(z.rows());
    for (long r = 0; r < z.rows(); ++r) p[r] = sigmoid(z(r, 0));
    return p;
}

// -------------------------------------------------------------------- lc2st

double lc2st_statistic(const Vec& classifier_probs) {
    double s = 0.0;
    for (long i = 0; i < classifier_probs.size(); ++i) {
        const double dev = classifier_probs[i] - 0.5;
        s += dev * dev;
    }
    return s / static_cast<double>(classifier_probs.size());
}

namespace {
double t_mse_statistic(const Vec& d_probs) { return lc2st_statistic(d_probs); }
}  // namespace

void Lc2stTester::fit(const PosteriorFn& posterior, const JointSampler& joint,
                      std::uint64_t seed) {
    if (cfg_.n_cal < 2) throw DiagnosticError("lc2st: need n_cal >= 2");
    if (cfg_.cv_folds < 2) throw DiagnosticError("lc2st: need cv_folds >= 2");

    // calibration pairs: class 0 from the joint, class 1 with theta replaced
    // by a posterior draw at the same x
    std::vector<Vec> thetas(static_cast<std::size_t>(cfg_.n_cal));
    std::vector<Vec> xs(static_cast<std::size_t>(cfg_.n_cal));
    for (long i = 0; i < cfg_.n_cal; ++i) {
        auto [theta, x] = joint(i);
        thetas[static_cast<std::size_t>(i)] = std::move(theta);
        xs[static_cast<std::size_t>(i)] = std::move(x);
    }
    d_theta_ = thetas[0].size();
    d_x_ = xs[0].size();
    const long dim = d_x_ + d_theta_;

    Mat features(2 * cfg_.n_cal, dim);
    Vec labels(2 * cfg_.n_cal);
    for (long i = 0; i < cfg_.n_cal; ++i) {
        features.row(i).head(d_x_) = xs[static_cast<std::size_t>(i)].transpose();
        features.row(i).tail(d_theta_) = thetas[static_cast<std::size_t>(i)].transpose();
        labels[i] = 0.0;
    }
    const int nw = worker_count(cfg_.workers);
    parallel_chunks(cfg_.n_cal, nw, [&](long first, long last, int) {
        for (long i = first; i < last; ++i) {
            const Mat q = posterior(xs[static_cast<std::size_t>(i)], 1,
                                    derive_seed(seed, 0x90F7, static_cast<std::uint64_t>(i)));
            features.row(cfg_.n_cal + i).head(d_x_) = xs[static_cast<std::size_t>(i)].transpose();
            features.row(cfg_.n_cal + i).tail(d_theta_) = q.row(0);
            labels[cfg_.n_cal + i] = 1.0;
        }
    });

    // feature z-scoring over the pooled calibration set
    mu_ = features.colwise().mean().transpose();
    sd_.resize(dim);
    for (long c = 0; c < dim; ++c) {
        const double v = (features.col(c).array() - mu_[c]).square().mean();
        sd_[c] = std::max(std::sqrt(v), 1e-8);
    }
    for (long r = 0; r < features.rows(); ++r)
        features.row(r) = ((features.row(r).transpose() - mu_).cwiseQuotient(sd_)).transpose();

    // cross-validated classifier ensemble for the test statistic
    const long n_rows = features.rows();
    std::vector<long> fold_of(static_cast<std::size_t>(n_rows));
    {
        std::vector<long> order(static_cast<std::size_t>(n_rows));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(seed, 0xF01D));
        for (long i = n_rows - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.next_u64() %
                                                     static_cast<std::uint64_t>(i + 1))]);
        for (long i = 0; i < n_rows; ++i)
            fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
                i % cfg_.cv_folds;
    }
    folds_.clear();
    folds_.reserve(static_cast<std::size_t>(cfg_.cv_folds));
    for (int f = 0; f < cfg_.cv_folds; ++f) folds_.emplace_back(static_cast<int>(dim), cfg_.classifier);
    parallel_chunks(cfg_.cv_folds, nw, [&](long first, long last, int) {
        for (long f = first; f < last; ++f) {
            std::vector<long> rows;
            for (long r = 0; r < n_rows; ++r)
                if (fold_of[static_cast<std::size_t>(r)] != f) rows.push_back(r);
            Mat fx(static_cast<long>(rows.size()), dim);
            Vec fy(static_cast<long>(rows.size()));
            for (std::size_t k = 0; k < rows.size(); ++k) {
                fx.row(static_cast<long>(k)) = features.row(rows[k]);
                fy[static_cast<long>(k)] = labels[rows[k]];
            }
            folds_[static_cast<std::size_t>(f)].train(
                fx, fy, derive_seed(seed, 0xC4, static_cast<std::uint64_t>(f)));
        }
    });

    // null ensemble: H classifiers on independently permuted class labels
    nulls_.clear();
    if (cfg_.null_ensemble > 0) {
        nulls_.reserve(static_cast<std::size_t>(cfg_.null_ensemble));
        for (int h = 0; h < cfg_.null_ensemble; ++h)
            nulls_.emplace_back(static_cast<int>(dim), cfg_.classifier);
        parallel_chunks(cfg_.null_ensemble, nw, [&](long first, long last, int) {
            for (long h = first; h < last; ++h) {
                Vec null_labels = labels;
                Rng prng(derive_seed(seed, 0x9E12, static_cast<std::uint64_t>(h)));
                for (long i = n_rows - 1; i > 0; --i)
                    std::swap(null_labels[i],
                              null_labels[static_cast<long>(prng.next_u64() %
                                                            static_cast<std::uint64_t>(i + 1))]);
                nulls_[static_cast<std::size_t>(h)].train(
                    features, null_labels, derive_seed(seed, 0x9E13, static_cast<std::uint64_t>(h)));
            }
        });
    }
}

Lc2stResult Lc2stTester::evaluate(const Vec& x_obs, const Mat& posterior_draws) const {
    if (folds_.empty()) throw DiagnosticError("lc2st: evaluate called before fit");
    if (x_obs.size() != d_x_ || posterior_draws.cols() != d_theta_)
        throw DiagnosticError("lc2st: evaluation shapes do not match the fitted tester");
    const long n_eval = posterior_draws.rows();
    if (n_eval < 1) throw DiagnosticError("lc2st: need >= 1 posterior draw");
    const long dim = d_x_ + d_theta_;
    Mat eval_rows(n_eval, dim);
    for (long i = 0; i < n_eval; ++i) {
        Vec row(dim);
        row.head(d_x_) = x_obs;
        row.tail(d_theta_) = posterior_draws.row(i).transpose();
        eval_rows.row(i) = ((row - mu_).cwiseQuotient(sd_)).transpose();
    }

    Vec mean_prob = Vec::Zero(n_eval);
    for (const auto& clf : folds_) mean_prob += clf.predict(eval_rows);
    mean_prob /= static_cast<double>(folds_.size());

    Lc2stResult result;
    result.t_mse = t_mse_statistic(mean_prob);
    if (!nulls_.empty()) {
        result.null_stats.reserve(nulls_.size());
        for (const auto& clf : nulls_)
            result.null_stats.push_back(t_mse_statistic(clf.predict(eval_rows)));
        long exceed = 0;
        for (double t : result.null_stats) exceed += (t >= result.t_mse) ? 1 : 0;
        result.p_value = static_cast<double>(exceed) / static_cast<double>(nulls_.size());
        std::vector<double> sorted = result.null_stats;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t q95 =
            std::min(sorted.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(sorted.size())));
        result.null_q95 = sorted[q95];
    } else {
        result.p_value = std::numeric_limits<double>::quiet_NaN();
        result.null_q95 = std::numeric_limits<double>::quiet_NaN();
    }
    return result;
}

Lc2stResult lc2st(const PosteriorFn& posterior, const JointSampler& joint, const Vec& x_obs,
                  const Lc2stConfig& cfg, std::uint64_t seed) {
    if (cfg.n_eval < 1) throw DiagnosticError("lc2st: need n_eval >= 1");
    Lc2stTester tester(cfg);
    tester.fit(posterior, joint, seed);
    const Mat post_obs = posterior(x_obs, cfg.n_eval, derive_seed(seed, 0x0B5));
    return tester.evaluate(x_obs, post_obs);
}

// --------------------------------------------------------------------- tarp

namespace {

double kolmogorov_p(double d, long n) {
    if (n <= 0) return 1.0;
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = d * (sn + 0.12 + 0.11 / sn);
    if (lambda < 1e-6) return 1.0;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) *
                            std::exp(-2.0 * lambda * lambda * static_cast<double>(k) *
                                     static_cast<double>(k));
        p += term;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TarpResult tarp(const std::vector<Mat>& posterior_samples, const Mat& true_params,
                std::uint64_t seed, int n_alpha) {
    const long n_cases = static_cast<long>(posterior_samples.size());
    if (n_cases < 2 || true_params.rows() != n_cases)
        throw DiagnosticError("tarp: need >= 2 cases with matching true parameters");
    const long dim = true_params.cols();
    for (const auto& m : posterior_samples)
        if (m.rows() < 2 || m.cols() != dim)
            throw DiagnosticError("tarp: each case needs >= 2 samples of the true-parameter width");

    // pooled z-scoring; all-zero pooled variance means degenerate samples
    Vec mu = Vec::Zero(dim), m2 = Vec::Zero(dim);
    long total = 0;
    for (const auto& m : posterior_samples) {
        for (long r = 0; r < m.rows(); ++r) {
            mu += m.row(r).transpose();
            m2 += m.row(r).cwiseProduct(m.row(r)).transpose();
            ++total;
        }
    }
    mu /= static_cast<double>(total);
    Vec var = (m2 / static_cast<double>(total) - mu.cwiseProduct(mu)).cwiseMax(0.0);
    if (var.maxCoeff() <= 0.0)
        throw DiagnosticError("tarp: degenerate posterior samples (zero variance everywhere)");
    Vec sd = var.cwiseSqrt().cwiseMax(1e-12);

    Rng rng(derive_seed(seed, 0x7A99));
    Vec coverage(n_cases);
    for (long j = 0; j < n_cases; ++j) {
        const Mat& samp = posterior_samples[static_cast<std::size_t>(j)];
        Vec lo = samp.colwise().minCoeff().transpose();
        Vec hi = samp.colwise().maxCoeff().transpose();
        Vec ref(dim);
        for (long c = 0; c < dim; ++c) ref[c] = rng.uniform(lo[c], hi[c]);
        const Vec ref_z = (ref - mu).cwiseQuotient(sd);
        const Vec true_z = (true_params.row(j).transpose() - mu).cwiseQuotient(sd);
        const double d_star = (true_z - ref_z).norm();
        long inside = 0;
        for (long r = 0; r < samp.rows(); ++r) {
            const Vec s_z = (samp.row(r).transpose() - mu).cwiseQuotient(sd);
            inside += ((s_z - ref_z).norm() < d_star) ? 1 : 0;
        }
        coverage[j] = static_cast<double>(inside) / static_cast<double>(samp.rows());
    }

    TarpResult result;
    result.alpha.resize(n_alpha);
    result.ecp.resize(n_alpha);
    for (int k = 0; k < n_alpha; ++k) {
        const double a = static_cast<double>(k) / static_cast<double>(n_alpha - 1);
        result.alpha[k] = a;
        long covered = 0;
        for (long j = 0; j < n_cases; ++j) covered += (coverage[j] <= a) ? 1 : 0;
        result.ecp[k] = static_cast<double>(covered) / static_cast<double>(n_cases);
    }
    double atc = 0.0;
    for (int k = 0; k + 1 < n_alpha; ++k) {
        const double f0 = std::fabs(result.ecp[k] - result.alpha[k]);
        const double f1 = std::fabs(result.ecp[k + 1] - result.alpha[k + 1]);
        atc += 0.5 * (f0 + f1) * (result.alpha[k + 1] - result.alpha[k]);
    }
    result.atc = atc;

    std::vector<double> sorted(coverage.data(), coverage.data() + n_cases);
    std::sort(sorted.begin(), sorted.end());
    double d_ks = 0.0;
    for (long i = 0; i < n_cases; ++i) {
        const double f = sorted[static_cast<std::size_t>(i)];
        d_ks = std::max(d_ks, std::fabs(static_cast<double>(i + 1) / static_cast<double>(n_cases) - f));
        d_ks = std::max(d_ks, std::fabs(f - static_cast<double>(i) / static_cast<double>(n_cases)));
    }
    result.ks_p = kolmogorov_p(d_ks, n_cases);
    return result;
}

// --------------------------------------------------------------------- mmd2

Mmd2Result mmd2_test(const Mat& samples_a, const Mat& samples_b, int n_permutations,
                     std::uint64_t seed) {
    const long m = samples_a.rows(), n = samples_b.rows();
    if (m < 2 || n < 2) throw DiagnosticError("mmd2: both sample sets need >= 2 rows");
    if (samples_a.cols() != samples_b.cols()) throw DiagnosticError("mmd2: dimension mismatch");
    if (n_permutations < 1) throw DiagnosticError("mmd2: n_permutations must be >= 1");

    const long total = m + n;
    Mat pooled(total, samples_a.cols());
    pooled.topRows(m) = samples_a;
    pooled.bottomRows(n) = samples_b;

    Mat sq_dist(total, total);
    for (long i = 0; i < total; ++i) {
        sq_dist(i, i) = 0.0;
        for (long j = i + 1; j < total; ++j) {
            const double d2 = (pooled.row(i) - pooled.row(j)).squaredNorm();
            sq_dist(i, j) = d2;
            sq_dist(j, i) = d2;
        }
    }
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(total * (total - 1) / 2));
    for (long i = 0; i < total; ++i)
        for (long j = i + 1; j < total; ++j) dists.push_back(std::sqrt(sq_dist(i, j)));
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(dists.size() / 2), dists.end());
    const double sigma = std::max(dists[dists.size() / 2], 1e-12);

    Mat kernel = (-sq_dist.array() / (2.0 * sigma * sigma)).exp();

    auto statistic = [&](const std::vector<long>& idx) {
        double kaa = 0.0, kbb = 0.0, kab = 0.0;
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < m; ++j)
                if (i != j) kaa += kernel(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j)
                if (i != j)
                    kbb += kernel(idx[static_cast<std::size_t>(m + i)], idx[static_cast<std::size_t>(m + j)]);
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j)
                kab += kernel(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(m + j)]);
        return kaa / static_cast<double>(m * (m - 1)) + kbb / static_cast<double>(n * (n - 1)) -
               2.0 * kab / static_cast<double>(m * n);
    };

    std::vector<long> identity(static_cast<std::size_t>(total));
    std::iota(identity.begin(), identity.end(), 0);
    Mmd2Result result;
    result.mmd2 = statistic(identity);

    Rng rng(derive_seed(seed, 0x33D2));
    long exceed = 0;
    std::vector<long> perm = identity;
    for (int p = 0; p < n_permutations; ++p) {
        for (long i = total - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1))]);
        if (statistic(perm) >= result.mmd2) ++exceed;
    }
    result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + n_permutations);
    return result;
}

// ------------------------------------------------------- posterior predictive

namespace {

template <typename DrawFn>
Mat predictive_impl(const HierarchicalModelSpec& model, const Mat& posterior_samples, int n_sites,
                    const Vec& schedule_flat, const DrawFn& draw) {
    const int d_g = model.d_global();
    const int pts = model.functional
                        ? static_cast<int>(schedule_flat.size() / std::max(n_sites, 1))
                        : 0;
    const int d_y = model.functional ? pts : model.d_obs;
    if (posterior_samples.cols() != d_g + static_cast<long>(n_sites) * model.d_local)
        throw LayoutError("posterior_predictive: sample width does not match the layout");
    Mat out(posterior_samples.rows(), static_cast<long>(n_sites) * d_y);
    for (long i = 0; i < posterior_samples.rows(); ++i) {
        const Vec theta_g = posterior_samples.row(i).head(d_g).transpose();
        for (int s = 0; s < n_sites; ++s) {
            const Vec eta_s = posterior_samples.row(i)
                                  .segment(d_g + static_cast<long>(s) * model.d_local, model.d_local)
                                  .transpose();
            std::vector<double> sched;
            if (model.functional) {
                sched.resize(static_cast<std::size_t>(pts));
                for (int j = 0; j < pts; ++j)
                    sched[static_cast<std::size_t>(j)] = schedule_flat[static_cast<long>(s) * pts + j];
            }
            out.row(i).segment(static_cast<long>(s) * d_y, d_y) =
                draw(theta_g, eta_s, sched, i, s).transpose();
        }
    }
    return out;
}

}  // namespace

Mat posterior_predictive(const HierarchicalModelSpec& model, const Mat& posterior_samples,
                         int n_sites, const Vec& schedule_flat, std::uint64_t seed,
                         BudgetLedger* ledger) {
    return predictive_impl(model, posterior_samples, n_sites, schedule_flat,
                           [&](const Vec& tg, const Vec& es, const std::vector<double>& sched,
                               long i, int s) {
                               return simulate_site(model, tg, es, sched,
                                                    derive_seed(seed, static_cast<std::uint64_t>(i),
                                                                static_cast<std::uint64_t>(s)),
                                                    ledger);
                           });
}

Mat posterior_predictive(const SurrogateSampler& surrogate, const HierarchicalModelSpec& model,
                         const Mat& posterior_samples, int n_sites, const Vec& schedule_flat,
                         std::uint64_t seed, BudgetLedger* ledger) {
    return predictive_impl(model, posterior_samples, n_sites, schedule_flat,
                           [&](const Vec& tg, const Vec& es, const std::vector<double>& sched,
                               long i, int s) {
                               return surrogate.draw(tg, es, sched,
                                                     derive_seed(seed, static_cast<std::uint64_t>(i),
                                                                 static_cast<std::uint64_t>(s)),
                                                     ledger);
                           });
}

// ------------------------------------------------------- factorisation oracle

double factorisation_discrepancy(int n_sites, int grid_points, std::uint64_t seed,
                                 const FactorisationConfig& cfg) {
    if (n_sites < 1) throw DomainError("factorisation oracle: n_sites must be >= 1");
    if (grid_points < 3) throw DomainError("factorisation oracle: grid too small");
    Rng rng(derive_seed(seed, 0xFAC7));
    const double theta_true = rng.normal(cfg.prior_mean, cfg.prior_sd);
    const double shared = cfg.shared_noise_sd > 0.0 ? rng.normal(0.0, cfg.shared_noise_sd) : 0.0;
    Vec y(n_sites);
    for (int s = 0; s < n_sites; ++s) y[s] = theta_true + shared + rng.normal(0.0, cfg.noise_sd);

    // per-site marginal likelihood variance (what the compositional form sees)
    const double site_var = cfg.noise_sd * cfg.noise_sd + cfg.shared_noise_sd * cfg.shared_noise_sd;
    const double prior_var = cfg.prior_sd * cfg.prior_sd;

    // Joint posterior under the true generative model: with shared noise the
    // sites are correlated, precision = 1/prior_var + n / (noise^2 + n shared^2).
    const double like_prec =
        static_cast<double>(n_sites) /
        (cfg.noise_sd * cfg.noise_sd + static_cast<double>(n_sites) * cfg.shared_noise_sd * cfg.shared_noise_sd);
    const double post_prec = 1.0 / prior_var + like_prec;
    const double post_var = 1.0 / post_prec;
    const double post_mean =
        post_var * (cfg.prior_mean / prior_var + like_prec * y.mean());

    // Compositional form p(theta)^{1-n} prod_s p(theta | y_s) built from the
    // per-site marginal posteriors.
    const double v1 = 1.0 / (1.0 / prior_var + 1.0 / site_var);
    auto single_site_posterior_log = [&](double theta, double ys) {
        const double m1 = v1 * (cfg.prior_mean / prior_var + ys / site_var);
        const double d = theta - m1;
        return -0.5 * d * d / v1;
    };
    auto prior_log = [&](double theta) {
        const double d = theta - cfg.prior_mean;
        return -0.5 * d * d / prior_var;
    };

    const double half = cfg.grid_halfwidth_sds * std::sqrt(post_var);
    Vec log_joint(grid_points), log_comp(grid_points);
    for (int k = 0; k < grid_points; ++k) {
        const double theta = post_mean - half +
                             2.0 * half * static_cast<double>(k) / static_cast<double>(grid_points - 1);
        const double dj = theta - post_mean;
        log_joint[k] = -0.5 * dj * dj / post_var;
        double lc = (1.0 - static_cast<double>(n_sites)) * prior_log(theta);
        for (int s = 0; s < n_sites; ++s) lc += single_site_posterior_log(theta, y[s]);
        log_comp[k] = lc;
    }
    log_joint.array() -= log_joint.mean();
    log_comp.array() -= log_comp.mean();
    return (log_joint - log_comp).cwiseAbs().maxCoeff();
}

// ------------------------------------------------------------ cost accounting

CostReport budget_report(long n1, long n2, int n_sites, double t_sim_seconds,
                         double t_like_seconds) {
    CostReport r;
    r.n1 = n1;
    r.n2 = n2;
    r.n_sites = n_sites;
    r.t_sim_seconds = t_sim_seconds;
    r.t_like_seconds = t_like_seconds;
    r.npe_seconds = static_cast<double>(n1) * n_sites * t_sim_seconds;
    r.pf_seconds = static_cast<double>(n1) * (static_cast<double>(n_sites) / 2.0) * t_sim_seconds;
    r.lf_seconds = static_cast<double>(n1) * t_sim_seconds +
                   static_cast<double>(n2) * n_sites * t_like_seconds;
    r.per_draw_speedup = t_like_seconds > 0.0 ? t_sim_seconds / t_like_seconds : 0.0;
    r.end_to_end_speedup = r.lf_seconds > 0.0 ? r.npe_seconds / r.lf_seconds : 0.0;
    return r;
}

long CostReport::per_draw_speedup_rounded() const { return std::llround(per_draw_speedup); }
double CostReport::npe_hours_1dp() const { return std::round(npe_seconds / 360.0) / 10.0; }
double CostReport::pf_hours_1dp() const { return std::round(pf_seconds / 360.0) / 10.0; }
double CostReport::lf_hours_1dp() const { return std::round(lf_seconds / 360.0) / 10.0; }

json CostReport::to_json() const {
    return json{{"n1", n1},
                {"n2", n2},
                {"n_sites", n_sites},
                {"t_sim_seconds", t_sim_seconds},
                {"t_like_seconds", t_like_seconds},
                {"npe_seconds", npe_seconds},
                {"pf_seconds", pf_seconds},
                {"lf_seconds", lf_seconds},
                {"npe_hours", npe_hours_1dp()},
                {"pf_hours", pf_hours_1dp()},
                {"lf_hours", lf_hours_1dp()},
                {"per_draw_speedup", per_draw_speedup},
                {"per_draw_speedup_rounded", per_draw_speedup_rounded()},
                {"end_to_end_speedup", end_to_end_speedup}};
}

}  // namespace hsbi
