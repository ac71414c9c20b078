#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hsbi/errors.hpp"
#include "hsbi/rng.hpp"

namespace hsbi {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class ParamKind { Weight, Bias, LayerNormGain, LayerNormBias, Embedding };

// Named trainable matrices; gradients live outside so several tapes can
// accumulate into one store (summed across a batch, or per worker thread).
template <typename S>
class ParamStore {
public:
    int add(const std::string& name, int rows, int cols, ParamKind kind = ParamKind::Weight) {
        names_.push_back(name);
        kinds_.push_back(kind);
        values_.emplace_back(MatX<S>::Zero(rows, cols));
        return static_cast<int>(values_.size()) - 1;
    }

    MatX<S>& value(int id) { return values_[static_cast<std::size_t>(id)]; }
    const MatX<S>& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
    const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
    ParamKind kind(int id) const { return kinds_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(values_.size()); }

    std::vector<MatX<S>> zero_grads() const {
        std::vector<MatX<S>> g;
        g.reserve(values_.size());
        for (const auto& v : values_) g.emplace_back(MatX<S>::Zero(v.rows(), v.cols()));
        return g;
    }

    long total_entries() const {
        long n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<ParamKind> kinds_;
    std::vector<MatX<S>> values_;
};

// Dynamic computation tape over matrix-valued nodes. Values are computed
// eagerly on op construction; backward() replays adjoints in reverse.
template <typename S>
class Tape {
public:
    struct Var {
        int idx = -1;
    };

    explicit Tape(ParamStore<S>* params = nullptr, std::vector<MatX<S>>* param_grads = nullptr)
        : params_(params), param_grads_(param_grads) {}

    void clear() {
        nodes_.clear();
        param_cache_.clear();
    }
    std::size_t size() const { return nodes_.size(); }

    const MatX<S>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
    const MatX<S>& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].grad; }

    Var constant(MatX<S> m) {
        return push(std::move(m), false, {}, nullptr);
    }

    // Leaf for a stored parameter; memoised so repeated use within one tape
    // shares a single node (adjoints still sum correctly).
    Var param(int param_id) {
        if (!params_) throw NumericError("Tape: no parameter store attached");
        if (param_cache_.size() < static_cast<std::size_t>(params_->size()))
            param_cache_.resize(static_cast<std::size_t>(params_->size()), -1);
        int& cached = param_cache_[static_cast<std::size_t>(param_id)];
        if (cached >= 0) return Var{cached};
        Var v = push(params_->value(param_id), true, {}, nullptr);
        nodes_.back().param_id = param_id;
        cached = v.idx;
        return v;
    }

    Var matmul(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.cols() != B.rows()) throw NumericError("matmul: inner dimensions differ");
        return push(A * B, needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        const MatX<S>& g = n.grad;
                        if (t.needs(n.parents[0]))
                            t.grad_ref(n.parents[0]).noalias() += g * t.val(n.parents[1]).transpose();
                        if (t.needs(n.parents[1]))
                            t.grad_ref(n.parents[1]).noalias() += t.val(n.parents[0]).transpose() * g;
                    });
    }

    Var add(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rows() != B.rows() || A.cols() != B.cols()) throw NumericError("add: shape mismatch");
        return push(A + B, needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad;
                        if (t.needs(n.parents[1])) t.grad_ref(n.parents[1]) += n.grad;
                    });
    }

    Var sub(Var a, Var b) {
        return push(val(a) - val(b), needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad;
                        if (t.needs(n.parents[1])) t.grad_ref(n.parents[1]) -= n.grad;
                    });
    }

    // rows of a plus the single-row bias b
    Var add_row(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (B.rows() != 1 || B.cols() != A.cols()) throw NumericError("add_row: bias must be 1 x cols");
        return push(A.rowwise() + B.row(0), needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad;
                        if (t.needs(n.parents[1]))
                            t.grad_ref(n.parents[1]).row(0) += n.grad.colwise().sum();
                    });
    }

    Var hadamard(Var a, Var b) {
        return push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0]))
                            t.grad_ref(n.parents[0]) += n.grad.cwiseProduct(t.val(n.parents[1]));
                        if (t.needs(n.parents[1]))
                            t.grad_ref(n.parents[1]) += n.grad.cwiseProduct(t.val(n.parents[0]));
                    });
    }

    Var scale(Var a, S c) {
        return push(val(a) * c, needs(a), {a},
                    [c](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad * c;
                    });
    }

    Var transpose(Var a) {
        return push(val(a).transpose(), needs(a), {a},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad.transpose();
                    });
    }

    Var slice_cols(Var a, int start, int count) {
        const auto& A = val(a);
        if (start < 0 || start + count > A.cols()) throw NumericError("slice_cols: out of range");
        return push(A.middleCols(start, count), needs(a), {a},
                    [start, count](Tape& t, Node& n) {
                        if (t.needs(n.parents[0]))
                            t.grad_ref(n.parents[0]).middleCols(start, count) += n.grad;
                    });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw NumericError("concat_cols: empty");
        long rows = val(parts[0]).rows(), cols = 0;
        bool any = false;
        for (Var p : parts) {
            if (val(p).rows() != rows) throw NumericError("concat_cols: row mismatch");
            cols += val(p).cols();
            any = any || needs(p);
        }
        MatX<S> out(rows, cols);
        long c = 0;
        for (Var p : parts) {
            out.middleCols(c, val(p).cols()) = val(p);
            c += val(p).cols();
        }
        return push(std::move(out), any, parts,
                    [](Tape& t, Node& n) {
                        long c = 0;
                        for (Var p : n.parents) {
                            const long w = t.val(p).cols();
                            if (t.needs(p)) t.grad_ref(p) += n.grad.middleCols(c, w);
                            c += w;
                        }
                    });
    }

    Var select_rows(Var a, std::vector<int> rows) {
        const auto& A = val(a);
        MatX<S> out(static_cast<long>(rows.size()), A.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= A.rows()) throw NumericError("select_rows: out of range");
            out.row(static_cast<long>(i)) = A.row(rows[i]);
        }
        return push(std::move(out), needs(a), {a},
                    [rows = std::move(rows)](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        auto& g = t.grad_ref(n.parents[0]);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            g.row(rows[i]) += n.grad.row(static_cast<long>(i));
                    });
    }

    // rows of an embedding table gathered by id; adjoint scatters into rows
    Var embedding_rows(Var table, std::vector<int> ids) {
        const auto& E = val(table);
        MatX<S> out(static_cast<long>(ids.size()), E.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= E.rows())
                throw NumericError("embedding_rows: id " + std::to_string(ids[i]) +
                                   " outside table of " + std::to_string(E.rows()) + " rows");
            out.row(static_cast<long>(i)) = E.row(ids[i]);
        }
        return push(std::move(out), needs(table), {table},
                    [ids = std::move(ids)](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        auto& g = t.grad_ref(n.parents[0]);
                        for (std::size_t i = 0; i < ids.size(); ++i)
                            g.row(ids[i]) += n.grad.row(static_cast<long>(i));
                    });
    }

    Var relu(Var a) {
        return push(val(a).cwiseMax(S(0)), needs(a), {a},
                    [](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        t.grad_ref(n.parents[0]) +=
                            n.grad.cwiseProduct((t.val(n.parents[0]).array() > S(0))
                                                    .template cast<S>()
                                                    .matrix());
                    });
    }

    Var gelu(Var a) {
        const auto& A = val(a);
        MatX<S> out = A.unaryExpr([](S x) {
            return S(0.5) * x * (S(1) + S(std::erf(static_cast<double>(x) / std::sqrt(2.0))));
        });
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        const auto& X = t.val(n.parents[0]);
                        MatX<S> d = X.unaryExpr([](S x) {
                            const double xd = static_cast<double>(x);
                            const double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
                            const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
                            return S(cdf + xd * pdf);
                        });
                        t.grad_ref(n.parents[0]) += n.grad.cwiseProduct(d);
                    });
    }

    Var softmax_rows(Var a) {
        const auto& A = val(a);
        MatX<S> out(A.rows(), A.cols());
        for (long r = 0; r < A.rows(); ++r) {
            const S mx = A.row(r).maxCoeff();
            VecX<S> e = (A.row(r).array() - mx).exp().matrix().transpose();
            out.row(r) = (e / e.sum()).transpose();
        }
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        const MatX<S>& y = n.value;
                        const MatX<S>& g = n.grad;
                        auto& out = t.grad_ref(n.parents[0]);
                        for (long r = 0; r < y.rows(); ++r) {
                            const S dot = y.row(r).dot(g.row(r));
                            out.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
                        }
                    });
    }

    // y = gamma * (x - mean) / sqrt(var + eps) + beta, per row over features
    Var layer_norm(Var a, Var gamma, Var beta, S eps = S(1e-5)) {
        const auto& A = val(a);
        const auto& G = val(gamma);
        const auto& B = val(beta);
        if (G.rows() != 1 || B.rows() != 1 || G.cols() != A.cols() || B.cols() != A.cols())
            throw NumericError("layer_norm: gamma/beta must be 1 x cols");
        const S d = static_cast<S>(A.cols());
        MatX<S> xhat(A.rows(), A.cols());
        VecX<S> inv_sd(A.rows());
        for (long r = 0; r < A.rows(); ++r) {
            const S mu = A.row(r).mean();
            const S var = (A.row(r).array() - mu).square().sum() / d;
            const S is = S(1) / std::sqrt(var + eps);
            inv_sd[r] = is;
            xhat.row(r) = ((A.row(r).array() - mu) * is).matrix();
        }
        MatX<S> out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
        Var v = push(std::move(out), needs(a) || needs(gamma) || needs(beta), {a, gamma, beta},
                     [xhat, inv_sd](Tape& t, Node& n) {
                         const MatX<S>& g = n.grad;
                         const auto& G = t.val(n.parents[1]);
                         if (t.needs(n.parents[1]))
                             t.grad_ref(n.parents[1]).row(0) +=
                                 g.cwiseProduct(xhat).colwise().sum();
                         if (t.needs(n.parents[2]))
                             t.grad_ref(n.parents[2]).row(0) += g.colwise().sum();
                         if (t.needs(n.parents[0])) {
                             auto& gx = t.grad_ref(n.parents[0]);
                             const S d = static_cast<S>(g.cols());
                             for (long r = 0; r < g.rows(); ++r) {
                                 VecX<S> gy =
                                     g.row(r).cwiseProduct(G.row(0)).transpose();
                                 const S m1 = gy.mean();
                                 const S m2 = gy.dot(xhat.row(r).transpose()) / d;
                                 gx.row(r) += (inv_sd[r] *
                                               (gy.array() - m1 - xhat.row(r).transpose().array() * m2))
                                                  .matrix()
                                                  .transpose();
                             }
                         }
                     });
        return v;
    }

    // inverted dropout with mask fixed at construction
    Var dropout(Var a, double rate, Rng& rng) {
        if (rate <= 0.0) return a;
        if (rate >= 1.0) throw NumericError("dropout: rate must be < 1");
        const auto& A = val(a);
        MatX<S> mask(A.rows(), A.cols());
        const S keep_scale = S(1.0 / (1.0 - rate));
        for (long c = 0; c < A.cols(); ++c)
            for (long r = 0; r < A.rows(); ++r)
                mask(r, c) = rng.uniform01() < rate ? S(0) : keep_scale;
        return push(A.cwiseProduct(mask), needs(a), {a},
                    [mask](Tape& t, Node& n) {
                        if (t.needs(n.parents[0]))
                            t.grad_ref(n.parents[0]) += n.grad.cwiseProduct(mask);
                    });
    }

    // sum of squared entries -> 1x1
    Var sum_squares(Var a) {
        MatX<S> out(1, 1);
        out(0, 0) = val(a).squaredNorm();
        return push(std::move(out), needs(a), {a},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0]))
                            t.grad_ref(n.parents[0]) += S(2) * n.grad(0, 0) * t.val(n.parents[0]);
                    });
    }

    Var add_scalar(Var a, Var b) {  // both 1x1
        MatX<S> out(1, 1);
        out(0, 0) = val(a)(0, 0) + val(b)(0, 0);
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        if (t.needs(n.parents[0])) t.grad_ref(n.parents[0]) += n.grad;
                        if (t.needs(n.parents[1])) t.grad_ref(n.parents[1]) += n.grad;
                    });
    }

    // Scaled-dot-product attention over stacked equal-length blocks: rows
    // [b*T, (b+1)*T) of Q, K, V form item b; softmax never crosses blocks.
    Var block_attention(Var q, Var k, Var v, int block_rows, S scale) {
        const auto& Q = val(q);
        const auto& K = val(k);
        const auto& V = val(v);
        if (Q.rows() != K.rows() || Q.rows() != V.rows() || Q.rows() % block_rows != 0)
            throw NumericError("block_attention: rows must stack equal blocks");
        const long n_blocks = Q.rows() / block_rows;
        auto probs = std::make_shared<std::vector<MatX<S>>>();
        probs->reserve(static_cast<std::size_t>(n_blocks));
        MatX<S> out(Q.rows(), V.cols());
        for (long b = 0; b < n_blocks; ++b) {
            const long r0 = b * block_rows;
            MatX<S> scores = scale * (Q.middleRows(r0, block_rows) *
                                      K.middleRows(r0, block_rows).transpose());
            for (long r = 0; r < block_rows; ++r) {
                const S mx = scores.row(r).maxCoeff();
                scores.row(r) = (scores.row(r).array() - mx).exp();
                scores.row(r) /= scores.row(r).sum();
            }
            out.middleRows(r0, block_rows).noalias() =
                scores * V.middleRows(r0, block_rows);
            probs->push_back(std::move(scores));
        }
        return push(std::move(out), needs(q) || needs(k) || needs(v), {q, k, v},
                    [probs, block_rows, scale](Tape& t, Node& n) {
                        const auto& Q = t.val(n.parents[0]);
                        const auto& K = t.val(n.parents[1]);
                        const auto& V = t.val(n.parents[2]);
                        const long n_blocks = Q.rows() / block_rows;
                        for (long b = 0; b < n_blocks; ++b) {
                            const long r0 = b * block_rows;
                            const MatX<S>& P = (*probs)[static_cast<std::size_t>(b)];
                            const MatX<S> dO = n.grad.middleRows(r0, block_rows);
                            if (t.needs(n.parents[2]))
                                t.grad_ref(n.parents[2]).middleRows(r0, block_rows).noalias() +=
                                    P.transpose() * dO;
                            MatX<S> dP = dO * V.middleRows(r0, block_rows).transpose();
                            MatX<S> dS(block_rows, block_rows);
                            for (long r = 0; r < block_rows; ++r) {
                                const S dot = P.row(r).dot(dP.row(r));
                                dS.row(r) =
                                    (dP.row(r).array() - dot).matrix().cwiseProduct(P.row(r));
                            }
                            if (t.needs(n.parents[0]))
                                t.grad_ref(n.parents[0]).middleRows(r0, block_rows).noalias() +=
                                    scale * (dS * K.middleRows(r0, block_rows));
                            if (t.needs(n.parents[1]))
                                t.grad_ref(n.parents[1]).middleRows(r0, block_rows).noalias() +=
                                    scale * (dS.transpose() * Q.middleRows(r0, block_rows));
                        }
                    });
    }

    // mean binary cross-entropy of sigmoid(logits) against 0/1 labels,
    // evaluated in the numerically stable softplus form
    Var logistic_bce(Var logits, const MatX<S>& labels) {
        const auto& Z = val(logits);
        if (Z.rows() != labels.rows() || Z.cols() != 1 || labels.cols() != 1)
            throw NumericError("logistic_bce: logits and labels must be n x 1");
        const S inv_n = S(1) / static_cast<S>(Z.rows());
        double total = 0.0;
        for (long r = 0; r < Z.rows(); ++r) {
            const double z = static_cast<double>(Z(r, 0));
            const double y = static_cast<double>(labels(r, 0));
            total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
        }
        MatX<S> out(1, 1);
        out(0, 0) = S(total) * inv_n;
        return push(std::move(out), needs(logits), {logits},
                    [labels, inv_n](Tape& t, Node& n) {
                        if (!t.needs(n.parents[0])) return;
                        const auto& Z = t.val(n.parents[0]);
                        auto& g = t.grad_ref(n.parents[0]);
                        const S scale = n.grad(0, 0) * inv_n;
                        for (long r = 0; r < Z.rows(); ++r) {
                            const double z = static_cast<double>(Z(r, 0));
                            const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                                      : std::exp(z) / (1.0 + std::exp(z));
                            g(r, 0) += scale * S(sig - static_cast<double>(labels(r, 0)));
                        }
                    });
    }

    // Seeds d(loss)/d(root) = 1 and accumulates parameter gradients into the
    // attached gradient store.
    void backward(Var root) {
        auto& rn = nodes_[static_cast<std::size_t>(root.idx)];
        if (rn.value.size() != 1) throw NumericError("backward: root must be scalar");
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad.setZero(n.value.rows(), n.value.cols());
        rn.grad.setOnes(1, 1);
        for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs_grad) continue;
            if (n.backward) n.backward(*this, n);
            if (n.param_id >= 0 && param_grads_)
                (*param_grads_)[static_cast<std::size_t>(n.param_id)] += n.grad;
        }
    }

private:
    struct Node {
        MatX<S> value;
        MatX<S> grad;
        std::vector<Var> parents;
        std::function<void(Tape&, Node&)> backward;
        int param_id = -1;
        bool needs_grad = false;
    };

    const MatX<S>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].needs_grad; }
    MatX<S>& grad_ref(Var v) { return nodes_[static_cast<std::size_t>(v.idx)].grad; }

    Var push(MatX<S> value, bool needs_grad, std::vector<Var> parents,
             std::function<void(Tape&, Node&)> backward) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.needs_grad = needs_grad;
        if (needs_grad) n.grad = MatX<S>::Zero(n.value.rows(), n.value.cols());
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::vector<int> param_cache_;
    ParamStore<S>* params_ = nullptr;
    std::vector<MatX<S>>* param_grads_ = nullptr;
};

// Adam with bias correction; owns first/second moment state.
template <typename S>
class AdamOptimizer {
public:
    AdamOptimizer(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<S>& params, const std::vector<MatX<S>>& grads) {
        if (m_.empty()) {
            m_ = params.zero_grads();
            v_ = params.zero_grads();
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (int i = 0; i < params.size(); ++i) {
            auto& m = m_[static_cast<std::size_t>(i)];
            auto& v = v_[static_cast<std::size_t>(i)];
            const auto& g = grads[static_cast<std::size_t>(i)];
            m = S(beta1_) * m + S(1.0 - beta1_) * g;
            v = S(beta2_) * v + S(1.0 - beta2_) * g.cwiseProduct(g);
            params.value(i).array() -=
                S(lr_) * (m.array() / S(bc1)) /
                ((v.array() / S(bc2)).sqrt() + S(eps_));
        }
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<MatX<S>> m_, v_;
};

}  // namespace hsbi
