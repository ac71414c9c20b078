#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hsbi/autodiff.hpp"
#include "hsbi/tokens.hpp"

namespace hsbi {

struct TransformerConfig {
    int n_blocks = 2;
    int n_heads = 16;
    int n_ff_layers = 2;  // linear layers inside the feedforward
    int d_lat = 256;
    int ff_expansion = 4;
};

struct MlpConfig {
    int hidden_width = 256;
    int hidden_layers = 2;
    double dropout = 0.10;
};

struct EmbeddingConfig {
    int d_id = 16;
    int d_pos = 16;
    int d_grp = 16;
    int d_fn = 32;  // even; zero block for non-functional tokens
    double fourier_scale = 1.0;
};

struct NetConfig {
    enum class Arch { Transformer, Mlp };
    Arch arch = Arch::Transformer;
    TransformerConfig transformer;
    MlpConfig mlp;
    EmbeddingConfig embedding;
};

// Shape contract a network is built against; recorded into checkpoints so a
// reloaded net accepts exactly the layouts it was trained on.
struct NetShape {
    int d_value = 1;
    int n_variables = 1;   // L
    int max_positions = 1; // P_max
    int max_groups = 1;    // G_max
    bool functional = false;
    int d_xi = 1;
    // MLP only: fixed token count and flattened target width
    int fixed_tokens = 0;
    int target_dim = 0;

    static NetShape from_layout(const TokenLayout& layout) {
        NetShape s;
        s.d_value = layout.d_value;
        s.n_variables = layout.n_variables;
        s.max_positions = layout.max_positions;
        s.max_groups = layout.max_groups;
        s.functional = layout.functional;
        s.d_xi = 1;
        s.fixed_tokens = layout.size();
        s.target_dim = layout.target_dim;
        return s;
    }
};

// One tokenised case prepared for the network: z-scored values with target
// rows holding the flow state, plus fixed embedding metadata.
template <typename S>
struct TokenItem {
    MatX<S> values;             // T x d_v
    MatX<S> fourier;            // T x d_fn (zero rows for non-functional tokens)
    MatX<S> fn_raw;             // T x 1 normalised coordinates (MLP path); 0 cols if absent
    std::vector<int> id_rows;   // 0-based lookups
    std::vector<int> pos_rows;
    std::vector<int> grp_rows;
    std::vector<int> target_rows;
    MatX<S> target_slot_mask;   // n_target x d_v, 1 on real entries
    std::vector<int> target_widths;
    int target_dim = 0;

    void set_target_state(const VecX<S>& state) {
        int off = 0;
        for (std::size_t i = 0; i < target_rows.size(); ++i) {
            const int w = target_widths[i];
            values.row(target_rows[i]).head(w) = state.segment(off, w).transpose();
            off += w;
        }
    }

    MatX<S> target_rows_matrix(const VecX<S>& state) const {
        MatX<S> m = MatX<S>::Zero(static_cast<long>(target_rows.size()), values.cols());
        int off = 0;
        for (std::size_t i = 0; i < target_rows.size(); ++i) {
            const int w = target_widths[i];
            m.row(static_cast<long>(i)).head(w) = state.segment(off, w).transpose();
            off += w;
        }
        return m;
    }
};

// Vector-field estimator: tokenised encoder-only transformer, or the MLP
// ablation operating on the flattened token values.
template <typename S>
class VectorFieldNet {
public:
    using Var = typename Tape<S>::Var;

    VectorFieldNet(NetConfig config, NetShape shape) : cfg_(config), shape_(shape) {
        if (cfg_.embedding.d_fn % 2 != 0) throw ConfigError("embedding d_fn must be even");
        if (cfg_.arch == NetConfig::Arch::Transformer &&
            cfg_.transformer.d_lat % cfg_.transformer.n_heads != 0)
            throw ConfigError("d_lat must be divisible by n_heads");
        build_params();
    }

    // Glorot-uniform projections, zero biases, unit layer-norm gains,
    // small-normal embedding tables; deterministic per seed.
    void init_params(std::uint64_t seed) {
        Rng rng(derive_seed(seed, 0xA11CE));
        for (int i = 0; i < store_.size(); ++i) {
            auto& m = store_.value(i);
            switch (store_.kind(i)) {
                case ParamKind::LayerNormGain:
                    m.setOnes();
                    break;
                case ParamKind::Bias:
                case ParamKind::LayerNormBias:
                    m.setZero();
                    break;
                case ParamKind::Embedding:
                    for (long c = 0; c < m.cols(); ++c)
                        for (long r = 0; r < m.rows(); ++r) m(r, c) = S(rng.normal(0.0, 0.1));
                    break;
                case ParamKind::Weight: {
                    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
                    for (long c = 0; c < m.cols(); ++c)
                        for (long r = 0; r < m.rows(); ++r) m(r, c) = S(rng.uniform(-a, a));
                    break;
                }
            }
        }
        Rng brng(derive_seed(seed, 0xBA515));
        for (long c = 0; c < fourier_basis_.cols(); ++c)
            for (long r = 0; r < fourier_basis_.rows(); ++r)
                fourier_basis_(r, c) = S(brng.normal(0.0, cfg_.embedding.fourier_scale));
    }

    TokenItem<S> make_item(const TokenLayout& layout, const TokenSequence& seq) const {
        if (layout.d_value != shape_.d_value)
            throw LayoutError("make_item: layout d_v does not match the network");
        if (layout.n_variables > shape_.n_variables || layout.max_positions > shape_.max_positions ||
            layout.max_groups > shape_.max_groups)
            throw LayoutError("make_item: layout exceeds embedding table ceilings");
        TokenItem<S> item;
        const int T = seq.size();
        item.values = seq.values.template cast<S>();
        item.fourier = MatX<S>::Zero(T, cfg_.embedding.d_fn);
        item.fn_raw = layout.functional ? seq.fn_inputs.template cast<S>() : MatX<S>(T, 0);
        item.id_rows.resize(static_cast<std::size_t>(T));
        item.pos_rows.resize(static_cast<std::size_t>(T));
        item.grp_rows.resize(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) {
            item.id_rows[static_cast<std::size_t>(i)] = seq.var_ids[static_cast<std::size_t>(i)] - 1;
            item.pos_rows[static_cast<std::size_t>(i)] = seq.positions[static_cast<std::size_t>(i)];
            item.grp_rows[static_cast<std::size_t>(i)] = seq.group_ids[static_cast<std::size_t>(i)];
            if (layout.functional && layout.tokens[static_cast<std::size_t>(i)].has_fn) {
                Vec xi(1);
                xi[0] = seq.fn_inputs(i, 0);
                const Vec f = fourier_features(xi, fourier_basis_.template cast<double>());
                item.fourier.row(i) = f.transpose().template cast<S>();
            }
        }
        item.target_dim = layout.target_dim;
        int n_t = 0;
        for (const auto& t : layout.tokens) n_t += t.target ? 1 : 0;
        item.target_slot_mask = MatX<S>::Zero(n_t, layout.d_value);
        int r = 0;
        for (int i = 0; i < T; ++i) {
            const auto& t = layout.tokens[static_cast<std::size_t>(i)];
            if (!t.target) continue;
            item.target_rows.push_back(i);
            item.target_widths.push_back(t.width);
            item.target_slot_mask.row(r).head(t.width).setConstant(S(1));
            ++r;
        }
        return item;
    }

    // Readout rows for the flow field: (n_target x d_v) for the transformer,
    // (1 x target_dim) for the MLP.
    Var forward_readout(Tape<S>& tape, const TokenItem<S>& item, S t, bool train, Rng& rng) {
        if (!item.values.allFinite()) throw NumericError("forward: non-finite token values");
        return cfg_.arch == NetConfig::Arch::Transformer ? transformer_forward(tape, item, t)
                                                         : mlp_forward(tape, item, t, train, rng);
    }

    // Stacked readout for a batch of same-layout items on one tape:
    // (sum of per-item target tokens) x d_v, in item order. Attention is
    // block-diagonal over items.
    Var forward_readout_stacked(Tape<S>& tape, std::span<TokenItem<S>* const> items,
                                std::span<const S> times) {
        if (cfg_.arch != NetConfig::Arch::Transformer)
            throw NumericError("stacked forward requires the transformer");
        if (items.empty()) throw NumericError("stacked forward: empty batch");
        const int T = static_cast<int>(items[0]->values.rows());
        const long B = static_cast<long>(items.size());
        const int d = cfg_.transformer.d_lat;
        const int n_h = cfg_.transformer.n_heads;
        const int d_h = d / n_h;

        MatX<S> values(B * T, items[0]->values.cols());
        MatX<S> fourier(B * T, cfg_.embedding.d_fn);
        MatX<S> e_t(B * T, 1);
        std::vector<int> ids, pos, grp, target_rows;
        ids.reserve(static_cast<std::size_t>(B * T));
        pos.reserve(static_cast<std::size_t>(B * T));
        grp.reserve(static_cast<std::size_t>(B * T));
        for (long b = 0; b < B; ++b) {
            const TokenItem<S>& it = *items[static_cast<std::size_t>(b)];
            if (it.values.rows() != T)
                throw NumericError("stacked forward: items must share one token layout");
            values.middleRows(b * T, T) = it.values;
            fourier.middleRows(b * T, T) = it.fourier;
            e_t.middleRows(b * T, T).setConstant(times[static_cast<std::size_t>(b)]);
            ids.insert(ids.end(), it.id_rows.begin(), it.id_rows.end());
            pos.insert(pos.end(), it.pos_rows.begin(), it.pos_rows.end());
            grp.insert(grp.end(), it.grp_rows.begin(), it.grp_rows.end());
            for (int r : it.target_rows) target_rows.push_back(static_cast<int>(b * T) + r);
        }

        Var X = tape.concat_cols({tape.constant(std::move(values)),
                                  tape.embedding_rows(tape.param(emb_id_), std::move(ids)),
                                  tape.embedding_rows(tape.param(emb_pos_), std::move(pos)),
                                  tape.embedding_rows(tape.param(emb_grp_), std::move(grp)),
                                  tape.constant(std::move(fourier)),
                                  tape.constant(std::move(e_t))});
        Var H = tape.add_row(tape.matmul(X, tape.param(emb_W_)), tape.param(emb_b_));
        const S inv_sqrt = S(1.0 / std::sqrt(static_cast<double>(d_h)));
        for (const auto& blk : blocks_) {
            Var A = tape.layer_norm(H, tape.param(blk.ln1g), tape.param(blk.ln1b));
            Var Q = tape.add_row(tape.matmul(A, tape.param(blk.Wq)), tape.param(blk.bq));
            Var K = tape.add_row(tape.matmul(A, tape.param(blk.Wk)), tape.param(blk.bk));
            Var V = tape.add_row(tape.matmul(A, tape.param(blk.Wv)), tape.param(blk.bv));
            std::vector<Var> heads;
            heads.reserve(static_cast<std::size_t>(n_h));
            for (int h = 0; h < n_h; ++h) {
                Var Qh = tape.slice_cols(Q, h * d_h, d_h);
                Var Kh = tape.slice_cols(K, h * d_h, d_h);
                Var Vh = tape.slice_cols(V, h * d_h, d_h);
                heads.push_back(tape.block_attention(Qh, Kh, Vh, T, inv_sqrt));
            }
            Var O = tape.add_row(tape.matmul(tape.concat_cols(heads), tape.param(blk.Wo)),
                                 tape.param(blk.bo));
            H = tape.add(H, O);
            Var B2 = tape.layer_norm(H, tape.param(blk.ln2g), tape.param(blk.ln2b));
            Var F = B2;
            for (std::size_t l = 0; l < blk.ffW.size(); ++l) {
                F = tape.add_row(tape.matmul(F, tape.param(blk.ffW[l])), tape.param(blk.ffb[l]));
                if (l + 1 < blk.ffW.size()) F = tape.gelu(F);
            }
            H = tape.add(H, F);
        }
        H = tape.layer_norm(H, tape.param(lnf_g_), tape.param(lnf_b_));
        Var R = tape.select_rows(H, std::move(target_rows));
        return tape.matmul(R, tape.param(out_W_));
    }

    // Non-training field evaluation, scattered into the flat target layout.
    VecX<S> vector_field(const TokenItem<S>& item, S t) {
        Tape<S> tape(&store_, nullptr);
        Rng rng(0);
        Var out = forward_readout(tape, item, t, false, rng);
        const MatX<S>& R = tape.value(out);
        VecX<S> field(item.target_dim);
        if (cfg_.arch == NetConfig::Arch::Mlp) {
            field = R.row(0).transpose();
        } else {
            int off = 0;
            for (std::size_t i = 0; i < item.target_rows.size(); ++i) {
                const int w = item.target_widths[i];
                field.segment(off, w) = R.row(static_cast<long>(i)).head(w).transpose();
                off += w;
            }
        }
        return field;
    }

    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }
    MatX<S>& fourier_basis() { return fourier_basis_; }
    const MatX<S>& fourier_basis() const { return fourier_basis_; }
    const NetConfig& config() const { return cfg_; }
    const NetShape& shape() const { return shape_; }

private:
    struct Block {
        int Wq, bq, Wk, bk, Wv, bv, Wo, bo;
        int ln1g, ln1b, ln2g, ln2b;
        std::vector<int> ffW, ffb;
    };

    void build_params() {
        const auto& e = cfg_.embedding;
        if (cfg_.arch == NetConfig::Arch::Transformer) {
            const int d = cfg_.transformer.d_lat;
            const int d_in = shape_.d_value + e.d_id + e.d_pos + e.d_grp + e.d_fn + 1;
            emb_id_ = store_.add("emb.table_id", shape_.n_variables, e.d_id, ParamKind::Embedding);
            emb_pos_ = store_.add("emb.table_pos", shape_.max_positions, e.d_pos, ParamKind::Embedding);
            emb_grp_ = store_.add("emb.table_grp", shape_.max_groups, e.d_grp, ParamKind::Embedding);
            emb_W_ = store_.add("emb.W", d_in, d);
            emb_b_ = store_.add("emb.b", 1, d, ParamKind::Bias);
            for (int k = 0; k < cfg_.transformer.n_blocks; ++k) {
                Block b;
                const std::string p = "blk" + std::to_string(k) + ".";
                b.Wq = store_.add(p + "Wq", d, d);
                b.bq = store_.add(p + "bq", 1, d, ParamKind::Bias);
                b.Wk = store_.add(p + "Wk", d, d);
                b.bk = store_.add(p + "bk", 1, d, ParamKind::Bias);
                b.Wv = store_.add(p + "Wv", d, d);
                b.bv = store_.add(p + "bv", 1, d, ParamKind::Bias);
                b.Wo = store_.add(p + "Wo", d, d);
                b.bo = store_.add(p + "bo", 1, d, ParamKind::Bias);
                b.ln1g = store_.add(p + "lng1", 1, d, ParamKind::LayerNormGain);
                b.ln1b = store_.add(p + "lnb1", 1, d, ParamKind::LayerNormBias);
                b.ln2g = store_.add(p + "lng2", 1, d, ParamKind::LayerNormGain);
                b.ln2b = store_.add(p + "lnb2", 1, d, ParamKind::LayerNormBias);
                const int d_ff = cfg_.transformer.ff_expansion * d;
                int w_in = d;
                for (int l = 0; l < cfg_.transformer.n_ff_layers; ++l) {
                    const bool last = l == cfg_.transformer.n_ff_layers - 1;
                    const int w_out = last ? d : d_ff;
                    b.ffW.push_back(store_.add(p + "ffW" + std::to_string(l), w_in, w_out));
                    b.ffb.push_back(
                        store_.add(p + "ffb" + std::to_string(l), 1, w_out, ParamKind::Bias));
                    w_in = w_out;
                }
                blocks_.push_back(b);
            }
            lnf_g_ = store_.add("final.lng", 1, d, ParamKind::LayerNormGain);
            lnf_b_ = store_.add("final.lnb", 1, d, ParamKind::LayerNormBias);
            out_W_ = store_.add("out.W", d, shape_.d_value);
        } else {
            const int d_in =
                shape_.fixed_tokens * (shape_.d_value + (shape_.functional ? shape_.d_xi : 0)) + 1;
            int w_in = d_in;
            for (int l = 0; l < cfg_.mlp.hidden_layers; ++l) {
                mlp_W_.push_back(store_.add("mlp.W" + std::to_string(l), w_in, cfg_.mlp.hidden_width));
                mlp_b_.push_back(
                    store_.add("mlp.b" + std::to_string(l), 1, cfg_.mlp.hidden_width, ParamKind::Bias));
                w_in = cfg_.mlp.hidden_width;
            }
            mlp_W_.push_back(store_.add("mlp.Wout", w_in, shape_.target_dim));
            mlp_b_.push_back(store_.add("mlp.bout", 1, shape_.target_dim, ParamKind::Bias));
        }
        fourier_basis_ = MatX<S>::Zero(cfg_.embedding.d_fn / 2, shape_.d_xi);
    }

    Var transformer_forward(Tape<S>& tape, const TokenItem<S>& item, S t) {
        const int T = static_cast<int>(item.values.rows());
        const int d = cfg_.transformer.d_lat;
        const int n_h = cfg_.transformer.n_heads;
        const int d_h = d / n_h;

        Var values = tape.constant(item.values);
        Var e_id = tape.embedding_rows(tape.param(emb_id_), item.id_rows);
        Var e_pos = tape.embedding_rows(tape.param(emb_pos_), item.pos_rows);
        Var e_grp = tape.embedding_rows(tape.param(emb_grp_), item.grp_rows);
        Var e_fn = tape.constant(item.fourier);
        Var e_t = tape.constant(MatX<S>::Constant(T, 1, t));
        Var X = tape.concat_cols({values, e_id, e_pos, e_grp, e_fn, e_t});
        Var H = tape.add_row(tape.matmul(X, tape.param(emb_W_)), tape.param(emb_b_));

        for (const auto& blk : blocks_) {
            Var A = tape.layer_norm(H, tape.param(blk.ln1g), tape.param(blk.ln1b));
            Var Q = tape.add_row(tape.matmul(A, tape.param(blk.Wq)), tape.param(blk.bq));
            Var K = tape.add_row(tape.matmul(A, tape.param(blk.Wk)), tape.param(blk.bk));
            Var V = tape.add_row(tape.matmul(A, tape.param(blk.Wv)), tape.param(blk.bv));
            std::vector<Var> heads;
            heads.reserve(static_cast<std::size_t>(n_h));
            const S inv_sqrt = S(1.0 / std::sqrt(static_cast<double>(d_h)));
            for (int h = 0; h < n_h; ++h) {
                Var Qh = tape.slice_cols(Q, h * d_h, d_h);
                Var Kh = tape.slice_cols(K, h * d_h, d_h);
                Var Vh = tape.slice_cols(V, h * d_h, d_h);
                Var scores = tape.scale(tape.matmul(Qh, tape.transpose(Kh)), inv_sqrt);
                Var attn = tape.softmax_rows(scores);
                heads.push_back(tape.matmul(attn, Vh));
            }
            Var O = tape.add_row(tape.matmul(tape.concat_cols(heads), tape.param(blk.Wo)),
                                 tape.param(blk.bo));
            H = tape.add(H, O);
            Var B2 = tape.layer_norm(H, tape.param(blk.ln2g), tape.param(blk.ln2b));
            Var F = B2;
            for (std::size_t l = 0; l < blk.ffW.size(); ++l) {
                F = tape.add_row(tape.matmul(F, tape.param(blk.ffW[l])), tape.param(blk.ffb[l]));
                if (l + 1 < blk.ffW.size()) F = tape.gelu(F);
            }
            H = tape.add(H, F);
        }
        H = tape.layer_norm(H, tape.param(lnf_g_), tape.param(lnf_b_));
        Var R = tape.select_rows(H, item.target_rows);
        return tape.matmul(R, tape.param(out_W_));
    }

    Var mlp_forward(Tape<S>& tape, const TokenItem<S>& item, S t, bool train, Rng& rng) {
        const int T = static_cast<int>(item.values.rows());
        if (T != shape_.fixed_tokens)
            throw LayoutError("mlp_forward: token count does not match the fixed input width");
        const int per_tok = shape_.d_value + (shape_.functional ? shape_.d_xi : 0);
        MatX<S> x(1, T * per_tok + 1);
        for (int i = 0; i < T; ++i) {
            x.block(0, i * per_tok, 1, shape_.d_value) = item.values.row(i);
            if (shape_.functional) x(0, i * per_tok + shape_.d_value) = item.fn_raw(i, 0);
        }
        x(0, T * per_tok) = t;
        Var h = tape.constant(std::move(x));
        for (std::size_t l = 0; l + 1 < mlp_W_.size(); ++l) {
            h = tape.add_row(tape.matmul(h, tape.param(mlp_W_[l])), tape.param(mlp_b_[l]));
            h = tape.relu(h);
            if (train && cfg_.mlp.dropout > 0.0) h = tape.dropout(h, cfg_.mlp.dropout, rng);
        }
        return tape.add_row(tape.matmul(h, tape.param(mlp_W_.back())), tape.param(mlp_b_.back()));
    }

    NetConfig cfg_;
    NetShape shape_;
    ParamStore<S> store_;
    MatX<S> fourier_basis_;

    int emb_id_ = -1, emb_pos_ = -1, emb_grp_ = -1, emb_W_ = -1, emb_b_ = -1;
    std::vector<Block> blocks_;
    int lnf_g_ = -1, lnf_b_ = -1, out_W_ = -1;
    std::vector<int> mlp_W_, mlp_b_;
};

}  // namespace hsbi
