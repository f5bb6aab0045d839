#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "appemb/graph.hpp"
#include "appemb/ingest.hpp"
#include "appemb/serialize.hpp"

namespace appemb {

struct ModelConfig {
    std::uint32_t M = 0;
    std::uint32_t K = 0;
    std::uint32_t d_model = 512;
    std::uint32_t d_ffn = 1024;
    std::uint32_t n_heads = 8;
    std::uint32_t n_encoder_layers = 2;
    std::uint32_t n_decoder_layers = 1;
    std::uint32_t d_emb = 128;
    std::uint32_t I = 25;
    std::uint32_t T = 180;
    std::uint32_t ae_mid_dim = 128;
    float dropout_input = 0.05f;
    float dropout_attn_ffn = 0.1f;
    float leaky_slope = 0.01f;

    void validate() const {
        if (M < 1 || K < 1) throw std::runtime_error("ModelConfig: M and K must be >= 1");
        if (d_model < 1 || d_ffn < 1 || d_emb < 1 || ae_mid_dim < 1 || I < 1 || T < 1 ||
            n_heads < 1 || n_encoder_layers < 1 || n_decoder_layers < 1)
            throw std::runtime_error("ModelConfig: all dimensions must be >= 1");
        if (d_model % n_heads != 0) throw std::runtime_error("ModelConfig: d_model not divisible by n_heads");
        if (d_emb >= d_model) throw std::runtime_error("ModelConfig: d_emb must be < d_model");
    }
};

/// Positions slated for mask-token substitution in one record's encoder
/// input. Dates and behavior types at these positions are untouched.
struct RecordMask {
    std::vector<std::uint32_t> install_positions;
    std::vector<std::uint32_t> uninstall_positions;

    bool empty() const { return install_positions.empty() && uninstall_positions.empty(); }
};

template <typename S>
struct LossTerms {
    S l_main{};  // retention head CE + decoder CE over real positions
    S l_aux{};   // retention autoencoder CE
    S l_mask{};  // masked-app prediction CE
    S l_reg{};   // l2 over all trainable parameters
    S total() const { return l_main + l_aux + l_mask + l_reg; }
};

constexpr double kLayerNormEps = 1e-6;

/// The embedding network: retention autoencoder, transformer encoder with a
/// retention extra key/value at every layer, bottleneck, transformer decoder
/// driven by date/type queries with the bottleneck reconstruction as the
/// extra, and four output heads tied to the transpose of the shared app
/// embedding matrix. One object owns all parameters; tying is storage
/// identity, so it survives any number of optimizer steps untouched.
template <typename T>
class Model {
public:
    using Id = typename Graph<T>::Id;
    static constexpr Id kNone = Graph<T>::kNone;

    struct Block {
        Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
        Parameter<T> ln1_g, ln1_b, ln2_g, ln2_b;
        Parameter<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    ModelConfig cfg;
    std::vector<std::uint32_t> cat_of_class;  // length M, values in [0, K)

    // tied embedding storage
    Parameter<T> emb_app;   // (M+2) x d_model, rows 0/1 are PAD/MASK
    Parameter<T> emb_cat;   // K x d_model
    Parameter<T> emb_date;  // T x d_model
    Parameter<T> type_retention, type_install, type_uninstall;  // 1 x d_model

    // retention autoencoder (first and last layers use the tied matrix)
    Parameter<T> ae_b1, ae_w2, ae_b2, ae_w3, ae_b3, ae_b4;

    std::vector<Block> encoder, decoder;

    // bottleneck + retention head
    Parameter<T> bott_w_down, bott_b_down, bott_w_up, bott_b_up;
    Parameter<T> head_w, head_b, head_b_out;

    Model(ModelConfig config, std::vector<std::uint32_t> categories)
        : cfg(config), cat_of_class(std::move(categories)) {
        cfg.validate();
        if (cat_of_class.size() != cfg.M)
            throw std::runtime_error("Model: category assignment must cover all M apps");
        for (auto c : cat_of_class)
            if (c >= cfg.K) throw std::runtime_error("Model: category id out of range");

        const std::uint32_t d = cfg.d_model;
        emb_app = Parameter<T>("emb.app", Tensor<T>(cfg.M + 2, d));
        emb_cat = Parameter<T>("emb.cat", Tensor<T>(cfg.K, d));
        emb_date = Parameter<T>("emb.date", Tensor<T>(cfg.T, d));
        type_retention = Parameter<T>("emb.type_retention", Tensor<T>(1, d));
        type_install = Parameter<T>("emb.type_install", Tensor<T>(1, d));
        type_uninstall = Parameter<T>("emb.type_uninstall", Tensor<T>(1, d));

        ae_b1 = Parameter<T>("ae.b1", Tensor<T>(1, d));
        ae_w2 = Parameter<T>("ae.w2", Tensor<T>(d, cfg.ae_mid_dim));
        ae_b2 = Parameter<T>("ae.b2", Tensor<T>(1, cfg.ae_mid_dim));
        ae_w3 = Parameter<T>("ae.w3", Tensor<T>(cfg.ae_mid_dim, d));
        ae_b3 = Parameter<T>("ae.b3", Tensor<T>(1, d));
        ae_b4 = Parameter<T>("ae.b4", Tensor<T>(1, cfg.M));

        encoder.resize(cfg.n_encoder_layers);
        decoder.resize(cfg.n_decoder_layers);
        for (std::uint32_t i = 0; i < cfg.n_encoder_layers; ++i)
            init_block(encoder[i], "enc" + std::to_string(i));
        for (std::uint32_t i = 0; i < cfg.n_decoder_layers; ++i)
            init_block(decoder[i], "dec" + std::to_string(i));

        bott_w_down = Parameter<T>("bott.w_down", Tensor<T>(d, cfg.d_emb));
        bott_b_down = Parameter<T>("bott.b_down", Tensor<T>(1, cfg.d_emb));
        bott_w_up = Parameter<T>("bott.w_up", Tensor<T>(cfg.d_emb, d));
        bott_b_up = Parameter<T>("bott.b_up", Tensor<T>(1, d));
        head_w = Parameter<T>("head.w", Tensor<T>(cfg.d_emb, d));
        head_b = Parameter<T>("head.b", Tensor<T>(1, d));
        head_b_out = Parameter<T>("head.b_out", Tensor<T>(1, cfg.M));

        build_registry();
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model& operator=(Model&&) = delete;

    // moving relocates the directly held Parameters, so the registry of
    // interior pointers must be rebuilt against the new addresses
    Model(Model&& o) noexcept
        : cfg(o.cfg),
          cat_of_class(std::move(o.cat_of_class)),
          emb_app(std::move(o.emb_app)),
          emb_cat(std::move(o.emb_cat)),
          emb_date(std::move(o.emb_date)),
          type_retention(std::move(o.type_retention)),
          type_install(std::move(o.type_install)),
          type_uninstall(std::move(o.type_uninstall)),
          ae_b1(std::move(o.ae_b1)),
          ae_w2(std::move(o.ae_w2)),
          ae_b2(std::move(o.ae_b2)),
          ae_w3(std::move(o.ae_w3)),
          ae_b3(std::move(o.ae_b3)),
          ae_b4(std::move(o.ae_b4)),
          encoder(std::move(o.encoder)),
          decoder(std::move(o.decoder)),
          bott_w_down(std::move(o.bott_w_down)),
          bott_b_down(std::move(o.bott_b_down)),
          bott_w_up(std::move(o.bott_w_up)),
          bott_b_up(std::move(o.bott_b_up)),
          head_w(std::move(o.head_w)),
          head_b(std::move(o.head_b)),
          head_b_out(std::move(o.head_b_out)) {
        build_registry();
    }

    const std::vector<Parameter<T>*>& parameters() { return registry_; }

    void zero_grads() {
        for (auto* p : registry_) p->zero_grad();
    }

    /// Glorot-uniform matrices, small-normal embedding tables, unit layer
    /// norm gains, zero biases.
    void init(std::uint64_t seed) {
        Rng rng = Rng::keyed(seed, 0x6d6f64656cull);
        for (auto* p : registry_) {
            if (p->name.ends_with("ln1_g") || p->name.ends_with("ln2_g")) {
                p->value.fill(T{1});
            } else if (p->name.starts_with("emb.")) {
                for (auto& v : p->value.data) v = static_cast<T>(rng.normal() * 0.02);
            } else if (p->value.rows() == 1) {
                p->value.zero();  // biases
            } else {
                const double s = std::sqrt(6.0 / static_cast<double>(p->value.rows() + p->value.cols()));
                for (auto& v : p->value.data) v = static_cast<T>(rng.uniform(-s, s));
            }
            p->zero_grad();
        }
    }

    // ---- forward pieces -----------------------------------------------------

    struct ForwardIds {
        Id wa = Graph<T>::kNone, table = Graph<T>::kNone;
        Id x0 = Graph<T>::kNone, x1 = Graph<T>::kNone, x2 = Graph<T>::kNone, x3 = Graph<T>::kNone,
           x4_logits = Graph<T>::kNone;
        Id ret_tok = Graph<T>::kNone;
        Id enc_in = Graph<T>::kNone, enc_out = Graph<T>::kNone;
        Id e_omega = Graph<T>::kNone, e_tilde = Graph<T>::kNone, e_hat = Graph<T>::kNone;
        Id ret_logits = Graph<T>::kNone;
        Id mask_logits = Graph<T>::kNone;
        Id dec_hidden = Graph<T>::kNone;
        Id dec_logits = Graph<T>::kNone;
        std::vector<std::uint32_t> enc_key_valid;  // 2I+1 flags (no extra)
        std::vector<std::uint32_t> seq_real;       // 2I flags
        std::vector<std::uint32_t> masked_rows, masked_classes;  // rows into [0, 2I)
        std::vector<std::uint32_t> real_rows, real_classes;
    };

    /// W^a = app rows of the embedding table plus each app's category row;
    /// the full encoder-input table prepends the raw PAD/MASK rows.
    void tied_tables(Graph<T>& g, ForwardIds& f) {
        const Id e_app = g.param(emb_app);
        const Id e_cat = g.param(emb_cat);
        f.wa = g.add(g.slice_rows(e_app, 2, cfg.M + 2), g.gather(e_cat, cat_of_class));
        f.table = g.concat_rows({g.slice_rows(e_app, 0, 2), f.wa});
    }

    Tensor<T> multi_hot(const UserRecord& rec) const {
        Tensor<T> x(1, cfg.M);
        for (auto a : rec.retention) {
            if (a < kFirstAppIndex || a >= kFirstAppIndex + cfg.M)
                throw std::runtime_error("record retention app id out of catalog range");
            x.data[a - kFirstAppIndex] = T{1};
        }
        return x;
    }

    void retention_ae(Graph<T>& g, const UserRecord& rec, bool training, Rng* rng, ForwardIds& f) {
        Tensor<T> x0 = multi_hot(rec);
        T norm{0};
        for (T v : x0.data) norm += v * v;
        if (norm > T{0}) {  // zero retention passes through as the zero vector
            const T inv = T{1} / std::sqrt(norm);
            for (T& v : x0.data) v *= inv;
        }
        f.x0 = g.input(std::move(x0));
        const Id x0d = g.dropout(f.x0, static_cast<T>(cfg.dropout_input), training, rng);
        const T slope = static_cast<T>(cfg.leaky_slope);
        f.x1 = g.leaky_relu(g.add_row(g.matmul(x0d, f.wa), g.param(ae_b1)), slope);
        f.x2 = g.leaky_relu(g.add_row(g.matmul(f.x1, g.param(ae_w2)), g.param(ae_b2)), slope);
        f.x3 = g.leaky_relu(g.add_row(g.matmul(f.x2, g.param(ae_w3)), g.param(ae_b3)), slope);
        f.x4_logits = g.add_row(g.matmul(f.x3, f.wa, false, true), g.param(ae_b4));
    }

    /// Token 0 carries the retention representation (no date); tokens 1..2I
    /// are app + date + behavior-type sums. PAD positions keep the PAD row
    /// and are flagged out of attention.
    void encoder_inputs(Graph<T>& g, const UserRecord& rec, const RecordMask* mask, ForwardIds& f) {
        check_record(rec);
        const std::uint32_t I = cfg.I;
        std::vector<std::uint32_t> apps(2 * I), dates(2 * I);
        f.seq_real.assign(2 * I, 0);
        for (std::uint32_t i = 0; i < I; ++i) {
            apps[i] = rec.install_apps[i];
            dates[i] = rec.install_dates[i];
            apps[I + i] = rec.uninstall_apps[i];
            dates[I + i] = rec.uninstall_dates[i];
        }
        for (std::uint32_t r = 0; r < 2 * I; ++r) {
            if (apps[r] == kPadIndex) continue;
            f.seq_real[r] = 1;
            f.real_rows.push_back(r);
            f.real_classes.push_back(apps[r] - kFirstAppIndex);
        }
        if (mask != nullptr) {
            auto apply = [&](const std::vector<std::uint32_t>& positions, std::uint32_t row_offset,
                             const std::vector<std::uint32_t>& true_apps) {
                for (auto pos : positions) {
                    if (pos >= I || true_apps[pos] == kPadIndex)
                        throw std::runtime_error("mask position must point at a real operation");
                    f.masked_rows.push_back(row_offset + pos);
                    f.masked_classes.push_back(true_apps[pos] - kFirstAppIndex);
                    apps[row_offset + pos] = kMaskIndex;
                }
            };
            apply(mask->install_positions, 0, rec.install_apps);
            apply(mask->uninstall_positions, I, rec.uninstall_apps);
        }

        f.ret_tok = g.add(f.x1, g.param(type_retention));
        const Id date_table = g.param(emb_date);
        auto seq_part = [&](std::uint32_t lo, std::uint32_t hi, Parameter<T>& type_vec) {
            std::vector<std::uint32_t> a(apps.begin() + lo, apps.begin() + hi);
            std::vector<std::uint32_t> d(dates.begin() + lo, dates.begin() + hi);
            return g.add_row(g.add(g.gather(f.table, a), g.gather(date_table, d)), g.param(type_vec));
        };
        const Id inst = seq_part(0, I, type_install);
        const Id uninst = seq_part(I, 2 * I, type_uninstall);
        f.enc_in = g.concat_rows({f.ret_tok, inst, uninst});

        f.enc_key_valid.assign(2 * I + 1, 0);
        f.enc_key_valid[0] = 1;
        for (std::uint32_t r = 0; r < 2 * I; ++r) f.enc_key_valid[1 + r] = f.seq_real[r];
    }

    /// One post-norm transformer block with the modified attention: `extra`
    /// is appended to the key/value inputs (projected by the same per-head
    /// maps) so every attention step can read it directly.
    Id attention_block(Graph<T>& g, Id x, Id extra, const std::vector<std::uint32_t>& key_valid,
                       Block& blk, bool training, Rng* rng) {
        const T drop = static_cast<T>(cfg.dropout_attn_ffn);
        const T eps = static_cast<T>(kLayerNormEps);
        std::vector<std::uint32_t> valid = key_valid;
        valid.push_back(1);  // the extra key is always attendable

        const Id kv_in = g.concat_rows({x, extra});
        const Id q = g.add_row(g.matmul(x, g.param(blk.wq)), g.param(blk.bq));
        const Id k = g.add_row(g.matmul(kv_in, g.param(blk.wk)), g.param(blk.bk));
        const Id v = g.add_row(g.matmul(kv_in, g.param(blk.wv)), g.param(blk.bv));
        Id attn = g.mhsa(q, k, v, static_cast<int>(cfg.n_heads), valid);
        attn = g.add_row(g.matmul(attn, g.param(blk.wo)), g.param(blk.bo));
        attn = g.dropout(attn, drop, training, rng);
        const Id h1 = g.layer_norm(g.add(x, attn), g.param(blk.ln1_g), g.param(blk.ln1_b), eps);

        Id ff = g.relu(g.add_row(g.matmul(h1, g.param(blk.ffn_w1)), g.param(blk.ffn_b1)));
        ff = g.add_row(g.matmul(ff, g.param(blk.ffn_w2)), g.param(blk.ffn_b2));
        ff = g.dropout(ff, drop, training, rng);
        return g.layer_norm(g.add(h1, ff), g.param(blk.ln2_g), g.param(blk.ln2_b), eps);
    }

    /// Stacked encoder; the embedding-layer retention representation is
    /// re-injected as the extra key/value at every layer.
    void encoder_forward(Graph<T>& g, ForwardIds& f, bool training, Rng* rng) {
        Id x = f.enc_in;
        for (auto& blk : encoder) x = attention_block(g, x, f.ret_tok, f.enc_key_valid, blk, training, rng);
        f.enc_out = x;
        f.e_omega = g.slice_rows(x, 0, 1);
    }

    void bottleneck(Graph<T>& g, ForwardIds& f) {
        f.e_tilde = g.tanh(g.add_row(g.matmul(f.e_omega, g.param(bott_w_down)), g.param(bott_b_down)));
        f.e_hat = g.add_row(g.matmul(f.e_tilde, g.param(bott_w_up)), g.param(bott_b_up));
    }

    void retention_head(Graph<T>& g, ForwardIds& f) {
        const Id h = g.leaky_relu(g.add_row(g.matmul(f.e_tilde, g.param(head_w)), g.param(head_b)),
                                  static_cast<T>(cfg.leaky_slope));
        f.ret_logits = g.add_row(g.matmul(h, f.wa, false, true), g.param(head_b_out));
    }

    void masked_head(Graph<T>& g, ForwardIds& f) {
        if (f.masked_rows.empty()) return;
        std::vector<std::uint32_t> enc_rows;
        for (auto r : f.masked_rows) enc_rows.push_back(r + 1);  // encoder row 0 is the retention token
        const Id h = g.gather(f.enc_out, enc_rows);
        f.mask_logits = g.matmul(h, f.wa, false, true);
    }

    /// Non-autoregressive reconstruction: queries are date + type embeddings
    /// only, the bottleneck reconstruction rides along as the extra key.
    void decoder_forward(Graph<T>& g, const UserRecord& rec, ForwardIds& f, bool training, Rng* rng) {
        const std::uint32_t I = cfg.I;
        const Id date_table = g.param(emb_date);
        auto query_part = [&](const std::vector<std::uint32_t>& dates, Parameter<T>& type_vec) {
            return g.add_row(g.gather(date_table, dates), g.param(type_vec));
        };
        const Id queries = g.concat_rows(
            {query_part(rec.install_dates, type_install), query_part(rec.uninstall_dates, type_uninstall)});

        Id x = queries;
        for (auto& blk : decoder) x = attention_block(g, x, f.e_hat, f.seq_real, blk, training, rng);
        f.dec_hidden = x;
        f.dec_logits = g.matmul(x, f.wa, false, true);
    }

    ForwardIds forward(Graph<T>& g, const UserRecord& rec, const RecordMask* mask, bool training,
                       Rng* rng, bool with_reconstruction = true) {
        ForwardIds f;
        tied_tables(g, f);
        retention_ae(g, rec, training, rng, f);
        encoder_inputs(g, rec, mask, f);
        encoder_forward(g, f, training, rng);
        bottleneck(g, f);
        if (with_reconstruction) {
            retention_head(g, f);
            masked_head(g, f);
            decoder_forward(g, rec, f, training, rng);
        }
        return f;
    }

    // ---- losses --------------------------------------------------------------

    struct LossBuild {
        Id loss = Graph<T>::kNone;  // the optimized objective
        ForwardIds fwd;
        LossTerms<double> terms;
    };

    /// Joint objective. The mask plan touches the encoder input only; the
    /// decoder and both retention reconstructions always see full targets.
    LossBuild joint_loss(Graph<T>& g, const UserRecord& rec, const RecordMask* mask, bool training,
                         Rng* rng, T lambda_reg, bool include_aux = true) {
        LossBuild out;
        out.fwd = forward(g, rec, mask, training, rng);
        ForwardIds& f = out.fwd;
        const Tensor<T> x = multi_hot(rec);

        const Id ret_ce = g.sigmoid_ce(f.ret_logits, x);
        const Id aux_ce = g.sigmoid_ce(f.x4_logits, x);
        Id dec_ce = kNone;
        if (!f.real_rows.empty())
            dec_ce = g.softmax_ce_rows(g.gather(f.dec_logits, f.real_rows), f.real_classes);
        Id mask_ce = kNone;
        if (f.mask_logits != kNone) mask_ce = g.softmax_ce_rows(f.mask_logits, f.masked_classes);

        Id reg = kNone;
        if (lambda_reg > T{0}) {
            std::vector<Id> sq;
            sq.reserve(registry_.size());
            for (auto* p : registry_) sq.push_back(g.sum_squares(g.param(*p)));
            reg = g.scale(g.add_n(sq), lambda_reg);
        }

        std::vector<Id> parts{ret_ce};
        if (dec_ce != kNone) parts.push_back(dec_ce);
        if (include_aux) parts.push_back(aux_ce);
        if (mask_ce != kNone) parts.push_back(mask_ce);
        if (reg != kNone) parts.push_back(reg);
        out.loss = g.add_n(parts);

        out.terms.l_main = static_cast<double>(g.val(ret_ce).item()) +
                           (dec_ce != kNone ? static_cast<double>(g.val(dec_ce).item()) : 0.0);
        out.terms.l_aux = static_cast<double>(g.val(aux_ce).item());
        out.terms.l_mask = mask_ce != kNone ? static_cast<double>(g.val(mask_ce).item()) : 0.0;
        out.terms.l_reg = reg != kNone ? static_cast<double>(g.val(reg).item()) : 0.0;
        return out;
    }

    // ---- inference helpers -----------------------------------------------------

    /// The user embedding: bottleneck tanh activations, eval mode, no masking.
    Tensor<T> embed(const UserRecord& rec) {
        Graph<T> g;
        ForwardIds f = forward(g, rec, nullptr, /*training=*/false, nullptr, /*with_reconstruction=*/false);
        return g.val(f.e_tilde);
    }

    struct EvalOutputs {
        Tensor<T> user_embedding;
        Tensor<T> retention_logits;
        std::vector<std::uint32_t> dec_pred, dec_truth;
        std::vector<std::uint32_t> mask_pred, mask_truth;
    };

    EvalOutputs evaluate_record(const UserRecord& rec, const RecordMask* mask) {
        Graph<T> g;
        ForwardIds f = forward(g, rec, mask, /*training=*/false, nullptr);
        EvalOutputs out;
        out.user_embedding = g.val(f.e_tilde);
        out.retention_logits = g.val(f.ret_logits);
        const Tensor<T>& dec = g.val(f.dec_logits);
        for (std::size_t i = 0; i < f.real_rows.size(); ++i) {
            out.dec_pred.push_back(argmax_row(dec, f.real_rows[i]));
            out.dec_truth.push_back(f.real_classes[i]);
        }
        if (f.mask_logits != kNone) {
            const Tensor<T>& ml = g.val(f.mask_logits);
            for (std::size_t i = 0; i < f.masked_rows.size(); ++i) {
                out.mask_pred.push_back(argmax_row(ml, i));
                out.mask_truth.push_back(f.masked_classes[i]);
            }
        }
        return out;
    }

    /// Decoder logits with an externally fixed bottleneck reconstruction.
    Tensor<T> decoder_logits_with_fixed_bottleneck(const UserRecord& rec, const Tensor<T>& e_hat) {
        check_record(rec);
        Graph<T> g;
        ForwardIds f;
        tied_tables(g, f);
        f.seq_real.assign(2 * cfg.I, 0);
        for (std::uint32_t i = 0; i < cfg.I; ++i) {
            f.seq_real[i] = rec.install_apps[i] != kPadIndex;
            f.seq_real[cfg.I + i] = rec.uninstall_apps[i] != kPadIndex;
        }
        f.e_hat = g.input(e_hat);
        decoder_forward(g, rec, f, /*training=*/false, nullptr);
        return g.val(f.dec_logits);
    }

    /// The composed M x d_model tied matrix, materialized outside any graph.
    Tensor<T> tied_app_matrix() const {
        Tensor<T> wa(cfg.M, cfg.d_model);
        for (std::uint32_t m = 0; m < cfg.M; ++m) {
            const T* app_row = emb_app.value.row_ptr(m + 2);
            const T* cat_row = emb_cat.value.row_ptr(cat_of_class[m]);
            T* dst = wa.row_ptr(m);
            for (std::uint32_t c = 0; c < cfg.d_model; ++c) dst[c] = app_row[c] + cat_row[c];
        }
        return wa;
    }

private:
    static std::uint32_t argmax_row(const Tensor<T>& t, std::size_t row) {
        const T* p = t.row_ptr(row);
        std::uint32_t best = 0;
        for (std::size_t c = 1; c < t.cols(); ++c)
            if (p[c] > p[best]) best = static_cast<std::uint32_t>(c);
        return best;
    }

    void check_record(const UserRecord& rec) const {
        if (rec.install_apps.size() != cfg.I || rec.uninstall_apps.size() != cfg.I ||
            rec.install_dates.size() != cfg.I || rec.uninstall_dates.size() != cfg.I)
            throw std::runtime_error("record sequence length differs from configured I=" +
                                     std::to_string(cfg.I));
        for (const auto* seq : {&rec.install_dates, &rec.uninstall_dates})
            for (auto d : *seq)
                if (d >= cfg.T)
                    throw std::runtime_error("date bucket " + std::to_string(d) +
                                             " out of range T=" + std::to_string(cfg.T));
    }

    void init_block(Block& blk, const std::string& prefix) {
        const std::uint32_t d = cfg.d_model;
        blk.wq = Parameter<T>(prefix + ".attn.wq", Tensor<T>(d, d));
        blk.bq = Parameter<T>(prefix + ".attn.bq", Tensor<T>(1, d));
        blk.wk = Parameter<T>(prefix + ".attn.wk", Tensor<T>(d, d));
        blk.bk = Parameter<T>(prefix + ".attn.bk", Tensor<T>(1, d));
        blk.wv = Parameter<T>(prefix + ".attn.wv", Tensor<T>(d, d));
        blk.bv = Parameter<T>(prefix + ".attn.bv", Tensor<T>(1, d));
        blk.wo = Parameter<T>(prefix + ".attn.wo", Tensor<T>(d, d));
        blk.bo = Parameter<T>(prefix + ".attn.bo", Tensor<T>(1, d));
        blk.ln1_g = Parameter<T>(prefix + ".ln1_g", Tensor<T>(1, d));
        blk.ln1_b = Parameter<T>(prefix + ".ln1_b", Tensor<T>(1, d));
        blk.ln2_g = Parameter<T>(prefix + ".ln2_g", Tensor<T>(1, d));
        blk.ln2_b = Parameter<T>(prefix + ".ln2_b", Tensor<T>(1, d));
        blk.ffn_w1 = Parameter<T>(prefix + ".ffn.w1", Tensor<T>(d, cfg.d_ffn));
        blk.ffn_b1 = Parameter<T>(prefix + ".ffn.b1", Tensor<T>(1, cfg.d_ffn));
        blk.ffn_w2 = Parameter<T>(prefix + ".ffn.w2", Tensor<T>(cfg.d_ffn, d));
        blk.ffn_b2 = Parameter<T>(prefix + ".ffn.b2", Tensor<T>(1, d));
    }

    void build_registry() {
        registry_.clear();
        registry_.insert(registry_.end(), {&emb_app, &emb_cat, &emb_date, &type_retention,
                                           &type_install, &type_uninstall, &ae_b1, &ae_w2, &ae_b2,
                                           &ae_w3, &ae_b3, &ae_b4});
        auto add_block = [&](Block& b) {
            registry_.insert(registry_.end(),
                             {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_g,
                              &b.ln1_b, &b.ln2_g, &b.ln2_b, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2});
        };
        for (auto& b : encoder) add_block(b);
        for (auto& b : decoder) add_block(b);
        registry_.insert(registry_.end(), {&bott_w_down, &bott_b_down, &bott_w_up, &bott_b_up,
                                           &head_w, &head_b, &head_b_out});
    }

    std::vector<Parameter<T>*> registry_;
};

// ---- checkpoints --------------------------------------------------------------

constexpr std::string_view kCheckpointMagic = "AETC";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kCheckpointKindModel = 0;
constexpr std::uint32_t kCheckpointKindDae = 1;

/// Parameter values as 32-bit floats in registration order, with the full
/// config, category assignment, and an fnv64 checksum trailer.
template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path,
                     std::uint32_t kind = kCheckpointKindModel) {
    BinWriter w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(kind);
    const ModelConfig& c = model.cfg;
    for (std::uint32_t v : {c.M, c.K, c.d_model, c.d_ffn, c.n_heads, c.n_encoder_layers,
                            c.n_decoder_layers, c.d_emb, c.I, c.T, c.ae_mid_dim})
        w.u32(v);
    w.f32(c.dropout_input);
    w.f32(c.dropout_attn_ffn);
    w.f32(c.leaky_slope);
    for (auto cat : model.cat_of_class) w.u32(cat);
    const auto& params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.rows()));
        w.u32(static_cast<std::uint32_t>(p->value.cols()));
        for (T v : p->value.data) w.f32(static_cast<float>(v));
    }
    const std::uint64_t sum = w.checksum();
    w.u64(sum);
    w.save(path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, std::uint32_t expect_kind = kCheckpointKindModel) {
    BinReader r = BinReader::from_file(path);
    if (r.size() < 8) throw std::runtime_error("checkpoint: truncated");
    {
        const std::size_t body = r.size() - 8;
        const std::uint64_t want = fnv1a64(r.data().data(), body);
        BinReader tail(std::vector<char>(r.data().begin() + static_cast<std::ptrdiff_t>(body), r.data().end()));
        if (tail.u64() != want) throw std::runtime_error("checkpoint: checksum mismatch");
    }
    r.expect_magic(kCheckpointMagic);
    if (r.u32() != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    if (r.u32() != expect_kind) throw std::runtime_error("checkpoint: wrong model kind");
    ModelConfig c;
    c.M = r.u32();
    c.K = r.u32();
    c.d_model = r.u32();
    c.d_ffn = r.u32();
    c.n_heads = r.u32();
    c.n_encoder_layers = r.u32();
    c.n_decoder_layers = r.u32();
    c.d_emb = r.u32();
    c.I = r.u32();
    c.T = r.u32();
    c.ae_mid_dim = r.u32();
    c.dropout_input = r.f32();
    c.dropout_attn_ffn = r.f32();
    c.leaky_slope = r.f32();
    std::vector<std::uint32_t> cats(c.M);
    for (auto& v : cats) v = r.u32();
    Model<T> model(c, std::move(cats));
    const std::uint32_t count = r.u32();
    const auto& params = model.parameters();
    if (count != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (auto* p : params) {
        const std::string name = r.str();
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
            throw std::runtime_error("checkpoint: parameter layout mismatch at " + name);
        for (auto& v : p->value.data) v = static_cast<T>(r.f32());
    }
    return model;
}

/// Parameter value snapshot for best-epoch tracking.
template <typename T>
std::vector<Tensor<T>> snapshot_values(Model<T>& m) {
    std::vector<Tensor<T>> out;
    out.reserve(m.parameters().size());
    for (auto* p : m.parameters()) out.push_back(p->value);
    return out;
}

template <typename T>
void restore_values(Model<T>& m, const std::vector<Tensor<T>>& snap) {
    const auto& params = m.parameters();
    if (snap.size() != params.size()) throw std::runtime_error("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) params[i]->value = snap[i];
}

}  // namespace appemb
