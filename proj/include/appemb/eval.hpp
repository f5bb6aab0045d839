#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "appemb/infer_store.hpp"
#include "appemb/train.hpp"

namespace appemb {

// ---- DAE baseline ------------------------------------------------------------

/// Denoising autoencoder over retention only; layer structure mirrors the
/// main model's retention autoencoder with the bottleneck at d_emb. The
/// embedding is the middle hidden layer.
template <typename T>
class DaeModel {
public:
    struct Config {
        std::uint32_t M = 0, K = 0;
        std::uint32_t d_model = 512;
        std::uint32_t d_emb = 128;
        float dropout_input = 0.05f;
        float leaky_slope = 0.01f;
    };

    Config cfg;
    std::vector<std::uint32_t> cat_of_class;
    Parameter<T> emb_app, emb_cat;  // composed first-layer matrix, output tied to its transpose
    Parameter<T> b1, w2, b2, w3, b3, b4;

    DaeModel(Config config, std::vector<std::uint32_t> categories)
        : cfg(config), cat_of_class(std::move(categories)) {
        if (cfg.M < 1 || cfg.K < 1 || cfg.d_model < 1 || cfg.d_emb < 1)
            throw std::runtime_error("DaeModel: dimensions must be >= 1");
        if (cat_of_class.size() != cfg.M) throw std::runtime_error("DaeModel: bad category assignment");
        emb_app = Parameter<T>("dae.emb.app", Tensor<T>(cfg.M, cfg.d_model));
        emb_cat = Parameter<T>("dae.emb.cat", Tensor<T>(cfg.K, cfg.d_model));
        b1 = Parameter<T>("dae.b1", Tensor<T>(1, cfg.d_model));
        w2 = Parameter<T>("dae.w2", Tensor<T>(cfg.d_model, cfg.d_emb));
        b2 = Parameter<T>("dae.b2", Tensor<T>(1, cfg.d_emb));
        w3 = Parameter<T>("dae.w3", Tensor<T>(cfg.d_emb, cfg.d_model));
        b3 = Parameter<T>("dae.b3", Tensor<T>(1, cfg.d_model));
        b4 = Parameter<T>("dae.b4", Tensor<T>(1, cfg.M));
        registry_ = {&emb_app, &emb_cat, &b1, &w2, &b2, &w3, &b3, &b4};
    }

    DaeModel(const DaeModel&) = delete;
    DaeModel& operator=(const DaeModel&) = delete;
    DaeModel(DaeModel&& o) noexcept
        : cfg(o.cfg), cat_of_class(std::move(o.cat_of_class)), emb_app(std::move(o.emb_app)),
          emb_cat(std::move(o.emb_cat)), b1(std::move(o.b1)), w2(std::move(o.w2)), b2(std::move(o.b2)),
          w3(std::move(o.w3)), b3(std::move(o.b3)), b4(std::move(o.b4)) {
        registry_ = {&emb_app, &emb_cat, &b1, &w2, &b2, &w3, &b3, &b4};
    }

    const std::vector<Parameter<T>*>& parameters() { return registry_; }

    void init(std::uint64_t seed) {
        Rng rng = Rng::keyed(seed, 0x646165ull);
        for (auto* p : registry_) {
            if (p->name.starts_with("dae.emb.")) {
                for (auto& v : p->value.data) v = static_cast<T>(rng.normal() * 0.02);
            } else if (p->value.rows() == 1) {
                p->value.zero();
            } else {
                const double s = std::sqrt(6.0 / static_cast<double>(p->value.rows() + p->value.cols()));
                for (auto& v : p->value.data) v = static_cast<T>(rng.uniform(-s, s));
            }
            p->zero_grad();
        }
    }

    void zero_grads() {
        for (auto* p : registry_) p->zero_grad();
    }

    Tensor<T> multi_hot(const UserRecord& rec) const {
        Tensor<T> x(1, cfg.M);
        for (auto a : rec.retention) {
            if (a < kFirstAppIndex || a >= kFirstAppIndex + cfg.M)
                throw std::runtime_error("record retention app id out of range");
            x.data[a - kFirstAppIndex] = T{1};
        }
        return x;
    }

    struct LossOut {
        typename Graph<T>::Id loss;
        double reconstruction_ce;
    };

    LossOut loss(Graph<T>& g, const UserRecord& rec, bool training, Rng* rng, T lambda_reg) {
        Tensor<T> x = multi_hot(rec);
        Tensor<T> x0 = x;
        T norm{0};
        for (T v : x0.data) norm += v * v;
        if (norm > T{0}) {
            const T inv = T{1} / std::sqrt(norm);
            for (T& v : x0.data) v *= inv;
        }
        auto ids = forward_ids(g, std::move(x0), training, rng);
        const auto ce = g.sigmoid_ce(ids.x4_logits, x);
        LossOut out{ce, static_cast<double>(g.val(ce).item())};
        if (lambda_reg > T{0}) {
            std::vector<typename Graph<T>::Id> sq;
            for (auto* p : registry_) sq.push_back(g.sum_squares(g.param(*p)));
            out.loss = g.add_n({ce, g.scale(g.add_n(sq), lambda_reg)});
        }
        return out;
    }

    /// Middle-layer activations; eval mode, no corruption.
    std::vector<float> embed(const UserRecord& rec) {
        Graph<T> g;
        Tensor<T> x0 = multi_hot(rec);
        T norm{0};
        for (T v : x0.data) norm += v * v;
        if (norm > T{0}) {
            const T inv = T{1} / std::sqrt(norm);
            for (T& v : x0.data) v *= inv;
        }
        auto ids = forward_ids(g, std::move(x0), false, nullptr);
        const Tensor<T>& e = g.val(ids.x2);
        std::vector<float> out(e.numel());
        for (std::size_t i = 0; i < e.numel(); ++i) out[i] = static_cast<float>(e.data[i]);
        return out;
    }

    double reconstruction_auc(const UserRecord& rec);  // defined after auc()

private:
    struct Ids {
        typename Graph<T>::Id x2, x4_logits;
    };

    Ids forward_ids(Graph<T>& g, Tensor<T> x0, bool training, Rng* rng) {
        const T slope = static_cast<T>(cfg.leaky_slope);
        const auto w1 = g.add(g.param(emb_app), g.gather(g.param(emb_cat), cat_of_class));
        auto x = g.input(std::move(x0));
        x = g.dropout(x, static_cast<T>(cfg.dropout_input), training, rng);
        const auto x1 = g.leaky_relu(g.add_row(g.matmul(x, w1), g.param(b1)), slope);
        const auto x2 = g.leaky_relu(g.add_row(g.matmul(x1, g.param(w2)), g.param(b2)), slope);
        const auto x3 = g.leaky_relu(g.add_row(g.matmul(x2, g.param(w3)), g.param(b3)), slope);
        const auto x4 = g.add_row(g.matmul(x3, w1, false, true), g.param(b4));
        return Ids{x2, x4};
    }

    std::vector<Parameter<T>*> registry_;
};

struct DaeTrainResult {
    std::vector<double> train_ce;  // per epoch
    std::vector<double> val_ce;
    std::uint32_t best_epoch = 0;
};

template <typename T>
DaeTrainResult train_dae(DaeModel<T>& dae, const std::vector<UserRecord>& records,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw std::runtime_error("train_dae: empty dataset");
    Rng split_rng = Rng::keyed(cfg.seed, 0x73706c6974ull);
    auto perm = split_rng.sample_without_replacement(static_cast<std::uint32_t>(records.size()),
                                                     static_cast<std::uint32_t>(records.size()));
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(records.size()));
    if (n_val >= records.size()) n_val = records.size() - 1;
    std::vector<UserRecord> val_set, train_set;
    for (std::size_t i = 0; i < perm.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(records[perm[i]]);
    if (val_set.empty()) val_set = train_set;

    Adam<T> adam(dae.parameters());
    DaeTrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Tensor<T>> best_values;
    for (auto* p : dae.parameters()) best_values.push_back(p->value);

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        Rng order_rng = Rng::keyed(cfg.seed, 0x6f72646572ull, epoch);
        auto order = order_rng.sample_without_replacement(static_cast<std::uint32_t>(train_set.size()),
                                                          static_cast<std::uint32_t>(train_set.size()));
        double ce_sum = 0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end = std::min(cursor + cfg.batch_size, order.size());
            dae.zero_grads();
            for (std::size_t b = cursor; b < batch_end; ++b) {
                Rng drop_rng = Rng::keyed(cfg.seed, 0x64726f70ull + epoch, order[b]);
                Graph<T> g;
                auto lo = dae.loss(g, train_set[order[b]], true, &drop_rng,
                                   static_cast<T>(cfg.lambda_reg));
                g.backward(lo.loss);
                ce_sum += lo.reconstruction_ce;
            }
            const T inv = T{1} / static_cast<T>(batch_end - cursor);
            for (auto* p : dae.parameters())
                for (auto& gv : p->grad.data) gv *= inv;
            adam.step(dae.parameters(), lr);
            cursor = batch_end;
        }
        result.train_ce.push_back(ce_sum / static_cast<double>(train_set.size()));

        double val_sum = 0;
        for (const auto& rec : val_set) {
            Graph<T> g;
            val_sum += dae.loss(g, rec, false, nullptr, T{0}).reconstruction_ce;
        }
        const double val_ce = val_sum / static_cast<double>(val_set.size());
        result.val_ce.push_back(val_ce);
        if (val_ce < best) {
            best = val_ce;
            result.best_epoch = epoch;
            best_values.clear();
            for (auto* p : dae.parameters()) best_values.push_back(p->value);
        }
    }
    {
        auto params = dae.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    }
    return result;
}

// ---- DAE checkpoint ------------------------------------------------------------

template <typename T>
void save_dae_checkpoint(DaeModel<T>& dae, const std::string& path) {
    BinWriter w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(kCheckpointKindDae);
    w.u32(dae.cfg.M);
    w.u32(dae.cfg.K);
    w.u32(dae.cfg.d_model);
    w.u32(dae.cfg.d_emb);
    w.f32(dae.cfg.dropout_input);
    w.f32(dae.cfg.leaky_slope);
    for (auto c : dae.cat_of_class) w.u32(c);
    const auto& params = dae.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.rows()));
        w.u32(static_cast<std::uint32_t>(p->value.cols()));
        for (T v : p->value.data) w.f32(static_cast<float>(v));
    }
    w.u64(w.checksum());
    w.save(path);
}

template <typename T>
DaeModel<T> load_dae_checkpoint(const std::string& path) {
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
    if (r.u32() != kCheckpointKindDae) throw std::runtime_error("checkpoint: wrong model kind");
    typename DaeModel<T>::Config c;
    c.M = r.u32();
    c.K = r.u32();
    c.d_model = r.u32();
    c.d_emb = r.u32();
    c.dropout_input = r.f32();
    c.leaky_slope = r.f32();
    std::vector<std::uint32_t> cats(c.M);
    for (auto& v : cats) v = r.u32();
    DaeModel<T> dae(c, std::move(cats));
    const std::uint32_t count = r.u32();
    if (count != dae.parameters().size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (auto* p : dae.parameters()) {
        const std::string name = r.str();
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
            throw std::runtime_error("checkpoint: parameter layout mismatch at " + name);
        for (auto& v : p->value.data) v = static_cast<T>(r.f32());
    }
    return dae;
}

// ---- nearest neighbors & overlap -------------------------------------------------

struct EmbeddingSet {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> vecs;

    std::size_t size() const { return ids.size(); }
};

/// Exact Euclidean argmin over the pool, skipping entries whose id equals
/// the query id; distance ties break toward the smaller user id.
inline std::size_t nearest_neighbor_index(const EmbeddingSet& pool, const std::vector<float>& query,
                                          const std::string& query_id) {
    if (pool.size() == 0) throw std::runtime_error("nearest_neighbor: empty pool");
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = static_cast<std::size_t>(-1);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool.ids[i] == query_id) continue;
        const auto& v = pool.vecs[i];
        double d = 0;
        for (std::size_t c = 0; c < query.size(); ++c) {
            const double diff = static_cast<double>(v[c]) - static_cast<double>(query[c]);
            d += diff * diff;
        }
        if (d < best || (d == best && (best_i == static_cast<std::size_t>(-1) ||
                                       pool.ids[i] < pool.ids[best_i]))) {
            best = d;
            best_i = i;
        }
    }
    if (best_i == static_cast<std::size_t>(-1))
        throw std::runtime_error("nearest_neighbor: pool contains only the query itself");
    return best_i;
}

/// |set(U) ∩ set(V)| / |set(U)|; zero when U's set is empty.
inline double overlap_rate(const std::set<std::uint32_t>& u, const std::set<std::uint32_t>& v) {
    if (u.empty()) return 0.0;
    std::size_t inter = 0;
    for (auto x : u) inter += v.count(x);
    return static_cast<double>(inter) / static_cast<double>(u.size());
}

struct BehaviorSets {
    std::set<std::uint32_t> retention, installs, uninstalls;
};

/// Sequences collapse to app sets: dates and repeated operations on one app
/// are not considered.
inline BehaviorSets behavior_sets(const UserRecord& rec) {
    BehaviorSets out;
    out.retention.insert(rec.retention.begin(), rec.retention.end());
    for (auto a : rec.install_apps)
        if (a != kPadIndex) out.installs.insert(a);
    for (auto a : rec.uninstall_apps)
        if (a != kPadIndex) out.uninstalls.insert(a);
    return out;
}

struct OverlapRates {
    double retention = 0, install = 0, uninstall = 0;
};

struct OverlapStudy {
    OverlapRates mean_rates;
    double neighbor_purity = 0;  // fraction of neighbor pairs sharing a label (when labels given)
    std::size_t n_pairs = 0;
};

/// Sample queries without replacement, find each one's exact nearest
/// neighbor in the pool, and average the per-behavior overlap rates.
inline OverlapStudy neighbor_overlap_study(const EmbeddingSet& embeddings,
                                           const std::map<std::string, UserRecord>& records,
                                           std::size_t n_query, std::uint64_t seed,
                                           const std::map<std::string, std::uint32_t>* labels = nullptr) {
    if (embeddings.size() < 2) throw std::runtime_error("overlap study: need at least two embeddings");
    n_query = std::min(n_query, embeddings.size());
    Rng rng = Rng::keyed(seed, 0x71756572ull);
    auto picks = rng.sample_without_replacement(static_cast<std::uint32_t>(embeddings.size()),
                                                static_cast<std::uint32_t>(n_query));
    OverlapStudy study;
    double pure = 0;
    for (auto qi : picks) {
        const auto ni = nearest_neighbor_index(embeddings, embeddings.vecs[qi], embeddings.ids[qi]);
        const auto u = behavior_sets(records.at(embeddings.ids[qi]));
        const auto v = behavior_sets(records.at(embeddings.ids[ni]));
        study.mean_rates.retention += overlap_rate(u.retention, v.retention);
        study.mean_rates.install += overlap_rate(u.installs, v.installs);
        study.mean_rates.uninstall += overlap_rate(u.uninstalls, v.uninstalls);
        if (labels) pure += labels->at(embeddings.ids[qi]) == labels->at(embeddings.ids[ni]) ? 1.0 : 0.0;
        ++study.n_pairs;
    }
    const double n = static_cast<double>(study.n_pairs);
    study.mean_rates.retention /= n;
    study.mean_rates.install /= n;
    study.mean_rates.uninstall /= n;
    if (labels) study.neighbor_purity = pure / n;
    return study;
}

// ---- AUC & probe ------------------------------------------------------------------

/// Exact rank-statistic AUC with average ranks for ties.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::runtime_error("auc: scores and labels must align and be nonempty");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += (l == 1);
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::runtime_error("auc: single-class labels");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

template <typename T>
double DaeModel<T>::reconstruction_auc(const UserRecord& rec) {
    Graph<T> g;
    Tensor<T> x0 = multi_hot(rec);
    Tensor<T> x = x0;
    T norm{0};
    for (T v : x0.data) norm += v * v;
    if (norm > T{0}) {
        const T inv = T{1} / std::sqrt(norm);
        for (T& v : x0.data) v *= inv;
    }
    auto ids = forward_ids(g, std::move(x0), false, nullptr);
    const Tensor<T>& logits = g.val(ids.x4_logits);
    std::vector<double> scores(logits.data.begin(), logits.data.end());
    std::vector<int> labels;
    for (T v : x.data) labels.push_back(v > T{0} ? 1 : 0);
    return auc(scores, labels);
}

struct ProbeConfig {
    std::uint32_t runs = 5;
    std::uint32_t epochs = 200;
    double lr = 0.05;
    std::uint64_t seed = 0;
};

/// Linear probe on frozen embeddings: 3:1:1 split per run, best-val-AUC
/// model selection, mean test AUC over runs.
inline double downstream_probe(const std::vector<std::vector<float>>& embeddings,
                               const std::vector<int>& labels, const ProbeConfig& cfg = {}) {
    if (embeddings.size() != labels.size() || embeddings.empty())
        throw std::runtime_error("probe: embeddings/labels mismatch");
    {
        std::size_t pos = 0;
        for (int l : labels) pos += (l == 1);
        if (pos == 0 || pos == labels.size()) throw std::runtime_error("probe: single-class target");
    }
    const std::size_t n = embeddings.size();
    const std::size_t d = embeddings[0].size();

    double auc_sum = 0;
    for (std::uint32_t run = 0; run < cfg.runs; ++run) {
        Rng rng = Rng::keyed(cfg.seed, 0x70726f6265ull, run);
        auto perm = rng.sample_without_replacement(static_cast<std::uint32_t>(n),
                                                   static_cast<std::uint32_t>(n));
        const std::size_t n_train = n * 3 / 5, n_valid = n / 5;
        auto slice = [&](std::size_t lo, std::size_t hi) {
            Tensor<double> X(hi - lo, d);
            Tensor<double> y(hi - lo, 1);
            std::vector<int> lab(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                for (std::size_t c = 0; c < d; ++c) X.at(i - lo, c) = embeddings[perm[i]][c];
                y.data[i - lo] = labels[perm[i]] == 1 ? 1.0 : 0.0;
                lab[i - lo] = labels[perm[i]];
            }
            return std::tuple{X, y, lab};
        };
        auto [Xtr, ytr, ltr] = slice(0, n_train);
        auto [Xva, yva, lva] = slice(n_train, n_train + n_valid);
        auto [Xte, yte, lte] = slice(n_train + n_valid, n);

        Parameter<double> w("probe.w", Tensor<double>(d, 1));
        Parameter<double> b("probe.b", Tensor<double>(1, 1));
        Rng wrng = Rng::keyed(cfg.seed, 0x77696e6974ull, run);
        for (auto& v : w.value.data) v = wrng.normal() * 0.01;
        std::vector<Parameter<double>*> params{&w, &b};
        Adam<double> adam(params);

        auto scores_for = [&](const Tensor<double>& X) {
            std::vector<double> s(X.rows());
            for (std::size_t i = 0; i < X.rows(); ++i) {
                double acc = b.value.data[0];
                for (std::size_t c = 0; c < d; ++c) acc += X.at(i, c) * w.value.data[c];
                s[i] = acc;
            }
            return s;
        };

        double best_val = -1;
        Tensor<double> best_w = w.value, best_b = b.value;
        for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            Graph<double> g;
            auto z = g.add_row(g.matmul(g.input(Xtr), g.param(w)), g.param(b));
            auto loss = g.sigmoid_ce(z, ytr);
            w.zero_grad();
            b.zero_grad();
            g.backward(loss);
            adam.step(params, cfg.lr);
            if (epoch % 10 == 9 || epoch + 1 == cfg.epochs) {
                try {
                    const double va = auc(scores_for(Xva), lva);
                    if (va > best_val) {
                        best_val = va;
                        best_w = w.value;
                        best_b = b.value;
                    }
                } catch (const std::runtime_error&) {
                    // single-class validation slice: skip model selection
                }
            }
        }
        w.value = best_w;
        b.value = best_b;
        auc_sum += auc(scores_for(Xte), lte);
    }
    return auc_sum / static_cast<double>(cfg.runs);
}

// ---- convergence curve comparison ---------------------------------------------------

struct CurveSummary {
    std::optional<std::uint32_t> epochs_to_threshold;  // first epoch at or under threshold
    double final_value = 0;
};

inline CurveSummary summarize_curve(const std::vector<EpochMetrics>& curve, double threshold) {
    CurveSummary out;
    if (curve.empty()) throw std::runtime_error("curve_compare: empty curve");
    for (const auto& m : curve) {
        if (!out.epochs_to_threshold && m.val_main_plus_mask <= threshold)
            out.epochs_to_threshold = m.epoch;
    }
    out.final_value = curve.back().val_main_plus_mask;
    return out;
}

struct CurveComparison {
    CurveSummary with_aux, without_aux;
    double threshold = 0;
};

inline CurveComparison curve_compare(const std::vector<EpochMetrics>& with_aux,
                                     const std::vector<EpochMetrics>& without_aux, double threshold) {
    CurveComparison out;
    out.threshold = threshold;
    out.with_aux = summarize_curve(with_aux, threshold);
    out.without_aux = summarize_curve(without_aux, threshold);
    return out;
}

// ---- report -----------------------------------------------------------------------

struct EmbeddingEval {
    std::string name;
    OverlapRates overlap;
    double neighbor_purity = 0;
    double probe_auc = 0;
};

struct EvalReport {
    std::vector<EmbeddingEval> sets;
    std::optional<CurveComparison> curves;

    void check() const {
        for (const auto& s : sets)
            for (double v : {s.overlap.retention, s.overlap.install, s.overlap.uninstall,
                             s.neighbor_purity, s.probe_auc})
                if (v < 0.0 || v > 1.0) throw std::runtime_error("EvalReport: rate outside [0,1]");
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "embedding evaluation\n";
        for (const auto& s : sets) {
            out << "  [" << s.name << "]\n";
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "    neighbor overlap: retention %.4f install %.4f uninstall %.4f\n",
                          s.overlap.retention, s.overlap.install, s.overlap.uninstall);
            out << buf;
            std::snprintf(buf, sizeof buf, "    neighbor purity: %.4f\n    probe auc: %.4f\n",
                          s.neighbor_purity, s.probe_auc);
            out << buf;
        }
        if (curves) {
            out << "  [convergence]\n    threshold " << curves->threshold << "\n";
            auto fmt = [&](const char* name, const CurveSummary& c) {
                std::ostringstream line;
                line << "    " << name << ": ";
                if (c.epochs_to_threshold)
                    line << "reached at epoch " << *c.epochs_to_threshold;
                else
                    line << "not reached";
                line << ", final " << c.final_value << "\n";
                return line.str();
            };
            out << fmt("with aux", curves->with_aux);
            out << fmt("without aux", curves->without_aux);
        }
        return out.str();
    }

    std::string to_jsonl() const {
        std::ostringstream out;
        for (const auto& s : sets) {
            nlohmann::json j{{"record", "embedding_set"},
                             {"name", s.name},
                             {"overlap_retention", s.overlap.retention},
                             {"overlap_install", s.overlap.install},
                             {"overlap_uninstall", s.overlap.uninstall},
                             {"neighbor_purity", s.neighbor_purity},
                             {"probe_auc", s.probe_auc}};
            out << j.dump() << "\n";
        }
        if (curves) {
            nlohmann::json j{{"record", "curve_compare"}, {"threshold", curves->threshold}};
            j["with_aux_final"] = curves->with_aux.final_value;
            j["without_aux_final"] = curves->without_aux.final_value;
            if (curves->with_aux.epochs_to_threshold)
                j["with_aux_epochs"] = *curves->with_aux.epochs_to_threshold;
            if (curves->without_aux.epochs_to_threshold)
                j["without_aux_epochs"] = *curves->without_aux.epochs_to_threshold;
            out << j.dump() << "\n";
        }
        return out.str();
    }
};

}  // namespace appemb
