#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "appemb/model.hpp"

namespace appemb {

struct TrainConfig {
    std::uint32_t batch_size = 1000;
    std::uint32_t epochs = 10;
    double base_lr = 1e-4;
    double decay = 0.8;          // exponential decay factor per epoch
    double lambda_reg = 1.5e-7;  // l2 factor over all trainable parameters
    std::uint64_t seed = 0;
    double val_fraction = 0.1;   // 0 evaluates the validation metric on the training set
    bool include_aux = true;     // ablation switch for the auxiliary reconstruction task
    std::uint32_t mask_per_sequence = 3;
    std::uint32_t workers = 1;   // within-batch fan-out; reduction order is fixed, so the
                                 // result is bitwise independent of this value

    void validate() const {
        if (batch_size < 1) throw std::runtime_error("TrainConfig: batch_size must be >= 1");
        if (epochs < 1) throw std::runtime_error("TrainConfig: epochs must be >= 1");
        if (!(decay > 0.0 && decay <= 1.0)) throw std::runtime_error("TrainConfig: decay must be in (0,1]");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            throw std::runtime_error("TrainConfig: val_fraction must be in [0,1)");
        if (workers < 1) throw std::runtime_error("TrainConfig: workers must be >= 1");
    }
};

inline double lr_at(const TrainConfig& cfg, std::uint32_t epoch) {
    return cfg.base_lr * std::pow(cfg.decay, static_cast<double>(epoch));
}

struct MaskingPlan {
    std::vector<RecordMask> per_record;  // aligned with the record list
};

/// Uniform sampling without replacement of min(k, n_real) positions per
/// sequence. Deterministic in (seed, epoch); resample every epoch.
inline MaskingPlan make_mask_plan(const std::vector<UserRecord>& records, std::uint64_t seed,
                                  std::uint32_t epoch, std::uint32_t k = 3) {
    MaskingPlan plan;
    plan.per_record.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = Rng::keyed(seed, 0x6d61736bull + epoch, i);
        const UserRecord& rec = records[i];
        auto pick = [&](std::uint32_t n_real, std::uint32_t I) {
            std::vector<std::uint32_t> out;
            if (n_real == 0) return out;
            const std::uint32_t take = std::min(k, n_real);
            // real positions occupy the suffix [I - n_real, I)
            auto offs = rng.sample_without_replacement(n_real, take);
            for (auto o : offs) out.push_back(I - n_real + o);
            std::sort(out.begin(), out.end());
            return out;
        };
        const auto I = static_cast<std::uint32_t>(rec.install_apps.size());
        plan.per_record[i].install_positions = pick(rec.n_install, I);
        plan.per_record[i].uninstall_positions = pick(rec.n_uninstall, I);
    }
    return plan;
}

/// Bias-corrected Adam. Tied groups are single Parameter objects, so each
/// has exactly one moment pair no matter how many sites use it.
template <typename T>
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const std::vector<Parameter<T>*>& params) {
        moments_.reserve(params.size());
        for (const auto* p : params)
            moments_.push_back({Tensor<T>(p->value.rows(), p->value.cols()),
                                Tensor<T>(p->value.rows(), p->value.cols())});
    }

    std::uint64_t steps() const { return t_; }

    void step(const std::vector<Parameter<T>*>& params, double lr) {
        if (params.size() != moments_.size()) throw std::runtime_error("Adam: parameter set changed");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter<T>& p = *params[i];
            if (!p.trainable) continue;
            auto& [m, v] = moments_[i];
            for (std::size_t j = 0; j < p.value.numel(); ++j) {
                const double g = static_cast<double>(p.grad.data[j]);
                if (!std::isfinite(g))
                    throw std::runtime_error("Adam: non-finite gradient in parameter " + p.name);
                const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * g;
                const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * g * g;
                m.data[j] = static_cast<T>(mj);
                v.data[j] = static_cast<T>(vj);
                const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
                p.value.data[j] = static_cast<T>(static_cast<double>(p.value.data[j]) - update);
            }
        }
    }

private:
    struct Moment {
        Tensor<T> m, v;
    };
    std::vector<Moment> moments_;
    std::uint64_t t_ = 0;
};

struct EpochMetrics {
    std::uint32_t epoch = 0;
    double lr = 0;
    double l_main = 0, l_aux = 0, l_mask = 0, l_reg = 0;
    double val_main_plus_mask = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::uint32_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    bool diverged = false;
};

inline void append_metrics_line(std::ofstream& out, const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%u\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\n", m.epoch, m.lr, m.l_main,
                  m.l_aux, m.l_mask, m.l_reg, m.val_main_plus_mask);
    out << buf;
    out.flush();
}

/// Joint training loop. Masking applies to training forwards only. The
/// validation metric is mean L_main from unmasked forwards plus mean L_mask
/// from forwards under a fixed epoch-independent validation mask plan, per
/// the monitored quantity. The best-by-validation parameter values are
/// restored into the model before returning (and before a divergence throw).
template <typename T>
TrainResult train(Model<T>& model, const std::vector<UserRecord>& records, const TrainConfig& cfg,
                  const std::string& metrics_path = "", const std::string& checkpoint_path = "") {
    cfg.validate();
    if (records.empty()) throw std::runtime_error("train: empty dataset");

    // deterministic split
    Rng split_rng = Rng::keyed(cfg.seed, 0x73706c6974ull);
    auto perm = split_rng.sample_without_replacement(static_cast<std::uint32_t>(records.size()),
                                                     static_cast<std::uint32_t>(records.size()));
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(records.size()));
    if (n_val >= records.size()) n_val = records.size() - 1;
    std::vector<UserRecord> val_set, train_set;
    for (std::size_t i = 0; i < perm.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(records[perm[i]]);
    if (val_set.empty()) val_set = train_set;  // overfit-style runs monitor the training set

    const MaskingPlan val_plan =
        make_mask_plan(val_set, cfg.seed ^ 0x76616c6d61736bull, 0, cfg.mask_per_sequence);

    std::ofstream log;
    if (!metrics_path.empty()) {
        log.open(metrics_path, std::ios::trunc);
        if (!log) throw std::runtime_error("cannot open metrics log: " + metrics_path);
        log << "# epoch\tlr\tl_main\tl_aux\tl_mask\tl_reg\tval_main_plus_mask\n";
    }

    Adam<T> adam(model.parameters());
    const auto& params = model.parameters();
    TrainResult result;
    std::vector<Tensor<T>> best_values = snapshot_values(model);

    auto validation_metric = [&]() {
        double main_sum = 0, mask_sum = 0;
        for (std::size_t i = 0; i < val_set.size(); ++i) {
            Graph<T> g;
            auto lb = model.joint_loss(g, val_set[i], nullptr, false, nullptr, T{0}, cfg.include_aux);
            main_sum += lb.terms.l_main;
            Graph<T> gm;
            auto lbm = model.joint_loss(gm, val_set[i], &val_plan.per_record[i], false, nullptr, T{0},
                                        cfg.include_aux);
            mask_sum += lbm.terms.l_mask;
        }
        return main_sum / static_cast<double>(val_set.size()) +
               mask_sum / static_cast<double>(val_set.size());
    };

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        const MaskingPlan plan = make_mask_plan(train_set, cfg.seed, epoch, cfg.mask_per_sequence);
        Rng order_rng = Rng::keyed(cfg.seed, 0x6f72646572ull, epoch);
        auto order = order_rng.sample_without_replacement(static_cast<std::uint32_t>(train_set.size()),
                                                          static_cast<std::uint32_t>(train_set.size()));

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end = std::min(cursor + cfg.batch_size, order.size());
            const auto batch_n = static_cast<T>(batch_end - cursor);
            model.zero_grads();

            auto record_pass = [&](std::size_t b, Graph<T>& g, LossTerms<double>& terms) {
                const std::uint32_t idx = order[b];
                Rng drop_rng = Rng::keyed(cfg.seed, 0x64726f70ull + epoch, idx);
                auto lb = model.joint_loss(g, train_set[idx], &plan.per_record[idx], true, &drop_rng,
                                           static_cast<T>(cfg.lambda_reg), cfg.include_aux);
                terms = lb.terms;
                return lb.loss;
            };

            if (cfg.workers <= 1) {
                for (std::size_t b = cursor; b < batch_end; ++b) {
                    Graph<T> g;
                    LossTerms<double> terms;
                    g.backward(record_pass(b, g, terms));
                    em.l_main += terms.l_main;
                    em.l_aux += terms.l_aux;
                    em.l_mask += terms.l_mask;
                    em.l_reg += terms.l_reg;
                }
            } else {
                // fan out, then reduce per-record gradients in batch order so
                // the result matches the single-worker run bitwise
                const std::size_t n = batch_end - cursor;
                std::vector<std::unordered_map<Parameter<T>*, Tensor<T>>> grads(n);
                std::vector<LossTerms<double>> terms(n);
                const std::size_t n_workers = std::min<std::size_t>(cfg.workers, n);
                std::vector<std::thread> pool;
                pool.reserve(n_workers);
                for (std::size_t w = 0; w < n_workers; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t k = w; k < n; k += n_workers) {
                            Graph<T> g;
                            g.backward(record_pass(cursor + k, g, terms[k]),
                                       /*accumulate_params=*/false);
                            for (auto& [p, t] : g.param_grads())
                                if (!t->empty()) grads[k].emplace(p, *t);
                        }
                    });
                for (auto& th : pool) th.join();
                for (std::size_t k = 0; k < n; ++k) {
                    for (auto& [p, t] : grads[k]) axpy(p->grad, T{1}, t);
                    em.l_main += terms[k].l_main;
                    em.l_aux += terms[k].l_aux;
                    em.l_mask += terms[k].l_mask;
                    em.l_reg += terms[k].l_reg;
                }
            }

            const T inv = T{1} / batch_n;
            for (auto* p : params)
                for (auto& gv : p->grad.data) gv *= inv;
            adam.step(params, lr);
            cursor = batch_end;
        }
        const auto n_train = static_cast<double>(train_set.size());
        em.l_main /= n_train;
        em.l_aux /= n_train;
        em.l_mask /= n_train;
        em.l_reg /= n_train;
        em.val_main_plus_mask = validation_metric();
        result.metrics.push_back(em);
        if (log.is_open()) append_metrics_line(log, em);

        if (!std::isfinite(em.val_main_plus_mask)) {
            result.diverged = true;
            restore_values(model, best_values);
            if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                     "; last good checkpoint is from epoch " +
                                     std::to_string(result.best_epoch));
        }
        if (em.val_main_plus_mask < result.best_val) {
            result.best_val = em.val_main_plus_mask;
            result.best_epoch = epoch;
            best_values = snapshot_values(model);
        }
    }

    restore_values(model, best_values);
    if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    return result;
}

// ---- metrics log parsing (shared with eval's curve comparison) ----------------

inline std::vector<EpochMetrics> parse_metrics_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics log: " + path);
    std::vector<EpochMetrics> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        EpochMetrics m;
        if (std::sscanf(line.c_str(), "%u\t%lg\t%lg\t%lg\t%lg\t%lg\t%lg", &m.epoch, &m.lr, &m.l_main,
                        &m.l_aux, &m.l_mask, &m.l_reg, &m.val_main_plus_mask) != 7)
            throw std::runtime_error("bad metrics line: " + line);
        out.push_back(m);
    }
    return out;
}

}  // namespace appemb
