// appemb: one binary driving the whole pipeline
//   catalog | ingest | synth | train | infer | store | eval | gradcheck

#include <CLI11.hpp>
#include <appemb/appemb.hpp>
#include <fstream>
#include <iostream>

using namespace appemb;

namespace {

std::set<std::string> load_name_list(const std::string& path) {
    std::set<std::string> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] != '#') out.insert(line);
    }
    return out;
}

void echo_kv(const std::string& key, const std::string& value) {
    std::cout << key << " = " << value << "\n";
}

struct CatalogArgs {
    std::string app_meta, out;
    std::string preinstall_list, keep_list;
    double exclude_ubiquitous_above = 1.0;
    std::uint64_t exclude_capacity_below = 0;
    std::uint64_t total_users = 0;
};

int run_catalog(const CatalogArgs& a) {
    FilterPolicy policy;
    policy.exclude_ubiquitous_above = a.exclude_ubiquitous_above;
    policy.exclude_capacity_below = a.exclude_capacity_below;
    policy.total_users = a.total_users;
    policy.preinstall_list = load_name_list(a.preinstall_list);
    policy.keep_list = load_name_list(a.keep_list);
    AppCatalog cat = build_catalog(load_app_rows(a.app_meta), policy);
    save_catalog(cat, a.out);
    std::cout << "catalog written: M=" << cat.M << " K=" << cat.K << " -> " << a.out << "\n";
    return 0;
}

struct IngestArgs {
    std::string events, catalog, out, snapshot_date;
    IngestConfig cfg;
};

int run_ingest(const IngestArgs& a) {
    AppCatalog cat = load_catalog(a.catalog);
    IngestStats stats;
    std::optional<std::uint32_t> snapshot;
    if (!a.snapshot_date.empty()) snapshot = parse_day(a.snapshot_date);
    EventLog log = read_event_log(a.events);
    auto records = build_records(log, cat, a.cfg, snapshot, stats);
    RecordsFile f;
    f.M = cat.M;
    f.I = a.cfg.I;
    f.T = a.cfg.T;
    f.snapshot_day = records.empty() ? log.max_day : records.front().snapshot_day;
    f.records = std::move(records);
    write_records(f, a.out);
    std::cout << "records written: users=" << stats.users << " events_kept=" << stats.events_kept
              << " dropped_unresolved=" << stats.dropped_unresolved
              << " dropped_out_of_window=" << stats.dropped_out_of_window
              << " dropped_week_cap=" << stats.dropped_week_cap << " -> " << a.out << "\n";
    return 0;
}

struct SynthArgs {
    std::uint64_t seed = 0;
    std::string out_events, out_labels, catalog;
    std::string out_catalog, out_app_meta;
    std::uint32_t n_apps = 0, n_categories = 8;
    std::uint32_t n_users = 1000, n_genres = 4, window_days = 120;
    bool twin_mode = false;
    double burstiness = 0.06, install_rate = 1.2, churn = 0.3, recent_bias = 2.5;
    std::uint32_t retention_min = 6, retention_max = 18;
    std::uint32_t retention_clusters = 1;
};

int run_synth(const SynthArgs& a) {
    AppCatalog cat;
    if (!a.catalog.empty()) {
        cat = load_catalog(a.catalog);
    } else {
        if (a.n_apps == 0)
            throw std::runtime_error("synth: pass --catalog, or --n_apps to synthesize one");
        auto rows = make_demo_app_rows(a.n_apps, a.n_categories);
        if (!a.out_app_meta.empty()) {
            std::ofstream meta(a.out_app_meta, std::ios::trunc);
            for (const auto& r : rows)
                meta << r.package_name << "\t" << r.logical_key << "\t" << r.category_id << "\t"
                     << r.install_capacity << "\n";
        }
        cat = build_catalog(rows, FilterPolicy{});
        if (!a.out_catalog.empty()) save_catalog(cat, a.out_catalog);
    }
    GeneratorConfig cfg;
    cfg.n_users = a.n_users;
    cfg.window_days = a.window_days;
    cfg.twin_mode = a.twin_mode;
    cfg.retention_min = a.retention_min;
    cfg.retention_max = a.retention_max;
    cfg.retention_clusters = a.retention_clusters;
    cfg.genres = make_genre_profiles(cat.M, a.n_genres, a.twin_mode, a.burstiness, a.install_rate,
                                     a.churn, a.recent_bias);
    SynthPopulation pop = generate(cfg, cat, a.seed);
    write_population(pop, cat, a.out_events, a.out_labels);
    std::size_t events = 0;
    for (const auto& u : pop.users) events += u.events.size();
    std::cout << "population written: users=" << pop.users.size() << " events=" << events << " -> "
              << a.out_events << "\n";
    return 0;
}

struct TrainArgs {
    std::string records, catalog, out_checkpoint, metrics_log, arch = "full";
    std::uint64_t seed = 0;
    ModelConfig mc;
    TrainConfig tc;
    bool no_aux = false;
    bool dry_run = false;
};

void echo_train_config(const TrainArgs& a, std::uint32_t M, std::uint32_t K) {
    std::cout << "resolved config:\n";
    echo_kv("arch", a.arch);
    echo_kv("M", std::to_string(M));
    echo_kv("K", std::to_string(K));
    echo_kv("d_model", std::to_string(a.mc.d_model));
    echo_kv("d_ffn", std::to_string(a.mc.d_ffn));
    echo_kv("n_heads", std::to_string(a.mc.n_heads));
    echo_kv("n_encoder_layers", std::to_string(a.mc.n_encoder_layers));
    echo_kv("n_decoder_layers", std::to_string(a.mc.n_decoder_layers));
    echo_kv("d_emb", std::to_string(a.mc.d_emb));
    echo_kv("ae_mid_dim", std::to_string(a.mc.ae_mid_dim));
    echo_kv("dropout_input", std::to_string(a.mc.dropout_input));
    echo_kv("dropout_attn_ffn", std::to_string(a.mc.dropout_attn_ffn));
    echo_kv("leaky_slope", std::to_string(a.mc.leaky_slope));
    echo_kv("batch_size", std::to_string(a.tc.batch_size));
    echo_kv("epochs", std::to_string(a.tc.epochs));
    echo_kv("base_lr", std::to_string(a.tc.base_lr));
    echo_kv("decay", std::to_string(a.tc.decay));
    echo_kv("lambda_reg", std::to_string(a.tc.lambda_reg));
    echo_kv("val_fraction", std::to_string(a.tc.val_fraction));
    echo_kv("mask_per_sequence", std::to_string(a.tc.mask_per_sequence));
    echo_kv("include_aux", a.no_aux ? "0" : "1");
    echo_kv("workers", std::to_string(a.tc.workers));
    echo_kv("seed", std::to_string(a.seed));
}

int run_train(TrainArgs& a) {
    AppCatalog cat = load_catalog(a.catalog);
    RecordsFile f = read_records(a.records);
    if (f.M != cat.M) throw std::runtime_error("records were built against a different catalog (M mismatch)");
    a.mc.M = cat.M;
    a.mc.K = cat.K;
    a.mc.I = f.I;
    a.mc.T = f.T;
    a.tc.seed = a.seed;
    a.tc.include_aux = !a.no_aux;
    echo_train_config(a, cat.M, cat.K);
    if (a.dry_run) {
        if (a.arch == "full") a.mc.validate();
        a.tc.validate();
        std::cout << "dry run: configuration accepted\n";
        return 0;
    }
    if (a.arch == "dae") {
        typename DaeModel<float>::Config dc;
        dc.M = cat.M;
        dc.K = cat.K;
        dc.d_model = a.mc.d_model;
        dc.d_emb = a.mc.d_emb;
        dc.dropout_input = a.mc.dropout_input;
        dc.leaky_slope = a.mc.leaky_slope;
        DaeModel<float> dae(dc, cat.category_of_class());
        dae.init(a.seed);
        auto result = train_dae(dae, f.records, a.tc);
        save_dae_checkpoint(dae, a.out_checkpoint);
        std::cout << "dae trained: best_epoch=" << result.best_epoch
                  << " val_ce=" << result.val_ce[result.best_epoch] << " -> " << a.out_checkpoint << "\n";
        return 0;
    }
    if (a.arch != "full") throw std::runtime_error("unknown arch: " + a.arch);
    Model<float> model(a.mc, cat.category_of_class());
    model.init(a.seed);
    TrainResult result = train(model, f.records, a.tc, a.metrics_log, a.out_checkpoint);
    std::cout << "trained: best_epoch=" << result.best_epoch << " best_val=" << result.best_val
              << " -> " << a.out_checkpoint << "\n";
    return 0;
}

struct InferArgs {
    std::string checkpoint, records, out_store;
};

int run_infer(const InferArgs& a) {
    Model<float> model = load_checkpoint<float>(a.checkpoint);
    RecordsFile f = read_records(a.records);
    const std::string fid = feature_id_of_checkpoint(a.checkpoint);
    EmbeddingStore store(fid, model.cfg.d_emb);
    store.put_batch(infer(model, f.records));
    store.save(a.out_store);
    std::cout << "store written: feature_id=" << fid << " users=" << store.size() << " -> "
              << a.out_store << "\n";
    return 0;
}

int run_store_get(const std::string& store_path, const std::string& feature_id,
                  const std::string& user) {
    EmbeddingStore store = feature_id.empty() ? EmbeddingStore::load(store_path)
                                              : EmbeddingStore::open_checked(store_path, feature_id);
    auto vec = store.get(user);
    if (!vec) {
        std::cout << "absent\n";
        return 0;
    }
    for (std::size_t i = 0; i < vec->size(); ++i) std::cout << (i ? " " : "") << (*vec)[i];
    std::cout << "\n";
    return 0;
}

struct StoreUpdateArgs {
    std::string store, checkpoint, records, active_users;
};

int run_store_update(const StoreUpdateArgs& a) {
    Model<float> model = load_checkpoint<float>(a.checkpoint);
    const std::string fid = feature_id_of_checkpoint(a.checkpoint);
    EmbeddingStore store = EmbeddingStore::open_checked(a.store, fid);
    RecordsFile f = read_records(a.records);
    const std::set<std::string> active = load_name_list(a.active_users);
    const std::size_t updated = feature_update(store, model, fid, f.records, active);
    store.save(a.store);
    std::cout << "updated " << updated << " of " << store.size() << " users (revision "
              << store.revision() << ")\n";
    return 0;
}

struct EvalArgs {
    std::string records, labels, checkpoint, dae_checkpoint;
    std::string out_text, out_jsonl;
    std::string curve_with, curve_without;
    double curve_threshold = 0;
    std::size_t n_query = 500;
    std::uint64_t seed = 0;
    std::uint32_t probe_runs = 5, probe_epochs = 200;
};

int run_eval(const EvalArgs& a) {
    EvalReport report;

    if (!a.records.empty()) {
        RecordsFile f = read_records(a.records);
        std::map<std::string, UserRecord> by_id;
        for (const auto& r : f.records) by_id[r.user_id] = r;
        auto labels = load_labels(a.labels);

        std::vector<int> parity;  // probe target: odd vs even genre (twin pairing)
        auto eval_embeddings = [&](const std::string& name, EmbeddingSet set) {
            auto study = neighbor_overlap_study(set, by_id, a.n_query, a.seed, &labels);
            std::vector<std::vector<float>> vecs = set.vecs;
            std::vector<int> target;
            for (const auto& id : set.ids) target.push_back(labels.at(id) % 2 == 1 ? 1 : 0);
            ProbeConfig pc;
            pc.runs = a.probe_runs;
            pc.epochs = a.probe_epochs;
            pc.seed = a.seed;
            EmbeddingEval ev;
            ev.name = name;
            ev.overlap = study.mean_rates;
            ev.neighbor_purity = study.neighbor_purity;
            ev.probe_auc = downstream_probe(vecs, target, pc);
            report.sets.push_back(ev);
        };

        if (!a.checkpoint.empty()) {
            Model<float> model = load_checkpoint<float>(a.checkpoint);
            EmbeddingSet set;
            for (auto& [id, vec] : infer(model, f.records)) {
                set.ids.push_back(id);
                set.vecs.push_back(vec);
            }
            eval_embeddings("model", std::move(set));
        }
        if (!a.dae_checkpoint.empty()) {
            DaeModel<float> dae = load_dae_checkpoint<float>(a.dae_checkpoint);
            EmbeddingSet set;
            for (const auto& r : f.records) {
                set.ids.push_back(r.user_id);
                set.vecs.push_back(dae.embed(r));
            }
            eval_embeddings("dae", std::move(set));
        }
    }

    if (!a.curve_with.empty() && !a.curve_without.empty())
        report.curves = curve_compare(parse_metrics_log(a.curve_with), parse_metrics_log(a.curve_without),
                                      a.curve_threshold);

    report.check();
    const std::string text = report.to_text();
    std::cout << text;
    if (!a.out_text.empty()) {
        std::ofstream out(a.out_text, std::ios::trunc);
        out << text;
    }
    if (!a.out_jsonl.empty()) {
        std::ofstream out(a.out_jsonl, std::ios::trunc);
        out << report.to_jsonl();
    }
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 1;
    std::uint32_t M = 30, K = 5, I = 6;
    std::uint32_t d_model = 16, d_ffn = 32, n_heads = 2, d_emb = 8, ae_mid = 12, T = 20;
    std::uint32_t samples_per_param = 4;
    double eps = 1e-5;
    double tolerance = 1e-4;
    // large enough that reg-only coordinates (unused embedding rows) carry
    // gradients central differences can resolve against the loss magnitude
    double lambda_reg = 1e-3;
};

int run_gradcheck(const GradcheckArgs& a) {
    ModelConfig c;
    c.M = a.M;
    c.K = a.K;
    c.d_model = a.d_model;
    c.d_ffn = a.d_ffn;
    c.n_heads = a.n_heads;
    c.n_encoder_layers = 2;
    c.n_decoder_layers = 1;
    c.d_emb = a.d_emb;
    c.I = a.I;
    c.T = a.T;
    c.ae_mid_dim = a.ae_mid;
    c.dropout_input = 0.0f;   // gradcheck runs with dropout disabled
    c.dropout_attn_ffn = 0.0f;
    std::vector<std::uint32_t> cats(c.M);
    for (std::uint32_t m = 0; m < c.M; ++m) cats[m] = m % c.K;
    Model<double> model(c, cats);
    model.init(a.seed);

    Rng rng = Rng::keyed(a.seed, 0x726563ull);
    UserRecord rec;
    rec.user_id = "gradcheck";
    rec.install_apps.assign(c.I, kPadIndex);
    rec.install_dates.assign(c.I, 0);
    rec.uninstall_apps.assign(c.I, kPadIndex);
    rec.uninstall_dates.assign(c.I, 0);
    rec.n_install = c.I - 1;
    rec.n_uninstall = c.I / 2;
    auto fill = [&](std::vector<std::uint32_t>& apps, std::vector<std::uint32_t>& dates, std::uint32_t n) {
        std::vector<std::uint32_t> buckets;
        for (std::uint32_t i = 0; i < n; ++i) buckets.push_back(static_cast<std::uint32_t>(rng.below(c.T)));
        std::sort(buckets.rbegin(), buckets.rend());
        for (std::uint32_t i = 0; i < n; ++i) {
            apps[c.I - n + i] = 2 + static_cast<std::uint32_t>(rng.below(c.M));
            dates[c.I - n + i] = buckets[i];
        }
    };
    fill(rec.install_apps, rec.install_dates, rec.n_install);
    fill(rec.uninstall_apps, rec.uninstall_dates, rec.n_uninstall);
    for (int k = 0; k < 8; ++k) rec.retention.push_back(2 + static_cast<std::uint32_t>(rng.below(c.M)));
    std::sort(rec.retention.begin(), rec.retention.end());
    rec.retention.erase(std::unique(rec.retention.begin(), rec.retention.end()), rec.retention.end());

    const MaskingPlan plan = make_mask_plan({rec}, a.seed, 0);
    const RecordMask mask = plan.per_record[0];

    auto make_loss = [&](bool with_grad) {
        Graph<double> g;
        auto lb = model.joint_loss(g, rec, &mask, false, nullptr, a.lambda_reg, true);
        if (with_grad) g.backward(lb.loss);
        return g.val(lb.loss).item();
    };
    Rng check_rng = Rng::keyed(a.seed, 0x636865636bull);
    auto params = model.parameters();
    auto rep = grad_check<double>(params, make_loss, check_rng, a.samples_per_param, a.eps);
    std::cout << "gradcheck: max relative error " << rep.max_rel_err << " over " << rep.coords_checked
              << " coordinates (worst: " << rep.worst_param << ")\n";
    const bool ok = rep.max_rel_err < a.tolerance;
    std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << a.tolerance << ")\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"user embeddings from app retention/installation behavior"};
    app.require_subcommand(1);

    CatalogArgs cat_args;
    auto* cat_cmd = app.add_subcommand("catalog", "build the app vocabulary from metadata");
    cat_cmd->set_config("--config");
    cat_cmd->add_option("--app_meta,--app-meta", cat_args.app_meta, "TSV: package\\tkey\\tcategory\\tcapacity")->required();
    cat_cmd->add_option("--out", cat_args.out, "catalog output path")->required();
    cat_cmd->add_option("--exclude_ubiquitous_above,--exclude-ubiquitous-above", cat_args.exclude_ubiquitous_above,
                        "exclude apps installed by more than this fraction of users");
    cat_cmd->add_option("--exclude_capacity_below,--exclude-capacity-below", cat_args.exclude_capacity_below,
                        "exclude apps with install capacity under this count");
    cat_cmd->add_option("--total_users,--total-users", cat_args.total_users, "user-base size for the ubiquity fraction");
    cat_cmd->add_option("--preinstall_list,--preinstall-list", cat_args.preinstall_list, "file of preinstalled package names");
    cat_cmd->add_option("--keep_list,--keep-list", cat_args.keep_list, "file of package names kept despite exclusions");

    IngestArgs ing_args;
    auto* ing_cmd = app.add_subcommand("ingest", "convert event logs into fixed-shape records");
    ing_cmd->set_config("--config");
    ing_cmd->add_option("--events", ing_args.events, "JSON-lines event/retention log")->required();
    ing_cmd->add_option("--catalog", ing_args.catalog, "catalog file")->required();
    ing_cmd->add_option("--out", ing_args.out, "records output path")->required();
    ing_cmd->add_option("--seq_len,--seq-len", ing_args.cfg.I, "operations kept per sequence");
    ing_cmd->add_option("--date_buckets,--date-buckets", ing_args.cfg.T, "number of date buckets");
    ing_cmd->add_option("--per_week_cap,--per-week-cap", ing_args.cfg.per_week_cap, "max operations kept per calendar week");
    ing_cmd->add_option("--bucket_granularity,--bucket-granularity", ing_args.cfg.bucket_granularity, "days per bucket");
    ing_cmd->add_option("--snapshot_date,--snapshot-date", ing_args.snapshot_date, "override snapshot day (YYYY-MM-DD)");

    SynthArgs syn_args;
    auto* syn_cmd = app.add_subcommand("synth", "generate a labeled synthetic population");
    syn_cmd->set_config("--config");
    syn_cmd->add_option("--seed", syn_args.seed, "global random seed")->required();
    syn_cmd->add_option("--out", syn_args.out_events, "events output (JSON lines)")->required();
    syn_cmd->add_option("--labels", syn_args.out_labels, "labels.tsv output")->required();
    syn_cmd->add_option("--catalog", syn_args.catalog, "existing catalog to draw apps from");
    syn_cmd->add_option("--n_apps,--n-apps", syn_args.n_apps, "synthesize this many apps when no catalog is given");
    syn_cmd->add_option("--n_categories,--n-categories", syn_args.n_categories, "categories for the synthesized catalog");
    syn_cmd->add_option("--out_catalog,--out-catalog", syn_args.out_catalog, "write the synthesized catalog here");
    syn_cmd->add_option("--out_app_meta,--out-app-meta", syn_args.out_app_meta, "write the synthesized app metadata here");
    syn_cmd->add_option("--n_users,--n-users", syn_args.n_users, "population size");
    syn_cmd->add_option("--n_genres,--n-genres", syn_args.n_genres, "number of genres");
    syn_cmd->add_option("--window_days,--window-days", syn_args.window_days, "event window length in days");
    syn_cmd->add_flag("--twin_mode,--twin-mode", syn_args.twin_mode,
                      "pair genres with identical retention pools and divergent events");
    syn_cmd->add_option("--burstiness", syn_args.burstiness, "probability a day is active");
    syn_cmd->add_option("--install_rate,--install-rate", syn_args.install_rate, "extra events per active day");
    syn_cmd->add_option("--churn", syn_args.churn, "uninstall share of events");
    syn_cmd->add_option("--recent_bias,--recent-bias", syn_args.recent_bias, "timing skew for twin pairs");
    syn_cmd->add_option("--retention_min,--retention-min", syn_args.retention_min, "min retained apps per user");
    syn_cmd->add_option("--retention_max,--retention-max", syn_args.retention_max, "max retained apps per user");
    syn_cmd->add_option("--retention_clusters,--retention-clusters", syn_args.retention_clusters,
                        "interest clusters per retention block, orthogonal to genre");

    TrainArgs tr_args;
    auto* tr_cmd = app.add_subcommand("train", "train the embedding model (or the dae baseline)");
    tr_cmd->set_config("--config");
    tr_cmd->add_option("--records", tr_args.records, "records file")->required();
    tr_cmd->add_option("--catalog", tr_args.catalog, "catalog file")->required();
    tr_cmd->add_option("--seed", tr_args.seed, "global random seed")->required();
    tr_cmd->add_option("--out_checkpoint,--out-checkpoint", tr_args.out_checkpoint, "checkpoint output")->required();
    tr_cmd->add_option("--metrics_log,--metrics-log", tr_args.metrics_log, "per-epoch metrics log (TSV)");
    tr_cmd->add_option("--arch", tr_args.arch, "full | dae");
    tr_cmd->add_option("--d_model,--d-model", tr_args.mc.d_model, "hidden size");
    tr_cmd->add_option("--d_ffn,--d-ffn", tr_args.mc.d_ffn, "position-wise FFN size");
    tr_cmd->add_option("--n_heads,--n-heads", tr_args.mc.n_heads, "attention heads");
    tr_cmd->add_option("--n_encoder_layers,--n-encoder-layers", tr_args.mc.n_encoder_layers, "encoder layers");
    tr_cmd->add_option("--n_decoder_layers,--n-decoder-layers", tr_args.mc.n_decoder_layers, "decoder layers");
    tr_cmd->add_option("--d_emb,--d-emb", tr_args.mc.d_emb, "user embedding size");
    tr_cmd->add_option("--ae_mid_dim,--ae-mid-dim", tr_args.mc.ae_mid_dim, "autoencoder middle width");
    tr_cmd->add_option("--dropout_input,--dropout-input", tr_args.mc.dropout_input, "retention input dropout");
    tr_cmd->add_option("--dropout_attn_ffn,--dropout-attn-ffn", tr_args.mc.dropout_attn_ffn, "attention/FFN dropout");
    tr_cmd->add_option("--leaky_slope,--leaky-slope", tr_args.mc.leaky_slope, "LeakyReLU slope");
    tr_cmd->add_option("--batch_size,--batch-size", tr_args.tc.batch_size, "mini-batch size");
    tr_cmd->add_option("--epochs", tr_args.tc.epochs, "training epochs");
    tr_cmd->add_option("--base_lr,--base-lr", tr_args.tc.base_lr, "initial learning rate");
    tr_cmd->add_option("--decay", tr_args.tc.decay, "per-epoch exponential lr decay");
    tr_cmd->add_option("--lambda_reg,--lambda-reg", tr_args.tc.lambda_reg, "l2 regularization factor");
    tr_cmd->add_option("--val_fraction,--val-fraction", tr_args.tc.val_fraction, "validation split fraction");
    tr_cmd->add_option("--mask_per_sequence,--mask-per-sequence", tr_args.tc.mask_per_sequence, "apps masked per sequence");
    tr_cmd->add_option("--workers", tr_args.tc.workers,
                       "within-batch parallelism; output is identical for any value");
    tr_cmd->add_flag("--no_aux,--no-aux", tr_args.no_aux, "drop the auxiliary reconstruction task");
    tr_cmd->add_flag("--dry_run,--dry-run", tr_args.dry_run, "validate and echo the configuration, then exit");

    InferArgs inf_args;
    auto* inf_cmd = app.add_subcommand("infer", "batch-generate user embeddings into a store");
    inf_cmd->set_config("--config");
    inf_cmd->add_option("--checkpoint", inf_args.checkpoint, "model checkpoint")->required();
    inf_cmd->add_option("--records", inf_args.records, "records file")->required();
    inf_cmd->add_option("--out_store,--out-store", inf_args.out_store, "embedding store output")->required();

    auto* store_cmd = app.add_subcommand("store", "query or update an embedding store");
    std::string sg_store, sg_fid, sg_user;
    auto* get_cmd = store_cmd->add_subcommand("get", "print one user's vector");
    get_cmd->add_option("--store", sg_store, "store file")->required();
    get_cmd->add_option("--feature_id,--feature-id", sg_fid, "expected feature id (checked when given)");
    get_cmd->add_option("--user", sg_user, "user id")->required();
    StoreUpdateArgs su_args;
    auto* upd_cmd = store_cmd->add_subcommand("update", "feature-update active users in place");
    upd_cmd->add_option("--store", su_args.store, "store file")->required();
    upd_cmd->add_option("--checkpoint", su_args.checkpoint, "model checkpoint")->required();
    upd_cmd->add_option("--records", su_args.records, "fresh records")->required();
    upd_cmd->add_option("--active_users,--active-users", su_args.active_users, "file of user ids to refresh")->required();
    std::string si_store;
    auto* info_cmd = store_cmd->add_subcommand("info", "print store header facts");
    info_cmd->add_option("--store", si_store, "store file")->required();

    EvalArgs ev_args;
    auto* ev_cmd = app.add_subcommand("eval", "neighbor overlap, probes, and convergence curves");
    ev_cmd->set_config("--config");
    ev_cmd->add_option("--records", ev_args.records, "records file");
    ev_cmd->add_option("--labels", ev_args.labels, "labels.tsv from synth");
    ev_cmd->add_option("--checkpoint", ev_args.checkpoint, "model checkpoint");
    ev_cmd->add_option("--dae_checkpoint,--dae-checkpoint", ev_args.dae_checkpoint, "dae baseline checkpoint");
    ev_cmd->add_option("--out", ev_args.out_text, "text report output");
    ev_cmd->add_option("--out_jsonl,--out-jsonl", ev_args.out_jsonl, "machine-readable report output");
    ev_cmd->add_option("--n_query,--n-query", ev_args.n_query, "neighbor-study query count");
    ev_cmd->add_option("--seed", ev_args.seed, "sampling seed");
    ev_cmd->add_option("--probe_runs,--probe-runs", ev_args.probe_runs, "probe repetitions");
    ev_cmd->add_option("--probe_epochs,--probe-epochs", ev_args.probe_epochs, "probe training epochs");
    ev_cmd->add_option("--curve_with,--curve-with", ev_args.curve_with, "metrics log trained with the aux task");
    ev_cmd->add_option("--curve_without,--curve-without", ev_args.curve_without, "metrics log trained without it");
    ev_cmd->add_option("--curve_threshold,--curve-threshold", ev_args.curve_threshold, "validation threshold to reach");

    GradcheckArgs gc_args;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the joint loss gradient");
    gc_cmd->set_config("--config");
    gc_cmd->add_option("--seed", gc_args.seed, "seed for weights and the probe record");
    gc_cmd->add_option("--M", gc_args.M, "app count");
    gc_cmd->add_option("--K", gc_args.K, "category count");
    gc_cmd->add_option("--I", gc_args.I, "sequence length");
    gc_cmd->add_option("--T", gc_args.T, "date buckets");
    gc_cmd->add_option("--d_model,--d-model", gc_args.d_model, "hidden size");
    gc_cmd->add_option("--d_ffn,--d-ffn", gc_args.d_ffn, "FFN size");
    gc_cmd->add_option("--d_emb,--d-emb", gc_args.d_emb, "embedding size");
    gc_cmd->add_option("--ae_mid_dim,--ae-mid-dim", gc_args.ae_mid, "autoencoder middle width");
    gc_cmd->add_option("--n_heads,--n-heads", gc_args.n_heads, "attention heads");
    gc_cmd->add_option("--samples_per_param,--samples-per-param", gc_args.samples_per_param, "coordinates sampled per tensor");
    gc_cmd->add_option("--eps", gc_args.eps, "central difference step");
    gc_cmd->add_option("--lambda_reg,--lambda-reg", gc_args.lambda_reg, "l2 factor during the check");
    gc_cmd->add_option("--tolerance", gc_args.tolerance, "max relative error allowed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cat_cmd->parsed()) return run_catalog(cat_args);
        if (ing_cmd->parsed()) return run_ingest(ing_args);
        if (syn_cmd->parsed()) return run_synth(syn_args);
        if (tr_cmd->parsed()) return run_train(tr_args);
        if (inf_cmd->parsed()) return run_infer(inf_args);
        if (store_cmd->parsed()) {
            if (get_cmd->parsed()) return run_store_get(sg_store, sg_fid, sg_user);
            if (upd_cmd->parsed()) return run_store_update(su_args);
            if (info_cmd->parsed()) {
                EmbeddingStore store = EmbeddingStore::load(si_store);
                std::cout << "feature_id=" << store.feature_id() << " d_emb=" << store.d_emb()
                          << " users=" << store.size() << " revision=" << store.revision() << "\n";
                return 0;
            }
            throw std::runtime_error("store: expected a get/update/info subcommand");
        }
        if (ev_cmd->parsed()) return run_eval(ev_args);
        if (gc_cmd->parsed()) return run_gradcheck(gc_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
