#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "appemb/ingest.hpp"
#include "appemb/rng.hpp"

namespace appemb {

struct GenreProfile {
    std::uint32_t genre_id = 0;
    std::vector<double> retention_affinity;  // over M apps, nonnegative, normalized at use
    std::vector<double> event_affinity;      // app preference for (un)install operations
    double install_rate = 1.2;               // extra Poisson events per active day
    double burstiness = 0.06;                // probability a day is active
    double churn = 0.3;                      // P(an event is an uninstall of something installed)
    double recent_bias = 0.0;                // >0 clusters activity near the snapshot, <0 early
    std::uint32_t retention_block_lo = 0;    // support of the retention affinity, used for
    std::uint32_t retention_block_hi = 0;    // carving per-user interest clusters

    void validate() const {
        double rsum = 0, esum = 0;
        for (double w : retention_affinity) {
            if (w < 0) throw std::runtime_error("genre affinity weights must be nonnegative");
            rsum += w;
        }
        for (double w : event_affinity) esum += w;
        if (rsum <= 0 || esum <= 0)
            throw std::runtime_error("genre " + std::to_string(genre_id) + " has zero-weight affinity");
        for (double p : {burstiness, churn})
            if (p < 0 || p > 1) throw std::runtime_error("genre probabilities must lie in [0,1]");
        if (install_rate < 0) throw std::runtime_error("install_rate must be nonnegative");
    }
};

struct GeneratorConfig {
    std::uint32_t n_users = 1000;
    std::uint32_t window_days = 120;
    bool twin_mode = false;  // pair genres (2g, 2g+1): same retention pool, divergent events
    std::uint32_t retention_min = 6, retention_max = 18;
    /// >1 slices each genre's retention block into this many interest
    /// clusters, assigned to users round-robin independently of genre.
    std::uint32_t retention_clusters = 1;
    std::uint32_t snapshot_day = 0;  // 0 = default snapshot
    std::vector<GenreProfile> genres;

    void validate() const {
        if (n_users < 1) throw std::runtime_error("GeneratorConfig: n_users must be >= 1");
        if (genres.empty()) throw std::runtime_error("GeneratorConfig: at least one genre required");
        if (window_days < 1) throw std::runtime_error("GeneratorConfig: window_days must be >= 1");
        if (retention_clusters < 1)
            throw std::runtime_error("GeneratorConfig: retention_clusters must be >= 1");
        if (twin_mode && genres.size() % 2 != 0)
            throw std::runtime_error("GeneratorConfig: twin_mode needs an even genre count");
        for (const auto& g : genres) g.validate();
    }
};

struct SynthUser {
    std::string user_id;
    std::uint32_t genre_id = 0;
    std::set<std::uint32_t> retention;   // dense app ids
    std::vector<ResolvedEvent> events;   // sorted by day
};

struct SynthPopulation {
    std::vector<SynthUser> users;
    std::uint32_t start_day = 0;
    std::uint32_t snapshot_day = 0;
};

/// Block-structured default profiles. Genres claim disjoint event-app blocks;
/// in twin mode a pair shares one retention block while its two event blocks
/// and timing skews diverge, so only behavior dynamics separate the pair.
inline std::vector<GenreProfile> make_genre_profiles(std::uint32_t M, std::uint32_t n_genres,
                                                     bool twin_mode, double burstiness = 0.06,
                                                     double install_rate = 1.2, double churn = 0.3,
                                                     double recent_bias = 2.5) {
    if (n_genres == 0) throw std::runtime_error("need at least one genre");
    std::vector<GenreProfile> out(n_genres);
    const std::uint32_t groups = twin_mode ? n_genres / 2 : n_genres;
    const std::uint32_t block = std::max<std::uint32_t>(1, M / std::max<std::uint32_t>(groups, 1));
    for (std::uint32_t g = 0; g < n_genres; ++g) {
        GenreProfile& p = out[g];
        p.genre_id = g;
        p.burstiness = burstiness;
        p.install_rate = install_rate;
        p.churn = churn;
        p.retention_affinity.assign(M, 1e-4);
        p.event_affinity.assign(M, 1e-4);
        const std::uint32_t group = twin_mode ? g / 2 : g;
        const std::uint32_t lo = (group * block) % M;
        const std::uint32_t hi = std::min<std::uint32_t>(lo + block, M);
        // retention block shared across a twin pair
        for (std::uint32_t m = lo; m < hi; ++m) p.retention_affinity[m] = 1.0;
        p.retention_block_lo = lo;
        p.retention_block_hi = hi;
        // event block: first or second half of the group's block
        const std::uint32_t mid = lo + (hi - lo) / 2;
        const bool second = twin_mode && (g % 2 == 1);
        for (std::uint32_t m = second ? mid : lo; m < (second ? hi : mid); ++m)
            p.event_affinity[m] = 1.0;
        p.recent_bias = twin_mode ? (g % 2 ? -recent_bias : recent_bias) : 0.0;
    }
    return out;
}

namespace detail {

inline std::uint32_t weighted_pick(Rng& rng, const std::vector<double>& weights) {
    return static_cast<std::uint32_t>(rng.categorical(weights));
}

inline std::set<std::uint32_t> sample_retention(Rng& rng, const GenreProfile& genre,
                                                std::uint32_t lo, std::uint32_t hi) {
    const std::uint32_t M = static_cast<std::uint32_t>(genre.retention_affinity.size());
    std::uint32_t want = lo + static_cast<std::uint32_t>(rng.below(hi - lo + 1));
    want = std::min(want, M);
    std::set<std::uint32_t> out;
    std::size_t guard = 0;
    while (out.size() < want && guard < 50u * want + 100u) {
        out.insert(kFirstAppIndex + weighted_pick(rng, genre.retention_affinity));
        ++guard;
    }
    return out;
}

}  // namespace detail

/// Deterministic population draw. Each user's stream is keyed by (seed,
/// user index), so generation order never affects output.
inline SynthPopulation generate(const GeneratorConfig& cfg, const AppCatalog& catalog,
                                std::uint64_t seed) {
    cfg.validate();
    for (const auto& g : cfg.genres)
        if (g.retention_affinity.size() != catalog.M || g.event_affinity.size() != catalog.M)
            throw std::runtime_error("genre affinity length differs from catalog M");

    SynthPopulation pop;
    pop.snapshot_day = cfg.snapshot_day ? cfg.snapshot_day : parse_day("2019-12-31");
    pop.start_day = pop.snapshot_day - (cfg.window_days - 1);
    const auto n_genres = static_cast<std::uint32_t>(cfg.genres.size());

    pop.users.resize(cfg.n_users);
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
        SynthUser& user = pop.users[u];
        char idbuf[24];
        std::snprintf(idbuf, sizeof idbuf, "u%06u", u);
        user.user_id = idbuf;
        user.genre_id = u % n_genres;
        const GenreProfile& genre = cfg.genres[user.genre_id];
        Rng rng = Rng::keyed(seed, 0x757365ull, u);

        if (cfg.retention_clusters > 1 && genre.retention_block_hi > genre.retention_block_lo) {
            // interest cluster by within-genre rank: orthogonal to genre, so
            // twin partners (same rank) share a cluster
            const std::uint32_t rank = u / n_genres;
            const std::uint32_t cluster = rank % cfg.retention_clusters;
            const std::uint32_t width =
                std::max<std::uint32_t>(1, (genre.retention_block_hi - genre.retention_block_lo) /
                                               cfg.retention_clusters);
            const std::uint32_t clo = genre.retention_block_lo + cluster * width;
            const std::uint32_t chi =
                cluster + 1 == cfg.retention_clusters ? genre.retention_block_hi : clo + width;
            GenreProfile sliced = genre;
            for (std::uint32_t m = 0; m < catalog.M; ++m)
                if (m < clo || m >= chi) sliced.retention_affinity[m] = 0.0;
            user.retention = detail::sample_retention(rng, sliced, cfg.retention_min, cfg.retention_max);
        } else {
            user.retention = detail::sample_retention(rng, genre, cfg.retention_min, cfg.retention_max);
        }

        // bursty timeline: sparse active days, a small burst of events on each
        const double D = static_cast<double>(cfg.window_days);
        double wsum = 0;
        std::vector<double> day_weight(cfg.window_days);
        for (std::uint32_t d = 0; d < cfg.window_days; ++d) {
            day_weight[d] = std::exp(genre.recent_bias * (static_cast<double>(d) / D - 0.5));
            wsum += day_weight[d];
        }
        const double norm = wsum / D;  // mean weight 1 keeps overall activity = burstiness
        std::vector<std::uint32_t> installed;  // uninstalls target in-window installs only
        for (std::uint32_t d = 0; d < cfg.window_days; ++d) {
            const double p_active = std::min(1.0, genre.burstiness * day_weight[d] / norm);
            if (!rng.bernoulli(p_active)) continue;
            const int n_events = 1 + rng.poisson(genre.install_rate);
            for (int e = 0; e < n_events; ++e) {
                ResolvedEvent ev;
                ev.day = pop.start_day + d;
                if (!installed.empty() && rng.bernoulli(genre.churn)) {
                    const std::size_t pick = rng.below(installed.size());
                    ev.kind = EventKind::kUninstall;
                    ev.app = installed[pick];
                    installed.erase(installed.begin() + static_cast<std::ptrdiff_t>(pick));
                } else {
                    ev.kind = EventKind::kInstall;
                    ev.app = kFirstAppIndex + detail::weighted_pick(rng, genre.event_affinity);
                    installed.push_back(ev.app);
                }
                user.events.push_back(ev);
            }
        }
    }

    if (cfg.twin_mode) {
        // per pair: odd-genre users inherit the even partners' retention
        // sets, then swaps between odd users of the same interest cluster
        // decouple individual sets while the aggregate multiset (hence the
        // marginal, and the per-cluster structure) stays exactly equal
        for (std::uint32_t pair = 0; pair * 2 + 1 < n_genres; ++pair) {
            std::vector<std::size_t> even_users, odd_users;
            for (std::size_t u = 0; u < pop.users.size(); ++u) {
                if (pop.users[u].genre_id == pair * 2) even_users.push_back(u);
                if (pop.users[u].genre_id == pair * 2 + 1) odd_users.push_back(u);
            }
            const std::size_t n = std::min(even_users.size(), odd_users.size());
            for (std::size_t i = 0; i < n; ++i)
                pop.users[odd_users[i]].retention = pop.users[even_users[i]].retention;

            Rng rng = Rng::keyed(seed, 0x7477696eull, pair);
            for (std::uint32_t cluster = 0; cluster < cfg.retention_clusters; ++cluster) {
                std::vector<std::size_t> group;
                std::size_t total = 0;
                for (std::size_t i = cluster; i < n; i += cfg.retention_clusters) {
                    group.push_back(odd_users[i]);
                    total += pop.users[odd_users[i]].retention.size();
                }
                if (group.size() < 2) continue;
                for (std::size_t s = 0; s < 4 * total; ++s) {
                    auto& a = pop.users[group[rng.below(group.size())]].retention;
                    auto& b = pop.users[group[rng.below(group.size())]].retention;
                    if (&a == &b || a.empty() || b.empty()) continue;
                    auto ita = a.begin();
                    std::advance(ita, rng.below(a.size()));
                    auto itb = b.begin();
                    std::advance(itb, rng.below(b.size()));
                    const std::uint32_t x = *ita, y = *itb;
                    if (x == y || a.count(y) || b.count(x)) continue;
                    a.erase(x);
                    a.insert(y);
                    b.erase(y);
                    b.insert(x);
                }
            }
        }
    }
    return pop;
}

/// Emit the ingest input format plus `labels.tsv`. Labels never reach the
/// model; they exist for evaluation only.
inline void write_population(const SynthPopulation& pop, const AppCatalog& catalog,
                             const std::string& events_path, const std::string& labels_path) {
    std::ofstream ev(events_path, std::ios::trunc);
    if (!ev) throw std::runtime_error("cannot open for writing: " + events_path);
    std::ofstream lb(labels_path, std::ios::trunc);
    if (!lb) throw std::runtime_error("cannot open for writing: " + labels_path);
    for (const auto& u : pop.users) {
        for (const auto& e : u.events)
            ev << "{\"user_id\":\"" << u.user_id << "\",\"type\":\"event\",\"app\":\""
               << catalog.primary_package(e.app) << "\",\"kind\":\""
               << (e.kind == EventKind::kInstall ? "install" : "uninstall") << "\",\"date\":\""
               << format_day(e.day) << "\"}\n";
        for (auto app : u.retention)
            ev << "{\"user_id\":\"" << u.user_id << "\",\"type\":\"retention\",\"app\":\""
               << catalog.primary_package(app) << "\",\"date\":\"" << format_day(pop.snapshot_day)
               << "\"}\n";
        lb << u.user_id << "\t" << u.genre_id << "\n";
    }
}

inline std::map<std::string, std::uint32_t> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::map<std::string, std::uint32_t> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("bad label line: " + line);
        out[line.substr(0, tab)] = static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
    }
    return out;
}

/// Synthetic app metadata for pipeline bootstrap: `M` single-package apps
/// over `K` categories in contiguous blocks, mild power-law capacities.
inline std::vector<AppRow> make_demo_app_rows(std::uint32_t M, std::uint32_t K) {
    std::vector<AppRow> rows;
    rows.reserve(M);
    for (std::uint32_t m = 0; m < M; ++m) {
        char pkg[32];
        std::snprintf(pkg, sizeof pkg, "app.%05u", m);
        AppRow r;
        r.package_name = pkg;
        r.logical_key = pkg;
        r.category_id = std::min(K - 1, m / std::max<std::uint32_t>(1, (M + K - 1) / K));
        r.install_capacity = 100 + 100000 / (m + 1);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// `key = value` config file with '#' comments.
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) out[key] = value;
    }
    return out;
}

}  // namespace appemb
