#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "appemb/catalog.hpp"
#include "appemb/serialize.hpp"

namespace appemb {

enum class EventKind : std::uint8_t { kInstall, kUninstall };

struct RawEvent {
    std::string user_id;
    std::string package;
    EventKind kind = EventKind::kInstall;
    std::uint32_t day = 0;  // serial day (days since 1970-01-01)
};

/// ISO-8601 day -> serial day number.
inline std::uint32_t parse_day(const std::string& iso) {
    unsigned y = 0, m = 0, d = 0;
    if (std::sscanf(iso.c_str(), "%4u-%2u-%2u", &y, &m, &d) != 3)
        throw std::runtime_error("bad date, want YYYY-MM-DD: " + iso);
    const std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(y)),
                                          std::chrono::month(m), std::chrono::day(d)};
    if (!ymd.ok()) throw std::runtime_error("invalid calendar day: " + iso);
    const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
    if (days < 0) throw std::runtime_error("dates before 1970 unsupported: " + iso);
    return static_cast<std::uint32_t>(days);
}

inline std::string format_day(std::uint32_t serial) {
    const std::chrono::year_month_day ymd{std::chrono::sys_days(std::chrono::days(serial))};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Monday-start calendar week index (1970-01-01 was a Thursday).
inline std::uint32_t week_index(std::uint32_t serial_day) { return (serial_day + 3) / 7; }

struct IngestConfig {
    std::uint32_t I = 25;                // sequence length
    std::uint32_t T = 180;               // date buckets
    std::uint32_t per_week_cap = 10;     // joint install+uninstall cap per calendar week
    std::uint32_t bucket_granularity = 1;  // days per bucket

    void validate() const {
        if (I < 1 || T < 1 || per_week_cap < 1 || bucket_granularity < 1)
            throw std::runtime_error("IngestConfig: I, T, per_week_cap, granularity must be >= 1");
    }
};

struct IngestStats {
    std::uint64_t dropped_out_of_window = 0;
    std::uint64_t dropped_unresolved = 0;
    std::uint64_t dropped_week_cap = 0;
    std::uint64_t dropped_sequence_cap = 0;
    std::uint64_t users = 0;
    std::uint64_t events_kept = 0;
};

/// Fixed-shape per-user training example. Sequences are stored
/// chronologically (oldest first) after a contiguous PAD prefix; date
/// entries hold the age bucket of each operation.
struct UserRecord {
    std::string user_id;
    std::vector<std::uint32_t> retention;  // sorted dense app ids
    std::vector<std::uint32_t> install_apps, install_dates;
    std::vector<std::uint32_t> uninstall_apps, uninstall_dates;
    std::uint32_t n_install = 0;
    std::uint32_t n_uninstall = 0;
    std::uint32_t snapshot_day = 0;

    bool operator==(const UserRecord&) const = default;
};

/// Age bucket of an event relative to the snapshot; nullopt when the event
/// falls outside the modeled window (callers count, never fail).
inline std::optional<std::uint32_t> date_bucket(std::uint32_t event_day, std::uint32_t snapshot_day,
                                                const IngestConfig& cfg) {
    if (event_day > snapshot_day) return std::nullopt;
    const std::uint32_t bucket = (snapshot_day - event_day) / cfg.bucket_granularity;
    if (bucket >= cfg.T) return std::nullopt;
    return bucket;
}

struct ResolvedEvent {
    std::uint32_t app = 0;  // dense id
    EventKind kind = EventKind::kInstall;
    std::uint32_t day = 0;
};

/// Keep the most recent per_week_cap operations within each calendar week
/// (install and uninstall counted jointly), then the most recent I per kind.
/// Input must be sorted by day (ties keep input order); output stays sorted.
inline std::vector<ResolvedEvent> window_truncate(const std::vector<ResolvedEvent>& events,
                                                  const IngestConfig& cfg, IngestStats* stats = nullptr) {
    std::map<std::uint32_t, std::vector<std::size_t>> by_week;
    for (std::size_t i = 0; i < events.size(); ++i) by_week[week_index(events[i].day)].push_back(i);

    std::vector<char> keep(events.size(), 0);
    for (auto& [week, idxs] : by_week) {
        const std::size_t start = idxs.size() > cfg.per_week_cap ? idxs.size() - cfg.per_week_cap : 0;
        if (stats) stats->dropped_week_cap += start;
        for (std::size_t i = start; i < idxs.size(); ++i) keep[idxs[i]] = 1;
    }

    // most recent I per kind = drop all but the last I kept of each kind
    std::uint32_t seen_install = 0, seen_uninstall = 0;
    std::vector<ResolvedEvent> out;
    std::vector<std::size_t> kept_order;
    for (std::size_t i = events.size(); i-- > 0;) {
        if (!keep[i]) continue;
        auto& seen = events[i].kind == EventKind::kInstall ? seen_install : seen_uninstall;
        if (seen >= cfg.I) {
            if (stats) ++stats->dropped_sequence_cap;
            continue;
        }
        ++seen;
        kept_order.push_back(i);
    }
    out.reserve(kept_order.size());
    for (std::size_t i = kept_order.size(); i-- > 0;) out.push_back(events[kept_order[i]]);
    return out;
}

/// PAD-prefix the (already truncated) events into the fixed record shape.
inline UserRecord assemble_record(std::string user_id, const std::set<std::uint32_t>& retention,
                                  const std::vector<ResolvedEvent>& truncated, std::uint32_t snapshot_day,
                                  const IngestConfig& cfg) {
    UserRecord rec;
    rec.user_id = std::move(user_id);
    rec.snapshot_day = snapshot_day;
    rec.retention.assign(retention.begin(), retention.end());
    rec.install_apps.assign(cfg.I, kPadIndex);
    rec.install_dates.assign(cfg.I, 0);
    rec.uninstall_apps.assign(cfg.I, kPadIndex);
    rec.uninstall_dates.assign(cfg.I, 0);

    std::vector<const ResolvedEvent*> installs, uninstalls;
    for (const auto& e : truncated)
        (e.kind == EventKind::kInstall ? installs : uninstalls).push_back(&e);
    if (installs.size() > cfg.I || uninstalls.size() > cfg.I)
        throw std::runtime_error("assemble_record: more events than sequence slots; truncate first");

    auto place = [&](const std::vector<const ResolvedEvent*>& evs, std::vector<std::uint32_t>& apps,
                     std::vector<std::uint32_t>& dates) {
        const std::size_t pad = cfg.I - evs.size();
        for (std::size_t i = 0; i < evs.size(); ++i) {
            const auto bucket = date_bucket(evs[i]->day, snapshot_day, cfg);
            if (!bucket) throw std::runtime_error("assemble_record: event outside window; filter first");
            apps[pad + i] = evs[i]->app;
            dates[pad + i] = *bucket;
        }
    };
    place(installs, rec.install_apps, rec.install_dates);
    place(uninstalls, rec.uninstall_apps, rec.uninstall_dates);
    rec.n_install = static_cast<std::uint32_t>(installs.size());
    rec.n_uninstall = static_cast<std::uint32_t>(uninstalls.size());
    return rec;
}

// ---- JSON-lines input -------------------------------------------------------

/// Input line shapes:
///   {"user_id":..,"type":"event","app":..,"kind":"install"|"uninstall","date":"YYYY-MM-DD"}
///   {"user_id":..,"type":"retention","app":..,"date":"YYYY-MM-DD"}
struct EventLog {
    std::map<std::string, std::vector<RawEvent>> events_by_user;   // file order preserved
    std::map<std::string, std::set<std::string>> retention_by_user;
    std::uint32_t max_day = 0;
};

inline EventLog read_event_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    EventLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
        }
        const std::string type = j.at("type");
        const std::string user = j.at("user_id");
        const std::uint32_t day = parse_day(j.at("date"));
        log.max_day = std::max(log.max_day, day);
        if (type == "retention") {
            log.retention_by_user[user].insert(j.at("app").get<std::string>());
        } else if (type == "event") {
            RawEvent ev;
            ev.user_id = user;
            ev.package = j.at("app");
            const std::string kind = j.at("kind");
            if (kind == "install")
                ev.kind = EventKind::kInstall;
            else if (kind == "uninstall")
                ev.kind = EventKind::kUninstall;
            else
                throw std::runtime_error("line " + std::to_string(lineno) + ": unknown kind " + kind);
            ev.day = day;
            log.events_by_user[user].push_back(std::move(ev));
        } else {
            throw std::runtime_error("line " + std::to_string(lineno) + ": unknown type " + type);
        }
    }
    return log;
}

/// Full pipeline for one log: resolve packages, window, truncate, assemble.
/// Users come out sorted by id; noisy events are dropped into `stats`.
inline std::vector<UserRecord> build_records(const EventLog& log, const AppCatalog& catalog,
                                             const IngestConfig& cfg,
                                             std::optional<std::uint32_t> snapshot_override,
                                             IngestStats& stats) {
    cfg.validate();
    const std::uint32_t snapshot = snapshot_override.value_or(log.max_day);

    std::set<std::string> user_ids;
    for (const auto& [u, _] : log.events_by_user) user_ids.insert(u);
    for (const auto& [u, _] : log.retention_by_user) user_ids.insert(u);

    std::vector<UserRecord> records;
    records.reserve(user_ids.size());
    for (const auto& user : user_ids) {
        std::vector<ResolvedEvent> resolved;
        if (auto it = log.events_by_user.find(user); it != log.events_by_user.end()) {
            for (const auto& ev : it->second) {
                const auto app = catalog.resolve(ev.package);
                if (!app) {
                    ++stats.dropped_unresolved;
                    continue;
                }
                if (!date_bucket(ev.day, snapshot, cfg)) {
                    ++stats.dropped_out_of_window;
                    continue;
                }
                resolved.push_back(ResolvedEvent{*app, ev.kind, ev.day});
            }
        }
        std::stable_sort(resolved.begin(), resolved.end(),
                         [](const ResolvedEvent& a, const ResolvedEvent& b) { return a.day < b.day; });
        auto truncated = window_truncate(resolved, cfg, &stats);
        stats.events_kept += truncated.size();

        std::set<std::uint32_t> retention;
        if (auto it = log.retention_by_user.find(user); it != log.retention_by_user.end()) {
            for (const auto& pkg : it->second) {
                const auto app = catalog.resolve(pkg);
                if (!app) {
                    ++stats.dropped_unresolved;
                    continue;
                }
                retention.insert(*app);
            }
        }
        records.push_back(assemble_record(user, retention, truncated, snapshot, cfg));
    }
    stats.users = records.size();
    return records;
}

// ---- binary records file ----------------------------------------------------

constexpr std::string_view kRecordsMagic = "AETN";
constexpr std::uint32_t kRecordsVersion = 1;

struct RecordsFile {
    std::uint32_t M = 0, I = 0, T = 0;
    std::uint32_t snapshot_day = 0;
    std::vector<UserRecord> records;
};

inline void write_records(const RecordsFile& f, const std::string& path) {
    BinWriter w;
    w.magic(kRecordsMagic);
    w.u32(kRecordsVersion);
    w.u32(f.M);
    w.u32(f.I);
    w.u32(f.T);
    w.u64(f.records.size());
    w.u32(f.snapshot_day);
    for (const auto& r : f.records) {
        w.str(r.user_id);
        w.u32(static_cast<std::uint32_t>(r.retention.size()));
        for (auto a : r.retention) w.u32(a);
        for (const auto* seq : {&r.install_apps, &r.install_dates, &r.uninstall_apps, &r.uninstall_dates}) {
            if (seq->size() != f.I) throw std::runtime_error("write_records: sequence length differs from I");
            for (auto v : *seq) w.u32(v);
        }
        w.u32(r.n_install);
        w.u32(r.n_uninstall);
    }
    w.save(path);
}

inline RecordsFile read_records(const std::string& path) {
    BinReader r = BinReader::from_file(path);
    r.expect_magic(kRecordsMagic);
    if (r.u32() != kRecordsVersion) throw std::runtime_error("records: unsupported version");
    RecordsFile f;
    f.M = r.u32();
    f.I = r.u32();
    f.T = r.u32();
    const std::uint64_t count = r.u64();
    f.snapshot_day = r.u32();
    f.records.resize(count);
    for (auto& rec : f.records) {
        rec.user_id = r.str();
        rec.retention.resize(r.u32());
        for (auto& a : rec.retention) a = r.u32();
        for (auto* seq : {&rec.install_apps, &rec.install_dates, &rec.uninstall_apps, &rec.uninstall_dates}) {
            seq->resize(f.I);
            for (auto& v : *seq) v = r.u32();
        }
        rec.n_install = r.u32();
        rec.n_uninstall = r.u32();
        rec.snapshot_day = f.snapshot_day;
    }
    return f;
}

}  // namespace appemb
