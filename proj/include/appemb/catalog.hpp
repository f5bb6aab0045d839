#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace appemb {

/// Reserved vocabulary indices. Dense app ids start at 2; neither special
/// ever appears as a classifier output.
constexpr std::uint32_t kPadIndex = 0;
constexpr std::uint32_t kMaskIndex = 1;
constexpr std::uint32_t kFirstAppIndex = 2;

struct AppEntry {
    std::uint32_t app_id = 0;                 // dense index in [2, M+1], assigned at build time
    std::string logical_key;                  // merge key; rows sharing it collapse
    std::vector<std::string> package_names;   // sorted, nonempty
    std::uint32_t category_id = 0;
    std::uint64_t install_capacity = 0;
    bool ubiquitous = false;
    bool preinstalled = false;
    bool keep_override = false;
};

struct FilterPolicy {
    double exclude_ubiquitous_above = 1.0;    // fraction of total_users in (0, 1]
    std::uint64_t exclude_capacity_below = 0;
    std::uint64_t total_users = 0;            // denominator for the ubiquity fraction; 0 disables the rule
    std::set<std::string> preinstall_list;
    std::set<std::string> keep_list;

    void validate() const {
        if (!(exclude_ubiquitous_above > 0.0 && exclude_ubiquitous_above <= 1.0))
            throw std::runtime_error("FilterPolicy: exclude_ubiquitous_above must be in (0,1]");
    }
};

/// Raw metadata row: `package_name \t logical_key \t category_id \t install_capacity`.
struct AppRow {
    std::string package_name;
    std::string logical_key;
    std::uint32_t category_id = 0;
    std::uint64_t install_capacity = 0;
};

class AppCatalog {
public:
    std::uint32_t M = 0;  // modeled apps
    std::uint32_t K = 0;  // dense category count
    std::vector<AppEntry> apps;  // sorted by app_id, app_id = 2..M+1

    std::optional<std::uint32_t> resolve(const std::string& package) const {
        auto it = package_to_app_.find(package);
        if (it == package_to_app_.end()) return std::nullopt;
        return it->second;
    }

    const AppEntry& entry(std::uint32_t app_id) const {
        if (app_id < kFirstAppIndex || app_id >= kFirstAppIndex + M)
            throw std::runtime_error("AppCatalog: app id out of range");
        return apps[app_id - kFirstAppIndex];
    }

    const std::string& primary_package(std::uint32_t app_id) const {
        return entry(app_id).package_names.front();
    }

    /// Category per modeled-app class (class = app_id - 2), length M.
    std::vector<std::uint32_t> category_of_class() const {
        std::vector<std::uint32_t> out(M);
        for (std::uint32_t m = 0; m < M; ++m) out[m] = apps[m].category_id;
        return out;
    }

    void rebuild_index() {
        package_to_app_.clear();
        for (const auto& a : apps)
            for (const auto& p : a.package_names) package_to_app_[p] = a.app_id;
    }

private:
    std::unordered_map<std::string, std::uint32_t> package_to_app_;
};

/// Collapse entries sharing a logical key: union of package names, summed
/// capacity, OR-ed flags. Pure; category conflicts are errors.
inline std::vector<AppEntry> merge_packages(std::vector<AppEntry> entries) {
    std::map<std::string, AppEntry> merged;  // by logical key, deterministic order
    for (auto& e : entries) {
        auto [it, fresh] = merged.try_emplace(e.logical_key, e);
        if (fresh) continue;
        AppEntry& dst = it->second;
        if (dst.category_id != e.category_id)
            throw std::runtime_error("conflicting categories for package " + e.package_names.front());
        for (auto& p : e.package_names) dst.package_names.push_back(std::move(p));
        dst.install_capacity += e.install_capacity;
        dst.ubiquitous = dst.ubiquitous || e.ubiquitous;
        dst.preinstalled = dst.preinstalled || e.preinstalled;
        dst.keep_override = dst.keep_override || e.keep_override;
    }
    std::vector<AppEntry> out;
    out.reserve(merged.size());
    for (auto& [key, e] : merged) {
        std::sort(e.package_names.begin(), e.package_names.end());
        e.package_names.erase(std::unique(e.package_names.begin(), e.package_names.end()),
                              e.package_names.end());
        out.push_back(std::move(e));
    }
    return out;
}

inline bool survives(const AppEntry& e, const FilterPolicy& policy) {
    if (e.keep_override) return true;
    if (e.ubiquitous || e.preinstalled) return false;
    return e.install_capacity >= policy.exclude_capacity_below;
}

/// Apply the vocabulary selection rules and assign dense indices.
inline AppCatalog build_catalog(const std::vector<AppRow>& raw_rows, const FilterPolicy& policy) {
    policy.validate();

    // one package name maps to exactly one logical app
    std::map<std::string, std::pair<std::string, std::uint32_t>> seen;  // package -> (key, category)
    std::vector<AppEntry> entries;
    entries.reserve(raw_rows.size());
    for (const auto& row : raw_rows) {
        auto it = seen.find(row.package_name);
        if (it != seen.end()) {
            if (it->second.first != row.logical_key || it->second.second != row.category_id)
                throw std::runtime_error("conflicting duplicate rows for package " + row.package_name);
        } else {
            seen.emplace(row.package_name, std::make_pair(row.logical_key, row.category_id));
        }
        AppEntry e;
        e.logical_key = row.logical_key;
        e.package_names = {row.package_name};
        e.category_id = row.category_id;
        e.install_capacity = row.install_capacity;
        entries.push_back(std::move(e));
    }

    entries = merge_packages(std::move(entries));

    for (auto& e : entries) {
        if (policy.total_users > 0) {
            const double fraction = static_cast<double>(e.install_capacity) /
                                    static_cast<double>(policy.total_users);
            e.ubiquitous = fraction > policy.exclude_ubiquitous_above;
        }
        for (const auto& p : e.package_names) {
            if (policy.preinstall_list.count(p)) e.preinstalled = true;
            if (policy.keep_list.count(p)) e.keep_override = true;
        }
    }

    std::vector<AppEntry> kept;
    for (auto& e : entries)
        if (survives(e, policy)) kept.push_back(std::move(e));
    if (kept.empty()) throw std::runtime_error("catalog: no apps survive the filter policy");

    std::sort(kept.begin(), kept.end(), [](const AppEntry& a, const AppEntry& b) {
        return a.package_names.front() < b.package_names.front();
    });

    // remap input category ids onto a dense [0, K)
    std::set<std::uint32_t> cats;
    for (const auto& e : kept) cats.insert(e.category_id);
    std::map<std::uint32_t, std::uint32_t> cat_map;
    std::uint32_t next_cat = 0;
    for (auto c : cats) cat_map[c] = next_cat++;

    AppCatalog cat;
    cat.M = static_cast<std::uint32_t>(kept.size());
    cat.K = next_cat;
    cat.apps = std::move(kept);
    for (std::uint32_t i = 0; i < cat.M; ++i) {
        cat.apps[i].app_id = kFirstAppIndex + i;
        cat.apps[i].category_id = cat_map[cat.apps[i].category_id];
    }
    cat.rebuild_index();
    return cat;
}

// ---- text formats ----------------------------------------------------------

inline std::vector<AppRow> parse_app_rows(std::istream& in) {
    std::vector<AppRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        AppRow r;
        std::string cat, capacity;
        if (!std::getline(ss, r.package_name, '\t') || !std::getline(ss, r.logical_key, '\t') ||
            !std::getline(ss, cat, '\t') || !std::getline(ss, capacity))
            throw std::runtime_error("app metadata line " + std::to_string(lineno) +
                                     ": want package\\tkey\\tcategory\\tcapacity");
        r.category_id = static_cast<std::uint32_t>(std::stoul(cat));
        r.install_capacity = std::stoull(capacity);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<AppRow> load_app_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return parse_app_rows(in);
}

inline std::string serialize_catalog(const AppCatalog& cat) {
    std::ostringstream out;
    out << "M=" << cat.M << " K=" << cat.K << "\n";
    for (const auto& e : cat.apps) {
        out << e.app_id << "\t" << e.category_id << "\t";
        for (std::size_t i = 0; i < e.package_names.size(); ++i) {
            if (i) out << ",";
            out << e.package_names[i];
        }
        out << "\n";
    }
    return out.str();
}

inline void save_catalog(const AppCatalog& cat, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << serialize_catalog(cat);
}

inline AppCatalog parse_catalog(std::istream& in) {
    AppCatalog cat;
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("catalog: empty file");
    if (std::sscanf(header.c_str(), "M=%u K=%u", &cat.M, &cat.K) != 2)
        throw std::runtime_error("catalog: bad header line: " + header);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, catid, pkgs;
        if (!std::getline(ss, id, '\t') || !std::getline(ss, catid, '\t') || !std::getline(ss, pkgs))
            throw std::runtime_error("catalog: bad line: " + line);
        AppEntry e;
        e.app_id = static_cast<std::uint32_t>(std::stoul(id));
        e.category_id = static_cast<std::uint32_t>(std::stoul(catid));
        std::istringstream ps(pkgs);
        std::string p;
        while (std::getline(ps, p, ',')) e.package_names.push_back(p);
        if (e.package_names.empty()) throw std::runtime_error("catalog: entry without packages");
        e.logical_key = e.package_names.front();
        cat.apps.push_back(std::move(e));
    }
    if (cat.apps.size() != cat.M) throw std::runtime_error("catalog: entry count differs from M");
    for (std::uint32_t i = 0; i < cat.M; ++i) {
        if (cat.apps[i].app_id != kFirstAppIndex + i)
            throw std::runtime_error("catalog: app ids must be dense from 2");
        if (cat.apps[i].category_id >= cat.K)
            throw std::runtime_error("catalog: category id out of range");
    }
    cat.rebuild_index();
    return cat;
}

inline AppCatalog load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return parse_catalog(in);
}

}  // namespace appemb
