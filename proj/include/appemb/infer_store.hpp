#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "appemb/model.hpp"
#include "appemb/serialize.hpp"

namespace appemb {

/// Content hash of a checkpoint file, rendered as hex. A retrained model
/// hashes differently, which forces a fresh store and keeps embedding
/// spaces from mixing.
inline std::string feature_id_of_checkpoint(const std::string& checkpoint_path) {
    const std::uint64_t h = file_checksum(checkpoint_path);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

constexpr std::string_view kStoreMagic = "AETS";
constexpr std::uint32_t kStoreVersion = 1;

/// Versioned user-embedding map. One feature id per store; vectors are
/// float32 rows replaced whole under an exclusive lock, so concurrent
/// readers never observe a torn vector. Timestamps are a deterministic
/// store revision counter, advanced once per mutation batch.
class EmbeddingStore {
public:
    struct Row {
        std::vector<float> vec;
        std::uint64_t stamp = 0;
    };

    EmbeddingStore(std::string feature_id, std::uint32_t d_emb)
        : feature_id_(std::move(feature_id)), d_emb_(d_emb) {
        if (feature_id_.empty()) throw std::runtime_error("store: empty feature id");
        if (d_emb_ == 0) throw std::runtime_error("store: d_emb must be positive");
    }

    EmbeddingStore(EmbeddingStore&& o) noexcept
        : feature_id_(std::move(o.feature_id_)), d_emb_(o.d_emb_), revision_(o.revision_),
          rows_(std::move(o.rows_)) {}

    const std::string& feature_id() const { return feature_id_; }
    std::uint32_t d_emb() const { return d_emb_; }
    std::uint64_t revision() const { return revision_; }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return rows_.size();
    }

    /// Whole-row replacement; one revision tick per call.
    void put(const std::string& user_id, const std::vector<float>& vec) {
        if (vec.size() != d_emb_) throw std::runtime_error("store: vector length differs from d_emb");
        std::unique_lock lock(mu_);
        ++revision_;
        rows_[user_id] = Row{vec, revision_};
    }

    /// Batched replacement: every touched user shares one new revision.
    void put_batch(const std::vector<std::pair<std::string, std::vector<float>>>& batch) {
        std::unique_lock lock(mu_);
        ++revision_;
        for (const auto& [user, vec] : batch) {
            if (vec.size() != d_emb_) throw std::runtime_error("store: vector length differs from d_emb");
            rows_[user] = Row{vec, revision_};
        }
    }

    /// Absence is a distinct outcome, not an error.
    std::optional<std::vector<float>> get(const std::string& user_id) const {
        std::shared_lock lock(mu_);
        auto it = rows_.find(user_id);
        if (it == rows_.end()) return std::nullopt;
        return it->second.vec;
    }

    std::optional<std::uint64_t> stamp(const std::string& user_id) const {
        std::shared_lock lock(mu_);
        auto it = rows_.find(user_id);
        if (it == rows_.end()) return std::nullopt;
        return it->second.stamp;
    }

    std::vector<std::string> user_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> out;
        out.reserve(rows_.size());
        for (const auto& [id, _] : rows_) out.push_back(id);
        return out;
    }

    void save(const std::string& path) const {
        std::shared_lock lock(mu_);
        BinWriter w;
        w.magic(kStoreMagic);
        w.u32(kStoreVersion);
        w.str(feature_id_);
        w.u32(d_emb_);
        w.u64(rows_.size());
        w.u64(revision_);
        std::uint32_t id_width = 0;
        for (const auto& [id, _] : rows_)
            id_width = std::max(id_width, static_cast<std::uint32_t>(id.size()));
        w.u32(id_width);
        for (const auto& [id, row] : rows_) {  // std::map: already sorted by user id
            w.u32(static_cast<std::uint32_t>(id.size()));
            w.bytes(id.data(), id.size());
            for (std::size_t i = id.size(); i < id_width; ++i) w.u8(0);
            for (float v : row.vec) w.f32(v);
            w.u64(row.stamp);
        }
        w.save(path);
    }

    static EmbeddingStore load(const std::string& path) {
        BinReader r = BinReader::from_file(path);
        r.expect_magic(kStoreMagic);
        if (r.u32() != kStoreVersion) throw std::runtime_error("store: unsupported version");
        std::string fid = r.str();
        const std::uint32_t d = r.u32();
        const std::uint64_t count = r.u64();
        EmbeddingStore store(std::move(fid), d);
        store.revision_ = r.u64();
        const std::uint32_t id_width = r.u32();
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t id_len = r.u32();
            if (id_len > id_width) throw std::runtime_error("store: corrupt row id");
            std::string id(id_len, '\0');
            r.raw(id.data(), id_len);
            for (std::uint32_t p = id_len; p < id_width; ++p) (void)r.u8();
            Row row;
            row.vec.resize(d);
            for (auto& v : row.vec) v = r.f32();
            row.stamp = r.u64();
            store.rows_.emplace(std::move(id), std::move(row));
        }
        return store;
    }

    /// Open with a feature-id gate; a mismatch means the caller is about to
    /// mix embedding spaces and must not proceed.
    static EmbeddingStore open_checked(const std::string& path, const std::string& expected_feature_id) {
        EmbeddingStore store = load(path);
        if (store.feature_id() != expected_feature_id)
            throw std::runtime_error("store feature id " + store.feature_id() +
                                     " does not match checkpoint feature id " + expected_feature_id);
        return store;
    }

private:
    std::string feature_id_;
    std::uint32_t d_emb_ = 0;
    std::uint64_t revision_ = 0;
    std::map<std::string, Row> rows_;
    mutable std::shared_mutex mu_;
};

/// Batch embedding inference: eval mode, no masking, deterministic.
template <typename T>
std::vector<std::pair<std::string, std::vector<float>>> infer(Model<T>& model,
                                                              const std::vector<UserRecord>& records) {
    std::vector<std::pair<std::string, std::vector<float>>> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        Tensor<T> e = model.embed(rec);
        std::vector<float> v(e.numel());
        for (std::size_t i = 0; i < e.numel(); ++i) v[i] = static_cast<float>(e.data[i]);
        out.emplace_back(rec.user_id, std::move(v));
    }
    return out;
}

/// Feature updating (fixed model): recompute only the listed active users
/// from fresh records and overwrite their rows; everyone else stays bitwise
/// untouched and keeps their timestamp.
template <typename T>
std::size_t feature_update(EmbeddingStore& store, Model<T>& model, const std::string& model_feature_id,
                           const std::vector<UserRecord>& fresh_records,
                           const std::set<std::string>& active_users) {
    if (store.feature_id() != model_feature_id)
        throw std::runtime_error("feature_update: checkpoint feature id " + model_feature_id +
                                 " does not match store " + store.feature_id());
    std::vector<std::pair<std::string, std::vector<float>>> batch;
    for (const auto& rec : fresh_records) {
        if (!active_users.count(rec.user_id)) continue;
        Tensor<T> e = model.embed(rec);
        std::vector<float> v(e.numel());
        for (std::size_t i = 0; i < e.numel(); ++i) v[i] = static_cast<float>(e.data[i]);
        batch.emplace_back(rec.user_id, std::move(v));
    }
    if (!batch.empty()) store.put_batch(batch);
    return batch.size();
}

}  // namespace appemb
