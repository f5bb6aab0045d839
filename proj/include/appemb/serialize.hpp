#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "appemb/rng.hpp"

namespace appemb {

/// Little-endian byte buffer writer used by every binary file format in the
/// library (records, checkpoints, embedding stores).
class BinWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void bytes(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }

    void magic(std::string_view m) { bytes(m.data(), m.size()); }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::vector<char>& data() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

    std::uint64_t checksum() const { return fnv1a64(buf_.data(), buf_.size()); }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw std::runtime_error("write failed: " + path);
    }

private:
    std::vector<char> buf_;
};

class BinReader {
public:
    explicit BinReader(std::vector<char> data) : buf_(std::move(data)) {}

    static BinReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open: " + path);
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return BinReader(std::move(data));
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void expect_magic(std::string_view m) {
        const char* p = take(m.size());
        if (std::string_view(p, m.size()) != m)
            throw std::runtime_error("bad file magic, expected \"" + std::string(m) + "\"");
    }

    std::string str() {
        const std::uint32_t n = u32();
        const char* p = take(n);
        return std::string(p, n);
    }

    void raw(void* dst, std::size_t n) { std::memcpy(dst, take(n), n); }

    std::size_t pos() const { return pos_; }
    std::size_t size() const { return buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }
    const std::vector<char>& data() const { return buf_; }

    /// fnv over [0, pos): lets callers verify a checksum trailer.
    std::uint64_t checksum_so_far() const { return fnv1a64(buf_.data(), pos_); }

private:
    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error("truncated file");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(data.data(), data.size());
}

}  // namespace appemb
