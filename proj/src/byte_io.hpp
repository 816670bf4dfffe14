#pragma once

// Little-endian byte encoding helpers shared by the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pathsearch/core.hpp"

namespace pathsearch::detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint64_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(get_le(1, what)); }
    std::uint16_t u16(std::string_view what) { return static_cast<std::uint16_t>(get_le(2, what)); }
    std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get_le(4, what)); }
    std::uint64_t u64(std::string_view what) { return get_le(8, what); }
    float f32(std::string_view what) { return std::bit_cast<float>(u32(what)); }
    double f64(std::string_view what) { return std::bit_cast<double>(u64(what)); }

    std::span<const std::uint8_t> bytes(std::size_t n, std::string_view what) {
        need(n, what);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::string str(std::size_t n, std::string_view what) {
        auto b = bytes(n, what);
        return std::string(reinterpret_cast<const char*>(b.data()), b.size());
    }

    void need(std::size_t n, std::string_view what) const {
        if (remaining() < n) {
            throw FormatError("truncated input while reading " + std::string(what), pos_);
        }
    }

private:
    std::uint64_t get_le(int n, std::string_view what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::uint64_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace pathsearch::detail
