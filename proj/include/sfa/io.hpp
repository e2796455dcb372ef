#pragma once

// Little-endian binary helpers shared by the dataset, checkpoint and delta formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sfa::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

template <class T>
void append(std::vector<std::uint8_t>& out, std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out.insert(out.end(), p, p + values.size_bytes());
}

inline void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    append(out, std::span<const std::uint64_t>(&v, 1));
}

template <class T>
std::vector<T> decode(std::span<const std::uint8_t> bytes) {
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
    return out;
}

inline std::uint64_t read_u64(std::span<const std::uint8_t> bytes, std::size_t offset) {
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + offset, sizeof v);
    return v;
}

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

}  // namespace sfa::io
