#pragma once

// Checkpoint container: 8-byte magic, u64 header length, JSON header, then the
// raw little-endian f32 body. Tensor records in the header carry name, shape,
// dtype, byte offset and group; offsets are contiguous in store order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfa/backbone.hpp"
#include "sfa/selection.hpp"

namespace sfa {

inline constexpr int kCheckpointVersion = 1;

struct LoadedCheckpoint {
    Model model;
    std::optional<SelectionMask> mask;
    std::uint64_t body_hash = 0;
};

/// FNV-1a-64 over the tensor bytes exactly as they would appear in the body.
std::uint64_t body_hash(const ParameterStore& store);

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const SelectionMask* mask = nullptr);
/// Throws FormatError on bad magic, version, hash, layout or truncation.
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const SelectionMask* mask = nullptr);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Byte layout of one container: header JSON text and body bytes.
struct Container {
    std::string header;
    std::span<const std::uint8_t> body;
};
std::vector<std::uint8_t> pack_container(const char (&magic)[9], const std::string& header,
                                         std::span<const std::uint8_t> body);
Container unpack_container(const char (&magic)[9], std::span<const std::uint8_t> bytes, const std::string& what);

inline constexpr char kCheckpointMagic[9] = "SFACKPT1";

}  // namespace sfa
