#pragma once

// Sparse task delta relative to a base checkpoint: mask indices with their
// new values and selection rounds, plus dense adapter and head tensors.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sfa/backbone.hpp"
#include "sfa/selection.hpp"

namespace sfa {

inline constexpr int kDeltaVersion = 1;
inline constexpr char kDeltaMagic[9] = "SFADELT1";

struct DeltaStats {
    std::size_t mask_entries = 0;
    std::size_t dense_scalars = 0;  // adapter + head
    std::size_t header_bytes = 0;
    std::size_t body_bytes = 0;
};

/// Throws std::invalid_argument when `adapted` differs from `base` anywhere
/// outside the mask, adapters and head (such a delta would not reproduce it).
std::vector<std::uint8_t> export_delta(const Model& adapted, const SelectionMask& mask, const Model& base);

struct AppliedDelta {
    Model model;
    SelectionMask mask;
};

/// Throws FormatError on a base-hash mismatch or a corrupt file.
AppliedDelta apply_delta(const Model& base, std::span<const std::uint8_t> delta);
DeltaStats delta_stats(std::span<const std::uint8_t> delta);

void save_delta(const std::filesystem::path& path, const Model& adapted, const SelectionMask& mask, const Model& base);
AppliedDelta load_and_apply_delta(const std::filesystem::path& path, const Model& base);

}  // namespace sfa
