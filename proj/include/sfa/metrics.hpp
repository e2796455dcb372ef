#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sfa {

/// Pixel confusion counts accumulated over any number of maps.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);

    /// Throws std::out_of_range for ids outside [0, num_classes).
    void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);

    /// Mean of TP / (TP + FP + FN) over classes whose union is non-empty.
    double miou() const;
    double iou(std::size_t cls) const;
    std::size_t num_classes() const { return k_; }
    std::uint64_t count(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::size_t num_classes);

/// sqrt(mean((pred - gt)^2)), accumulated in double.
double rmse(std::span<const float> pred, std::span<const float> gt);

}  // namespace sfa
