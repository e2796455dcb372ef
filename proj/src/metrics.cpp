#include "sfa/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sfa/tensor.hpp"

namespace sfa {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("miou: prediction has " + std::to_string(pred.size()) + " pixels, labels have " +
                         std::to_string(gt.size()));
    }
    const auto k = static_cast<std::int32_t>(k_);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= k || gt[i] < 0 || gt[i] >= k) {
            throw std::out_of_range("miou: class id outside [0, " + std::to_string(k_) + ") at pixel " +
                                    std::to_string(i));
        }
        ++counts_[static_cast<std::size_t>(gt[i]) * k_ + static_cast<std::size_t>(pred[i])];
    }
}

double ConfusionMatrix::iou(std::size_t cls) const {
    std::uint64_t tp = count(cls, cls), fp = 0, fn = 0;
    for (std::size_t j = 0; j < k_; ++j) {
        if (j != cls) {
            fn += count(cls, j);
            fp += count(j, cls);
        }
    }
    const std::uint64_t uni = tp + fp + fn;
    return uni == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(uni);
}

double ConfusionMatrix::miou() const {
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k_; ++c) {
        std::uint64_t uni = count(c, c);
        for (std::size_t j = 0; j < k_; ++j) {
            if (j != c) {
                uni += count(c, j) + count(j, c);
            }
        }
        if (uni > 0) {
            total += iou(c);
            ++present;
        }
    }
    return present == 0 ? 0.0 : total / static_cast<double>(present);
}

double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::size_t num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(pred, gt);
    return cm.miou();
}

double rmse(std::span<const float> pred, std::span<const float> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("rmse: size mismatch " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
    }
    if (pred.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

}  // namespace sfa
