#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sfa/parameter_store.hpp"

namespace sfa {

enum class OptimizerKind { sgd, adamw };
enum class LrDecay { constant, linear, cosine };

std::string optimizer_kind_name(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& name);
std::string lr_decay_name(LrDecay d);
LrDecay parse_lr_decay(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adamw;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;  // decoupled; never applied to rank-1 tensors (biases, norms)
    double warmup_fraction = 0.05;
    LrDecay decay = LrDecay::linear;

    /// Learning rate for 1-based `step` out of `total_steps`.
    float learning_rate(std::size_t step, std::size_t total_steps) const;
    bool operator==(const OptimizerConfig&) const = default;
};

/// Applies updates only to registered scalars. Moment buffers exist only for
/// those scalars, so memory follows the trainable count, not the model size.
class MaskedOptimizer {
public:
    explicit MaskedOptimizer(OptimizerConfig config) : config_(config) {}

    /// Makes every scalar of `slot` trainable.
    void add_dense(const ParameterStore& store, std::size_t slot);
    /// Makes the listed scalars of `slot` trainable (ignored if already dense
    /// or already registered).
    void add_indices(const ParameterStore& store, std::size_t slot, std::span<const std::uint32_t> indices);

    void step(ParameterStore& store, const GradientMap& grads, float lr);

    std::size_t trainable_count() const;
    std::size_t trainable_count(const ParameterStore& store, Group group) const;
    /// Number of scalars with optimizer state (moment buffer entries).
    std::size_t state_entries() const;
    bool is_trainable(std::size_t slot) const { return index_.contains(slot); }
    const OptimizerConfig& config() const { return config_; }

private:
    struct SlotState {
        std::size_t slot;
        bool dense;
        bool decay;
        std::vector<std::uint32_t> indices;  // ascending; only when !dense
        std::vector<float> m, v;
        std::vector<std::uint32_t> t;
    };

    float bias_correction(std::vector<float>& cache, float beta, std::uint32_t t);

    OptimizerConfig config_;
    std::vector<SlotState> slots_;
    std::unordered_map<std::size_t, std::size_t> index_;
    std::vector<float> bc1_, bc2_;
};

}  // namespace sfa
