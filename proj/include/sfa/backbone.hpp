#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfa/adapter.hpp"
#include "sfa/autograd.hpp"
#include "sfa/parameter_store.hpp"

namespace sfa {

enum class HeadKind { segmentation, regression };

struct BackboneConfig {
    std::size_t image_h = 32;
    std::size_t image_w = 32;
    std::size_t in_channels = 3;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 64;
    std::size_t num_blocks = 4;
    std::size_t num_heads = 2;
    std::size_t mlp_ratio = 4;
    HeadKind head_kind = HeadKind::segmentation;
    std::size_t num_classes = 5;

    void validate() const;
    std::size_t grid_h() const { return image_h / patch_size; }
    std::size_t grid_w() const { return image_w / patch_size; }
    std::size_t tokens() const { return grid_h() * grid_w(); }
    std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
    std::size_t hidden_dim() const { return mlp_ratio * embed_dim; }
    /// K for segmentation, 1 for regression.
    std::size_t out_channels() const { return head_kind == HeadKind::segmentation ? num_classes : 1; }

    bool operator==(const BackboneConfig&) const = default;
};

/// Slot indices of one transformer block inside the ParameterStore.
struct BlockSlots {
    std::size_t norm1_gamma, norm1_beta;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t norm2_gamma, norm2_beta;
    std::size_t w1, b1, w2, b2;
};

struct AdapterSiteSlots {
    std::size_t w_down, b_down, w_up, b_up;
};

struct BlockAdapterSlots {
    std::optional<AdapterSiteSlots> att;
    std::optional<AdapterSiteSlots> mlp;
};

/// (B, H, W, C) images -> (B, tokens, P*P*C) patch rows, patches in raster
/// order, each flattened as (py, px, c).
Tensor patchify(const Tensor& images, std::size_t patch_size);

/// Pre-norm vision transformer for dense prediction.
///
/// Block: u = x + att(ln1(x)); y = u + mlp(ln2(u)), with optional external
/// adapters wrapping u and y. Head: per-token linear D -> K, then nearest
/// neighbour upsampling by the patch size back to pixel resolution.
class Model {
public:
    static Model build(const BackboneConfig& config, std::uint64_t seed);

    /// Reassembles a model from stored tensors (e.g. a loaded checkpoint).
    /// The store must contain exactly the tensors `build` (plus `attach`) creates.
    static Model from_store(const BackboneConfig& config, ParameterStore store,
                            std::optional<AdapterConfig> adapter = std::nullopt);

    const BackboneConfig& config() const { return config_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    const std::optional<AdapterConfig>& adapter() const { return adapter_; }

    /// Records the forward pass; returns (B, H, W, K) predictions.
    /// Parameters are bound with their requires_grad flags.
    Var<float> forward(Tape<float>& tape, const Tensor& images) const;

    /// Inference without gradient bookkeeping.
    Tensor predict(const Tensor& images) const;

    /// Block index of a parameter slot, or -1 for non-block tensors.
    int block_of(std::size_t slot) const { return slot < block_index_.size() ? block_index_[slot] : -1; }
    const std::vector<BlockSlots>& blocks() const { return blocks_; }
    std::size_t head_weight_slot() const { return head_w_; }
    std::size_t head_bias_slot() const { return head_b_; }

    /// Re-initialises the head tensors in place (shape follows the new kind).
    void reset_head(HeadKind kind, std::size_t num_classes, std::uint64_t seed);

    /// ‖θ(T)‖: scalar count of the backbone groups (head and adapters excluded).
    std::size_t backbone_param_count() const { return store_.count_backbone(); }

private:
    friend void attach(Model& model, const AdapterConfig& config, std::uint64_t seed);

    Model() = default;
    void resolve_slots();
    Var<float> run(Tape<float>& tape, const Tensor& images, bool track) const;

    BackboneConfig config_;
    ParameterStore store_;
    std::optional<AdapterConfig> adapter_;
    std::vector<BlockSlots> blocks_;
    std::vector<BlockAdapterSlots> adapter_slots_;
    std::vector<int> block_index_;
    std::size_t embed_w_ = 0, embed_b_ = 0, pos_ = 0, final_gamma_ = 0, final_beta_ = 0;
    std::size_t head_w_ = 0, head_b_ = 0;
};

std::string head_kind_name(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

}  // namespace sfa
