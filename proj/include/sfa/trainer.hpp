#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfa/adapter.hpp"
#include "sfa/backbone.hpp"
#include "sfa/budget.hpp"
#include "sfa/optimizer.hpp"
#include "sfa/selection.hpp"
#include "sfa/tasks.hpp"

namespace sfa {

enum class RunKind { sfa, frozen, full_finetune, external_only, internal_only, adaptformer_style, imported_mask };

std::string run_kind_name(RunKind kind);
RunKind parse_run_kind(const std::string& name);

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    double beta = 0.10;
    double rho = 0.5;
    /// 0 selects max(50, T / 5).
    std::size_t step_size = 0;
    /// Single selection round at step 1 with the whole internal quota.
    bool one_shot_selection = false;
    SelectionCriterion criterion = SelectionCriterion::accumulated_gradient;
    bool use_external = true;
    bool use_internal = true;
    AdapterStyle adapter_style = AdapterStyle::sequential_residual;
    double adapter_scale = 0.1;
    /// Overrides the solved middle dimension (dimension sweeps). Budget is still enforced.
    std::size_t middle_dim = 0;
    /// 0 evaluates at every selection step size and at T.
    std::size_t eval_every = 0;
    /// Validation samples used at intermediate eval points (0 = all). The final eval always uses all.
    std::size_t eval_subset = 0;

    void validate() const;
    std::size_t effective_step_size() const;
    bool operator==(const TrainConfig&) const = default;
};

struct Metrics {
    std::string name;  // "miou" or "rmse"
    double value = 0.0;
    bool higher_is_better = true;
};

struct EvalPoint {
    std::size_t step;
    double loss;  // mean training loss since the previous eval point
    double metric;
    std::size_t trainable_count;
};

struct LayerSelection {
    std::size_t layer;
    std::size_t att_selected, att_pool;
    std::size_t mlp_selected, mlp_pool;
    double att_fraction() const { return att_pool ? static_cast<double>(att_selected) / static_cast<double>(att_pool) : 0.0; }
    double mlp_fraction() const { return mlp_pool ? static_cast<double>(mlp_selected) / static_cast<double>(mlp_pool) : 0.0; }
};

struct RunReport {
    std::string kind;
    std::string task;
    std::string metric_name;
    double initial_metric = 0.0;
    double final_metric = 0.0;
    std::vector<EvalPoint> history;
    std::uint64_t seed = 0;
    double beta = 0.0;
    double rho = 0.0;
    std::size_t backbone_params = 0;  // ‖θ(T)‖
    std::size_t budget_ceiling = 0;   // floor(beta ‖θ(T)‖); head excluded
    std::size_t adapter_params = 0;
    std::size_t mask_params = 0;
    std::size_t dense_backbone_params = 0;  // full fine-tuning only
    std::size_t head_params = 0;
    std::size_t middle_dim = 0;
    std::size_t step_size = 0;
    std::size_t rounds = 0;
    std::string criterion;
    std::string adapter_style;
    std::vector<LayerSelection> layers;
    double wall_seconds = 0.0;

    /// Backbone-side trainable scalars: adapters + selected + dense backbone.
    std::size_t backbone_side_trainable() const { return adapter_params + mask_params + dense_backbone_params; }
    std::size_t trainable_total() const { return backbone_side_trainable() + head_params; }
};

struct RunResult {
    Model model;
    SelectionMask mask;
    RunReport report;
};

struct StepResult {
    float loss;
    GradientMap grads;
};

/// Forward + loss + backward, then an optimizer update restricted to the
/// scalars registered in `optimizer`. Gradients are returned for every
/// requires_grad parameter. Throws DivergenceError on a non-finite loss.
StepResult masked_step(Model& model, const Batch& batch, MaskedOptimizer& optimizer, float lr, std::size_t step = 0);

/// Task loss for (B, H, W, K) predictions.
Var<float> task_loss(Var<float> prediction, const Batch& batch, HeadKind head);

Metrics evaluate(const Model& model, const Dataset& val, std::size_t max_samples = 0);

/// Per-layer counts of selected vs pool scalars.
std::vector<LayerSelection> layer_selection(const SelectionPool& pool, const SelectionMask& mask);

/// Re-initialises the task head (new shape if the head kind changes).
Model with_fresh_head(const Model& base, HeadKind kind, std::size_t num_classes, std::uint64_t seed);

/// State right after a selection round, for external auditing.
struct RoundEvent {
    std::size_t step;
    std::size_t round;
    const Model& model;
    const SelectionMask& mask;
    const MaskedOptimizer& optimizer;
};
using RoundHook = std::function<void(const RoundEvent&)>;

/// Algorithm loop for every run kind. `base` supplies θ0 (head is replaced).
RunResult train(const Model& base, const TaskSpec& task, const TrainConfig& config, RunKind kind,
                const SelectionMask* imported_mask = nullptr, const RoundHook& on_round = {});

RunResult run_sfa(const Model& base, const TaskSpec& task, const TrainConfig& config, const RoundHook& on_round = {});
RunResult run_baseline(const Model& base, const TaskSpec& task, const TrainConfig& config, RunKind kind);
/// Trains adapters + head + the imported mask without running selection.
RunResult adapt_with_mask(const Model& base, const TaskSpec& task, const TrainConfig& config, const SelectionMask& mask);

struct PretrainResult {
    Model model;
    double initial_metric = 0.0;
    double final_metric = 0.0;
    std::vector<EvalPoint> history;
};

/// Full-model training on the source task. Produces θ0.
PretrainResult pretrain(const BackboneConfig& config, const TaskSpec& source, std::size_t steps, std::uint64_t seed,
                        const OptimizerConfig& optimizer = {}, std::size_t batch_size = 8);

}  // namespace sfa
