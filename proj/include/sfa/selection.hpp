#pragma once

// Internal adapter: picks individual backbone scalars (attention and MLP
// weights/biases) to unfreeze, a few at a time, ranked by the gradient
// magnitude accumulated since the previous round.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfa/parameter_store.hpp"
#include "sfa/rng.hpp"

namespace sfa {

struct PoolAddress {
    std::size_t slot;
    std::uint32_t index;
    bool operator==(const PoolAddress&) const = default;
};

/// Every scalar of the backbone-att and backbone-mlp groups, in
/// (layer, tensor, index) order. Pool positions are dense integers.
class SelectionPool {
public:
    struct Segment {
        std::size_t slot;
        std::string name;
        Group group;
        int layer;
        std::size_t offset;  // first pool position
        std::size_t length;
    };

    /// Layer ids are parsed from the "blocks.<l>." name prefix.
    static SelectionPool build(const ParameterStore& store);

    std::size_t size() const { return size_; }
    std::size_t num_layers() const { return num_layers_; }
    const std::vector<Segment>& segments() const { return segments_; }
    const Segment& segment_of(std::size_t position) const;
    PoolAddress address(std::size_t position) const;
    std::optional<std::size_t> position(std::string_view name, std::uint32_t index) const;
    const Segment* find_segment(std::string_view name) const;

private:
    std::vector<Segment> segments_;
    std::size_t size_ = 0;
    std::size_t num_layers_ = 0;
};

struct SelectionSchedule {
    std::size_t total_steps = 0;
    std::size_t step_size = 0;
    std::size_t rounds = 0;
    std::vector<std::size_t> round_steps;

    /// n = floor((T - 1) / s) rounds at s, 2s, ..., n*s; all strictly before T.
    static SelectionSchedule periodic(std::size_t total_steps, std::size_t step_size);
    /// One round receiving the whole quota at `at_step` (>= 1, < T).
    static SelectionSchedule one_shot(std::size_t total_steps, std::size_t at_step = 1);
    /// max(50, T / 5).
    static std::size_t default_step_size(std::size_t total_steps);

    /// Round number (0-based) firing at `step`, if any.
    std::optional<std::size_t> round_at(std::size_t step) const;
};

/// Per-round quotas: floor(total / rounds) each, remainder added to the last.
std::vector<std::size_t> round_quotas(std::size_t total, std::size_t rounds);

enum class SelectionCriterion { accumulated_gradient, random_uniform, weight_magnitude, layer_wise_accumulated_gradient };

std::string criterion_name(SelectionCriterion c);
SelectionCriterion parse_criterion(const std::string& name);

struct TensorMask {
    std::string name;
    std::vector<std::uint32_t> indices;  // ascending
    std::vector<std::uint16_t> rounds;   // aligned with indices
    bool operator==(const TensorMask&) const = default;
};

/// Selected scalars per tensor, with the round that picked each one.
class SelectionMask {
public:
    SelectionMask() = default;
    /// One (possibly empty) entry per pool tensor, in pool order.
    static SelectionMask for_pool(const SelectionPool& pool);

    std::size_t size() const;
    const std::vector<TensorMask>& tensors() const { return tensors_; }
    const TensorMask* find(std::string_view name) const;
    bool contains(std::string_view name, std::uint32_t index) const;

    /// Adds addresses from one round. Throws if any is already selected.
    void add_round(std::uint16_t round, std::span<const std::pair<std::string_view, std::uint32_t>> picks);
    /// Low-level append used by deserializers; indices must be ascending.
    void add_tensor(TensorMask tensor);

    bool operator==(const SelectionMask&) const = default;

private:
    std::vector<TensorMask> tensors_;
};

/// Top-`quota` positions by score among those with selected[p] == 0. Ties go
/// to the earlier position. Result is in rank order, size min(quota, free).
std::vector<std::size_t> rank_select(std::span<const float> scores, std::size_t quota,
                                     std::span<const std::uint8_t> selected);

/// Windowed sum of |gradient| for every pool scalar not yet selected.
class ScoreAccumulator {
public:
    explicit ScoreAccumulator(std::size_t pool_size) : scores_(pool_size, 0.0f) {}

    /// Throws DivergenceError on a non-finite gradient (names step and tensor).
    void accumulate(const SelectionPool& pool, const GradientMap& grads, std::span<const std::uint8_t> selected,
                    std::size_t step);
    void reset();
    std::span<const float> scores() const { return scores_; }
    std::span<float> scores() { return scores_; }

private:
    std::vector<float> scores_;
};

class SelectionEngine {
public:
    SelectionEngine(const ParameterStore& store, SelectionSchedule schedule, std::size_t internal_budget,
                    SelectionCriterion criterion, std::uint64_t seed);

    const SelectionPool& pool() const { return pool_; }
    const SelectionSchedule& schedule() const { return schedule_; }
    const SelectionMask& mask() const { return mask_; }
    const ScoreAccumulator& accumulator() const { return acc_; }
    std::span<const std::uint8_t> selected() const { return selected_; }
    std::size_t internal_budget() const { return budget_; }
    std::size_t rounds_done() const { return rounds_done_; }
    std::size_t quota_for_round(std::size_t round) const { return quotas_.at(round); }

    void accumulate(const GradientMap& grads, std::size_t step);

    /// Runs the round scheduled at `step`: ranks, appends to the mask, resets
    /// the accumulator. Returns the newly selected addresses in pool order.
    /// Throws std::logic_error when no round is scheduled at `step`.
    std::vector<PoolAddress> run_round(std::size_t step, const ParameterStore& store);

private:
    std::vector<std::size_t> criterion_scores_select(std::size_t quota, std::size_t round, const ParameterStore& store);

    SelectionPool pool_;
    SelectionSchedule schedule_;
    std::size_t budget_;
    SelectionCriterion criterion_;
    std::uint64_t seed_;
    std::vector<std::size_t> quotas_;
    ScoreAccumulator acc_;
    std::vector<std::uint8_t> selected_;
    SelectionMask mask_;
    std::size_t rounds_done_ = 0;
};

}  // namespace sfa
