#include "sfa/selection.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sfa/errors.hpp"

namespace sfa {

namespace {

int parse_layer(const std::string& name) {
    constexpr std::string_view prefix = "blocks.";
    if (name.rfind(prefix, 0) != 0) {
        return -1;
    }
    const auto dot = name.find('.', prefix.size());
    return std::stoi(name.substr(prefix.size(), dot - prefix.size()));
}

}  // namespace

SelectionPool SelectionPool::build(const ParameterStore& store) {
    SelectionPool pool;
    int max_layer = -1;
    for (std::size_t slot = 0; slot < store.size(); ++slot) {
        const auto& e = store.entry(slot);
        if (e.group != Group::backbone_att && e.group != Group::backbone_mlp) {
            continue;
        }
        const int layer = std::max(parse_layer(e.name), 0);
        max_layer = std::max(max_layer, layer);
        pool.segments_.push_back(Segment{slot, e.name, e.group, layer, pool.size_, e.value.size()});
        pool.size_ += e.value.size();
    }
    if (pool.size_ == 0) {
        throw ConfigError("selection pool is empty: no backbone-att or backbone-mlp parameters");
    }
    // Store order is block-major already; keep a stable (layer, tensor) order regardless.
    std::stable_sort(pool.segments_.begin(), pool.segments_.end(),
                     [](const Segment& a, const Segment& b) { return a.layer < b.layer; });
    std::size_t offset = 0;
    for (auto& s : pool.segments_) {
        s.offset = offset;
        offset += s.length;
    }
    pool.num_layers_ = static_cast<std::size_t>(max_layer + 1);
    return pool;
}

const SelectionPool::Segment& SelectionPool::segment_of(std::size_t position) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), position,
                               [](std::size_t p, const Segment& s) { return p < s.offset; });
    if (it == segments_.begin() || position >= size_) {
        throw std::out_of_range("pool position " + std::to_string(position) + " out of range");
    }
    return *std::prev(it);
}

PoolAddress SelectionPool::address(std::size_t position) const {
    const auto& s = segment_of(position);
    return PoolAddress{s.slot, static_cast<std::uint32_t>(position - s.offset)};
}

const SelectionPool::Segment* SelectionPool::find_segment(std::string_view name) const {
    for (const auto& s : segments_) {
        if (s.name == name) {
            return &s;
        }
    }
    return nullptr;
}

std::optional<std::size_t> SelectionPool::position(std::string_view name, std::uint32_t index) const {
    const auto* s = find_segment(name);
    if (!s || index >= s->length) {
        return std::nullopt;
    }
    return s->offset + index;
}

SelectionSchedule SelectionSchedule::periodic(std::size_t total_steps, std::size_t step_size) {
    if (total_steps < 1) {
        throw ConfigError("schedule: total steps must be >= 1");
    }
    if (step_size < 1) {
        throw ConfigError("schedule: step size must be >= 1");
    }
    SelectionSchedule s;
    s.total_steps = total_steps;
    s.step_size = step_size;
    s.rounds = (total_steps - 1) / step_size;
    for (std::size_t r = 1; r <= s.rounds; ++r) {
        s.round_steps.push_back(r * step_size);
    }
    return s;
}

SelectionSchedule SelectionSchedule::one_shot(std::size_t total_steps, std::size_t at_step) {
    if (at_step < 1 || at_step >= total_steps) {
        throw ConfigError("schedule: one-shot step must lie in [1, T)");
    }
    SelectionSchedule s;
    s.total_steps = total_steps;
    s.step_size = at_step;
    s.rounds = 1;
    s.round_steps = {at_step};
    return s;
}

std::size_t SelectionSchedule::default_step_size(std::size_t total_steps) {
    return std::max<std::size_t>(50, total_steps / 5);
}

std::optional<std::size_t> SelectionSchedule::round_at(std::size_t step) const {
    auto it = std::lower_bound(round_steps.begin(), round_steps.end(), step);
    if (it == round_steps.end() || *it != step) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - round_steps.begin());
}

std::vector<std::size_t> round_quotas(std::size_t total, std::size_t rounds) {
    if (rounds == 0) {
        return {};
    }
    std::vector<std::size_t> q(rounds, total / rounds);
    q.back() += total % rounds;
    return q;
}

std::string criterion_name(SelectionCriterion c) {
    switch (c) {
    case SelectionCriterion::accumulated_gradient: return "accumulated_gradient";
    case SelectionCriterion::random_uniform: return "random_uniform";
    case SelectionCriterion::weight_magnitude: return "weight_magnitude";
    case SelectionCriterion::layer_wise_accumulated_gradient: return "layer_wise_accumulated_gradient";
    }
    return "?";
}

SelectionCriterion parse_criterion(const std::string& name) {
    if (name == "accumulated_gradient" || name == "gradient") {
        return SelectionCriterion::accumulated_gradient;
    }
    if (name == "random_uniform" || name == "random") {
        return SelectionCriterion::random_uniform;
    }
    if (name == "weight_magnitude" || name == "magnitude") {
        return SelectionCriterion::weight_magnitude;
    }
    if (name == "layer_wise_accumulated_gradient" || name == "layer_wise" || name == "layer-wise") {
        return SelectionCriterion::layer_wise_accumulated_gradient;
    }
    throw ConfigError("unknown selection criterion '" + name + "'");
}

SelectionMask SelectionMask::for_pool(const SelectionPool& pool) {
    SelectionMask m;
    for (const auto& s : pool.segments()) {
        m.tensors_.push_back(TensorMask{s.name, {}, {}});
    }
    return m;
}

std::size_t SelectionMask::size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
        n += t.indices.size();
    }
    return n;
}

const TensorMask* SelectionMask::find(std::string_view name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

bool SelectionMask::contains(std::string_view name, std::uint32_t index) const {
    const auto* t = find(name);
    return t && std::binary_search(t->indices.begin(), t->indices.end(), index);
}

void SelectionMask::add_round(std::uint16_t round, std::span<const std::pair<std::string_view, std::uint32_t>> picks) {
    // Group by tensor, then merge each group into the existing sorted list.
    std::vector<std::pair<std::size_t, std::uint32_t>> keyed;
    keyed.reserve(picks.size());
    for (const auto& [name, index] : picks) {
        auto it = std::find_if(tensors_.begin(), tensors_.end(), [&](const TensorMask& t) { return t.name == name; });
        if (it == tensors_.end()) {
            tensors_.push_back(TensorMask{std::string(name), {}, {}});
            it = std::prev(tensors_.end());
        }
        keyed.emplace_back(static_cast<std::size_t>(it - tensors_.begin()), index);
    }
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < keyed.size();) {
        const std::size_t t = keyed[i].first;
        std::size_t j = i;
        std::vector<std::uint32_t> fresh;
        while (j < keyed.size() && keyed[j].first == t) {
            fresh.push_back(keyed[j++].second);
        }
        i = j;
        TensorMask& tm = tensors_[t];
        std::vector<std::uint32_t> indices;
        std::vector<std::uint16_t> rounds;
        indices.reserve(tm.indices.size() + fresh.size());
        rounds.reserve(indices.capacity());
        std::size_t a = 0, b = 0;
        while (a < tm.indices.size() || b < fresh.size()) {
            const bool take_old = b == fresh.size() || (a < tm.indices.size() && tm.indices[a] < fresh[b]);
            if (take_old) {
                indices.push_back(tm.indices[a]);
                rounds.push_back(tm.rounds[a++]);
                continue;
            }
            if ((a < tm.indices.size() && tm.indices[a] == fresh[b]) || (!indices.empty() && indices.back() == fresh[b])) {
                throw std::logic_error("mask: '" + tm.name + "'[" + std::to_string(fresh[b]) + "] is already selected");
            }
            indices.push_back(fresh[b++]);
            rounds.push_back(round);
        }
        tm.indices = std::move(indices);
        tm.rounds = std::move(rounds);
    }
}

void SelectionMask::add_tensor(TensorMask tensor) {
    if (tensor.indices.size() != tensor.rounds.size()) {
        throw FormatError("mask: tensor '" + tensor.name + "' has mismatched index and round counts");
    }
    if (!std::is_sorted(tensor.indices.begin(), tensor.indices.end()) ||
        std::adjacent_find(tensor.indices.begin(), tensor.indices.end()) != tensor.indices.end()) {
        throw FormatError("mask: indices of '" + tensor.name + "' are not strictly ascending");
    }
    if (find(tensor.name)) {
        throw FormatError("mask: duplicate tensor '" + tensor.name + "'");
    }
    tensors_.push_back(std::move(tensor));
}

std::vector<std::size_t> rank_select(std::span<const float> scores, std::size_t quota,
                                     std::span<const std::uint8_t> selected) {
    if (scores.size() != selected.size()) {
        throw std::invalid_argument("rank_select: scores and selection flags differ in length");
    }
    std::vector<std::size_t> candidates;
    candidates.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!selected[i]) {
            candidates.push_back(i);
        }
    }
    const std::size_t k = std::min(quota, candidates.size());
    // Descending score, earlier position first on ties: a strict total order.
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    if (k < candidates.size()) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                         better);
        candidates.resize(k);
    }
    std::sort(candidates.begin(), candidates.end(), better);
    return candidates;
}

void ScoreAccumulator::accumulate(const SelectionPool& pool, const GradientMap& grads,
                                  std::span<const std::uint8_t> selected, std::size_t step) {
    for (const auto& seg : pool.segments()) {
        if (!grads.has(seg.slot)) {
            throw std::logic_error("accumulate: no gradient for pool tensor '" + seg.name + "'");
        }
        const Tensor& g = grads[seg.slot];
        float* acc = scores_.data() + seg.offset;
        const std::uint8_t* sel = selected.data() + seg.offset;
        for (std::size_t i = 0; i < seg.length; ++i) {
            const float v = g[i];
            if (!std::isfinite(v)) {
                throw DivergenceError("non-finite gradient at step " + std::to_string(step) + " in tensor '" +
                                      seg.name + "'");
            }
            if (!sel[i]) {
                acc[i] += std::fabs(v);
            }
        }
    }
}

void ScoreAccumulator::reset() { std::fill(scores_.begin(), scores_.end(), 0.0f); }

SelectionEngine::SelectionEngine(const ParameterStore& store, SelectionSchedule schedule, std::size_t internal_budget,
                                 SelectionCriterion criterion, std::uint64_t seed)
    : pool_(SelectionPool::build(store)),
      schedule_(std::move(schedule)),
      budget_(std::min(internal_budget, pool_.size())),
      criterion_(criterion),
      seed_(seed),
      quotas_(round_quotas(budget_, schedule_.rounds)),
      acc_(pool_.size()),
      selected_(pool_.size(), 0),
      mask_(SelectionMask::for_pool(pool_)) {}

void SelectionEngine::accumulate(const GradientMap& grads, std::size_t step) {
    acc_.accumulate(pool_, grads, selected_, step);
}

std::vector<std::size_t> SelectionEngine::criterion_scores_select(std::size_t quota, std::size_t round,
                                                                  const ParameterStore& store) {
    switch (criterion_) {
    case SelectionCriterion::accumulated_gradient: return rank_select(acc_.scores(), quota, selected_);
    case SelectionCriterion::random_uniform: {
        Rng rng(derive_seed(seed_, {0x72616e64ULL, round}));
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        std::vector<float> z(pool_.size());
        for (auto& v : z) {
            v = unit(rng);
        }
        return rank_select(z, quota, selected_);
    }
    case SelectionCriterion::weight_magnitude: {
        std::vector<float> mag(pool_.size());
        for (const auto& seg : pool_.segments()) {
            const auto& w = store.entry(seg.slot).value;
            for (std::size_t i = 0; i < seg.length; ++i) {
                mag[seg.offset + i] = std::fabs(w[i]);
            }
        }
        return rank_select(mag, quota, selected_);
    }
    case SelectionCriterion::layer_wise_accumulated_gradient: {
        const std::size_t layers = std::max<std::size_t>(pool_.num_layers(), 1);
        const std::size_t per_layer = quota / layers;
        std::vector<std::size_t> out;
        for (std::size_t l = 0; l < layers; ++l) {
            // Hide every position outside layer l behind the "selected" flag.
            std::vector<std::uint8_t> blocked(selected_.begin(), selected_.end());
            for (const auto& seg : pool_.segments()) {
                if (static_cast<std::size_t>(seg.layer) != l) {
                    std::fill_n(blocked.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.length, 1);
                }
            }
            auto picked = rank_select(acc_.scores(), per_layer, blocked);
            out.insert(out.end(), picked.begin(), picked.end());
        }
        return out;
    }
    }
    return {};
}

std::vector<PoolAddress> SelectionEngine::run_round(std::size_t step, const ParameterStore& store) {
    const auto round = schedule_.round_at(step);
    if (!round) {
        throw std::logic_error("run_round called at step " + std::to_string(step) + ", which is not a selection step");
    }
    if (*round != rounds_done_) {
        throw std::logic_error("run_round: round " + std::to_string(*round) + " out of order");
    }
    auto picked = criterion_scores_select(quotas_[*round], *round, store);
    std::sort(picked.begin(), picked.end());

    std::vector<std::pair<std::string_view, std::uint32_t>> named;
    std::vector<PoolAddress> out;
    named.reserve(picked.size());
    out.reserve(picked.size());
    for (auto p : picked) {
        const auto& seg = pool_.segment_of(p);
        const auto index = static_cast<std::uint32_t>(p - seg.offset);
        named.emplace_back(seg.name, index);
        out.push_back(PoolAddress{seg.slot, index});
        selected_[p] = 1;
    }
    mask_.add_round(static_cast<std::uint16_t>(*round), named);
    acc_.reset();
    ++rounds_done_;
    return out;
}

}  // namespace sfa
