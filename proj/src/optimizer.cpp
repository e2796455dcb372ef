#include "sfa/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfa/errors.hpp"

namespace sfa {

std::string optimizer_kind_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") {
        return OptimizerKind::sgd;
    }
    if (name == "adamw") {
        return OptimizerKind::adamw;
    }
    throw ConfigError("unknown optimizer '" + name + "'");
}

std::string lr_decay_name(LrDecay d) {
    switch (d) {
    case LrDecay::constant: return "constant";
    case LrDecay::linear: return "linear";
    case LrDecay::cosine: return "cosine";
    }
    return "?";
}

LrDecay parse_lr_decay(const std::string& name) {
    for (auto d : {LrDecay::constant, LrDecay::linear, LrDecay::cosine}) {
        if (lr_decay_name(d) == name) {
            return d;
        }
    }
    throw ConfigError("unknown lr decay '" + name + "'");
}

float OptimizerConfig::learning_rate(std::size_t step, std::size_t total_steps) const {
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (step <= warmup && warmup > 0) {
        return lr * static_cast<float>(step) / static_cast<float>(warmup);
    }
    if (decay == LrDecay::constant || total_steps <= warmup) {
        return lr;
    }
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(total_steps - warmup, 1));
    const double clamped = std::clamp(progress, 0.0, 1.0);
    if (decay == LrDecay::linear) {
        return lr * static_cast<float>(1.0 - clamped);
    }
    return lr * static_cast<float>(0.5 * (1.0 + std::cos(std::numbers::pi * clamped)));
}

void MaskedOptimizer::add_dense(const ParameterStore& store, std::size_t slot) {
    const auto& e = store.entry(slot);
    auto it = index_.find(slot);
    if (it != index_.end()) {
        auto& s = slots_[it->second];
        if (s.dense) {
            return;
        }
        // Promote a sparse slot: keep existing moments, add the rest fresh.
        std::vector<float> m(e.value.size(), 0.0f), v(e.value.size(), 0.0f);
        std::vector<std::uint32_t> t(e.value.size(), 0);
        for (std::size_t k = 0; k < s.indices.size(); ++k) {
            m[s.indices[k]] = s.m[k];
            v[s.indices[k]] = s.v[k];
            t[s.indices[k]] = s.t[k];
        }
        s.dense = true;
        s.indices.clear();
        s.m = std::move(m);
        s.v = std::move(v);
        s.t = std::move(t);
        return;
    }
    SlotState s{slot, true, e.value.rank() >= 2, {}, std::vector<float>(e.value.size(), 0.0f),
                std::vector<float>(e.value.size(), 0.0f), std::vector<std::uint32_t>(e.value.size(), 0)};
    index_.emplace(slot, slots_.size());
    slots_.push_back(std::move(s));
}

void MaskedOptimizer::add_indices(const ParameterStore& store, std::size_t slot, std::span<const std::uint32_t> indices) {
    const auto& e = store.entry(slot);
    auto it = index_.find(slot);
    if (it == index_.end()) {
        it = index_.emplace(slot, slots_.size()).first;
        slots_.push_back(SlotState{slot, false, e.value.rank() >= 2, {}, {}, {}, {}});
    }
    auto& s = slots_[it->second];
    if (s.dense) {
        return;
    }
    std::vector<std::uint32_t> fresh(indices.begin(), indices.end());
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    for (auto i : fresh) {
        if (i >= e.value.size()) {
            throw std::out_of_range("optimizer: index " + std::to_string(i) + " outside '" + e.name + "'");
        }
    }
    std::vector<std::uint32_t> idx;
    std::vector<float> m, v;
    std::vector<std::uint32_t> t;
    const std::size_t cap = s.indices.size() + fresh.size();
    idx.reserve(cap);
    m.reserve(cap);
    v.reserve(cap);
    t.reserve(cap);
    std::size_t a = 0, b = 0;
    while (a < s.indices.size() || b < fresh.size()) {
        if (b == fresh.size() || (a < s.indices.size() && s.indices[a] <= fresh[b])) {
            if (b < fresh.size() && s.indices[a] == fresh[b]) {
                ++b;
            }
            idx.push_back(s.indices[a]);
            m.push_back(s.m[a]);
            v.push_back(s.v[a]);
            t.push_back(s.t[a]);
            ++a;
        } else {
            idx.push_back(fresh[b++]);
            m.push_back(0.0f);
            v.push_back(0.0f);
            t.push_back(0);
        }
    }
    s.indices = std::move(idx);
    s.m = std::move(m);
    s.v = std::move(v);
    s.t = std::move(t);
}

float MaskedOptimizer::bias_correction(std::vector<float>& cache, float beta, std::uint32_t t) {
    while (cache.size() <= t) {
        cache.push_back(static_cast<float>(1.0 - std::pow(static_cast<double>(beta), static_cast<double>(cache.size()))));
    }
    return cache[t];
}

void MaskedOptimizer::step(ParameterStore& store, const GradientMap& grads, float lr) {
    const auto& c = config_;
    for (auto& s : slots_) {
        if (!grads.has(s.slot)) {
            throw std::logic_error("optimizer: no gradient for trainable tensor '" + store.entry(s.slot).name + "'");
        }
        Tensor& w = store.entry(s.slot).value;
        const Tensor& g = grads[s.slot];
        const float wd = s.decay ? c.weight_decay : 0.0f;
        const std::size_t n = s.dense ? w.size() : s.indices.size();
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = s.dense ? k : s.indices[k];
            const float gi = g[i];
            if (c.kind == OptimizerKind::sgd) {
                w[i] -= lr * (gi + wd * w[i]);
                continue;
            }
            const std::uint32_t t = ++s.t[k];
            s.m[k] = c.beta1 * s.m[k] + (1.0f - c.beta1) * gi;
            s.v[k] = c.beta2 * s.v[k] + (1.0f - c.beta2) * gi * gi;
            const float mhat = s.m[k] / bias_correction(bc1_, c.beta1, t);
            const float vhat = s.v[k] / bias_correction(bc2_, c.beta2, t);
            w[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + wd * w[i]);
        }
    }
}

std::size_t MaskedOptimizer::trainable_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_) {
        n += s.dense ? s.m.size() : s.indices.size();
    }
    return n;
}

std::size_t MaskedOptimizer::trainable_count(const ParameterStore& store, Group group) const {
    std::size_t n = 0;
    for (const auto& s : slots_) {
        if (store.entry(s.slot).group == group) {
            n += s.dense ? s.m.size() : s.indices.size();
        }
    }
    return n;
}

std::size_t MaskedOptimizer::state_entries() const {
    std::size_t n = 0;
    for (const auto& s : slots_) {
        n += s.m.size();
    }
    return n;
}

}  // namespace sfa
