#include "sfa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "sfa/errors.hpp"
#include "sfa/metrics.hpp"
#include "sfa/ops.hpp"
#include "sfa/rng.hpp"

namespace sfa {

namespace {

constexpr RunKind kAllKinds[] = {RunKind::sfa,           RunKind::frozen,           RunKind::full_finetune,
                                 RunKind::external_only, RunKind::internal_only,    RunKind::adaptformer_style,
                                 RunKind::imported_mask};

HeadKind head_for(TaskKind kind) {
    return kind == TaskKind::shapes_segmentation ? HeadKind::segmentation : HeadKind::regression;
}

std::size_t eval_samples(std::size_t available, std::size_t limit) {
    return limit == 0 ? available : std::min(available, limit);
}

/// Seeded reshuffle at every epoch boundary.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
        : order_(n), batch_(std::min(batch, n)), rng_(derive_seed(seed, {0x62617463ULL})) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<std::size_t> next() {
        if (pos_ + batch_ > order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
        pos_ += batch_;
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    Rng rng_;
};

void check_shapes(const BackboneConfig& bc, const TaskSpec& task) {
    if (bc.image_h != task.image_h || bc.image_w != task.image_w) {
        throw ConfigError("task images are " + std::to_string(task.image_h) + "x" + std::to_string(task.image_w) +
                          " but the backbone expects " + std::to_string(bc.image_h) + "x" +
                          std::to_string(bc.image_w));
    }
}

}  // namespace

std::string run_kind_name(RunKind kind) {
    switch (kind) {
    case RunKind::sfa: return "sfa";
    case RunKind::frozen: return "frozen";
    case RunKind::full_finetune: return "full_finetune";
    case RunKind::external_only: return "external_only";
    case RunKind::internal_only: return "internal_only";
    case RunKind::adaptformer_style: return "adaptformer_style";
    case RunKind::imported_mask: return "imported_mask";
    }
    return "?";
}

RunKind parse_run_kind(const std::string& name) {
    for (auto k : kAllKinds) {
        if (run_kind_name(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown run kind '" + name + "'");
}

void TrainConfig::validate() const {
    if (steps == 0) {
        throw ConfigError("steps must be positive");
    }
    if (batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw ConfigError("rho must lie in [0, 1], got " + std::to_string(rho));
    }
    if (!(optimizer.lr > 0.0f) || !std::isfinite(optimizer.lr)) {
        throw ConfigError("learning rate must be positive");
    }
    if (step_size != 0 && step_size >= steps && !one_shot_selection) {
        throw ConfigError("step size " + std::to_string(step_size) + " leaves no selection round before T = " +
                          std::to_string(steps));
    }
}

std::size_t TrainConfig::effective_step_size() const {
    return step_size ? step_size : SelectionSchedule::default_step_size(steps);
}

Var<float> task_loss(Var<float> prediction, const Batch& batch, HeadKind head) {
    if (head == HeadKind::segmentation) {
        return ops::cross_entropy(prediction, std::span<const std::int32_t>(batch.classes));
    }
    Tensor target = batch.depth;
    Shape s = target.shape();
    s.push_back(1);
    target.reshape(s);
    return ops::mse(prediction, target);
}

StepResult masked_step(Model& model, const Batch& batch, MaskedOptimizer& optimizer, float lr, std::size_t step) {
    Tape<float> tape;
    auto pred = model.forward(tape, batch.images);
    auto loss = task_loss(pred, batch, model.config().head_kind);
    const float value = loss.value()[0];
    if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step));
    }
    StepResult out{value, backward(tape, loss, model.params())};
    optimizer.step(model.params(), out.grads, lr);
    return out;
}

Metrics evaluate(const Model& model, const Dataset& val, std::size_t max_samples) {
    const std::size_t n = eval_samples(val.size(), max_samples);
    if (n == 0) {
        throw ConfigError("evaluate: empty validation set");
    }
    const std::size_t chunk = 32, px = val.pixels();
    const auto& bc = model.config();
    const bool seg = bc.head_kind == HeadKind::segmentation;
    ConfusionMatrix cm(seg ? bc.num_classes : 2);
    double sq = 0.0;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), first);
        const Batch b = gather(val, idx);
        const Tensor out = model.predict(b.images);
        if (seg) {
            const std::size_t k = bc.num_classes;
            std::vector<std::int32_t> pred(count * px);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const float* row = out.raw() + i * k;
                pred[i] = static_cast<std::int32_t>(std::max_element(row, row + k) - row);
            }
            cm.add(pred, b.classes);
        } else {
            for (std::size_t i = 0; i < count * px; ++i) {
                const double d = static_cast<double>(out[i]) - static_cast<double>(b.depth[i]);
                sq += d * d;
            }
        }
    }
    if (seg) {
        return {"miou", cm.miou(), true};
    }
    return {"rmse", std::sqrt(sq / static_cast<double>(n * px)), false};
}

std::vector<LayerSelection> layer_selection(const SelectionPool& pool, const SelectionMask& mask) {
    std::vector<LayerSelection> out(pool.num_layers());
    for (std::size_t l = 0; l < out.size(); ++l) {
        out[l] = LayerSelection{l, 0, 0, 0, 0};
    }
    for (const auto& seg : pool.segments()) {
        if (seg.layer < 0) {
            continue;
        }
        auto& ls = out[static_cast<std::size_t>(seg.layer)];
        const TensorMask* tm = mask.find(seg.name);
        const std::size_t picked = tm ? tm->indices.size() : 0;
        if (seg.group == Group::backbone_att) {
            ls.att_pool += seg.length;
            ls.att_selected += picked;
        } else {
            ls.mlp_pool += seg.length;
            ls.mlp_selected += picked;
        }
    }
    return out;
}

Model with_fresh_head(const Model& base, HeadKind kind, std::size_t num_classes, std::uint64_t seed) {
    Model m = base;
    m.reset_head(kind, num_classes, seed);
    return m;
}

RunResult train(const Model& base, const TaskSpec& task, const TrainConfig& cfg, RunKind kind,
                const SelectionMask* imported_mask, const RoundHook& on_round) {
    cfg.validate();
    task.validate();
    if (base.adapter()) {
        throw ConfigError("base model already carries adapters; adapt from a plain backbone");
    }
    if (kind == RunKind::imported_mask && imported_mask == nullptr) {
        throw ConfigError("imported_mask run needs a mask");
    }
    const auto t0 = std::chrono::steady_clock::now();
    check_shapes(base.config(), task);

    const HeadKind head = head_for(task.kind);
    Model model = with_fresh_head(base, head, head == HeadKind::segmentation ? task.num_classes : 1,
                                  derive_seed(cfg.seed, {0x6865ULL}));
    const auto& bc = model.config();
    const std::size_t n_backbone = model.backbone_param_count();

    bool external = false, internal = false, dense_backbone = false;
    AdapterStyle style = cfg.adapter_style;
    double rho = cfg.rho;
    switch (kind) {
    case RunKind::sfa:
        // rho = 0 gives the external side nothing; treat it as "no adapters".
        external = cfg.use_external && rho > 0.0;
        internal = cfg.use_internal;
        break;
    case RunKind::frozen: break;
    case RunKind::full_finetune: dense_backbone = true; break;
    case RunKind::external_only:
        external = true;
        rho = 1.0;
        break;
    case RunKind::internal_only:
        internal = true;
        rho = 0.0;
        break;
    case RunKind::adaptformer_style:
        external = true;
        style = AdapterStyle::parallel_scaled;
        rho = 1.0;
        break;
    case RunKind::imported_mask: external = cfg.use_external; break;
    }
    const BudgetPlan plan = BudgetPlan::make(cfg.beta, rho, n_backbone);

    std::size_t adapter_count = 0, middle_dim = 0;
    if (external) {
        AdapterConfig ac;
        ac.style = style;
        ac.scale = cfg.adapter_scale;
        const std::size_t sites = ac.site_count(bc.num_blocks);
        middle_dim = cfg.middle_dim ? cfg.middle_dim : solve_dimension(plan.external_quota, bc.embed_dim, sites);
        ac.middle_dim = middle_dim;
        adapter_count = adapter_param_count(bc.embed_dim, middle_dim, sites);
        if (adapter_count > plan.total_quota) {
            throw ConfigError("adapters with middle dimension " + std::to_string(middle_dim) + " need " +
                              std::to_string(adapter_count) + " parameters, budget is " +
                              std::to_string(plan.total_quota));
        }
        attach(model, ac, derive_seed(cfg.seed, {0x6164ULL}));
    }
    const std::size_t internal_quota =
        internal ? std::min(plan.internal_quota, plan.total_quota - adapter_count) : 0;

    auto& store = model.params();
    store.set_requires_grad(false);
    store.set_requires_grad(Group::head, true);
    MaskedOptimizer opt(cfg.optimizer);
    for (std::size_t s = 0; s < store.size(); ++s) {
        const Group g = store.entry(s).group;
        if (g == Group::head || g == Group::adapter || (dense_backbone && is_backbone(g))) {
            store.entry(s).requires_grad = true;
            opt.add_dense(store, s);
        }
    }

    std::optional<SelectionEngine> engine;
    SelectionMask mask;
    const bool selecting = internal && internal_quota > 0;
    if (selecting) {
        if (cfg.one_shot_selection && cfg.steps < 2) {
            throw ConfigError("one-shot selection needs at least 2 steps");
        }
        auto schedule = cfg.one_shot_selection ? SelectionSchedule::one_shot(cfg.steps, 1)
                                               : SelectionSchedule::periodic(cfg.steps, cfg.effective_step_size());
        engine.emplace(store, std::move(schedule), internal_quota, cfg.criterion,
                       derive_seed(cfg.seed, {0x73656cULL}));
        store.set_requires_grad(Group::backbone_att, true);
        store.set_requires_grad(Group::backbone_mlp, true);
    } else {
        mask = SelectionMask::for_pool(SelectionPool::build(store));
    }

    if (kind == RunKind::imported_mask) {
        const auto pool = SelectionPool::build(store);
        if (imported_mask->size() + adapter_count > plan.total_quota) {
            throw ConfigError("imported mask (" + std::to_string(imported_mask->size()) + ") plus adapters (" +
                              std::to_string(adapter_count) + ") exceed the budget of " +
                              std::to_string(plan.total_quota));
        }
        mask = SelectionMask::for_pool(pool);
        for (const auto& tm : imported_mask->tensors()) {
            if (tm.indices.empty()) {
                continue;
            }
            const auto* seg = pool.find_segment(tm.name);
            if (seg == nullptr) {
                throw ConfigError("mask tensor '" + tm.name + "' is not in the selection pool");
            }
            if (tm.indices.back() >= seg->length) {
                throw ConfigError("mask index " + std::to_string(tm.indices.back()) + " outside '" + tm.name + "'");
            }
            // Keep the source run's round tags so the mask re-exports unchanged.
            std::map<std::uint16_t, std::vector<std::pair<std::string_view, std::uint32_t>>> by_round;
            for (std::size_t k = 0; k < tm.indices.size(); ++k) {
                by_round[k < tm.rounds.size() ? tm.rounds[k] : 0].emplace_back(tm.name, tm.indices[k]);
            }
            for (const auto& [round, picks] : by_round) {
                mask.add_round(round, picks);
            }
            store.entry(seg->slot).requires_grad = true;
            opt.add_indices(store, seg->slot, tm.indices);
        }
    }

    const auto head_params = opt.trainable_count(store, Group::head);
    auto check_budget = [&] {
        if (kind == RunKind::full_finetune) {
            return;
        }
        const std::size_t used = opt.trainable_count() - head_params;
        if (used > plan.total_quota) {
            throw std::logic_error("budget violation: " + std::to_string(used) + " backbone-side trainable > " +
                                   std::to_string(plan.total_quota));
        }
    };
    check_budget();

    const Dataset train_set = make_train_set(task);
    const Dataset val_set = make_val_set(task);
    BatchSampler sampler(train_set.size(), cfg.batch_size, derive_seed(cfg.seed, {0x6f72ULL}));

    RunReport rep;
    rep.kind = run_kind_name(kind);
    rep.task = task.domain + "/" + task_kind_name(task.kind);
    rep.seed = cfg.seed;
    rep.beta = cfg.beta;
    rep.rho = rho;
    rep.backbone_params = n_backbone;
    rep.budget_ceiling = plan.total_quota;
    rep.adapter_params = adapter_count;
    rep.head_params = head_params;
    rep.middle_dim = middle_dim;
    rep.step_size = selecting ? engine->schedule().step_size : 0;
    rep.criterion = selecting ? criterion_name(cfg.criterion) : "";
    rep.adapter_style = external ? adapter_style_name(style) : "";
    const Metrics initial = evaluate(model, val_set, cfg.eval_subset);
    rep.metric_name = initial.name;
    rep.initial_metric = initial.value;

    const std::size_t eval_every = cfg.eval_every ? cfg.eval_every : cfg.effective_step_size();
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        const auto idx = sampler.next();
        const Batch batch = gather(train_set, idx);
        const float lr = cfg.optimizer.learning_rate(t, cfg.steps);
        StepResult r = masked_step(model, batch, opt, lr, t);
        loss_sum += r.loss;
        ++loss_n;
        if (selecting && engine->rounds_done() < engine->schedule().rounds) {
            engine->accumulate(r.grads, t);
            if (engine->schedule().round_at(t)) {
                // Picks arrive in pool order, so each tensor's indices are contiguous.
                const auto picks = engine->run_round(t, store);
                std::vector<std::uint32_t> run;
                for (std::size_t i = 0; i < picks.size(); ++i) {
                    run.push_back(picks[i].index);
                    if (i + 1 == picks.size() || picks[i + 1].slot != picks[i].slot) {
                        opt.add_indices(store, picks[i].slot, run);
                        run.clear();
                    }
                }
                check_budget();
                if (on_round) {
                    on_round(RoundEvent{t, engine->rounds_done() - 1, model, engine->mask(), opt});
                }
                if (engine->rounds_done() == engine->schedule().rounds) {
                    // Selection finished: only masked pool tensors still need gradients.
                    for (const auto& seg : engine->pool().segments()) {
                        const TensorMask* tm = engine->mask().find(seg.name);
                        store.entry(seg.slot).requires_grad = tm && !tm->indices.empty();
                    }
                }
            }
        }
        if (t % eval_every == 0 || t == cfg.steps) {
            const double metric = t == cfg.steps ? evaluate(model, val_set).value
                                                 : evaluate(model, val_set, cfg.eval_subset).value;
            rep.history.push_back({t, loss_sum / static_cast<double>(loss_n), metric, opt.trainable_count()});
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    if (selecting) {
        mask = engine->mask();
        rep.rounds = engine->rounds_done();
    }
    rep.final_metric = rep.history.back().metric;
    rep.mask_params = mask.size();
    rep.dense_backbone_params = dense_backbone ? n_backbone : 0;
    rep.layers = layer_selection(SelectionPool::build(store), mask);
    if (kind == RunKind::sfa && rep.backbone_side_trainable() == 0) {
        rep.kind = "frozen";
    }
    store.set_requires_grad(false);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return RunResult{std::move(model), std::move(mask), std::move(rep)};
}

RunResult run_sfa(const Model& base, const TaskSpec& task, const TrainConfig& config, const RoundHook& on_round) {
    return train(base, task, config, RunKind::sfa, nullptr, on_round);
}

RunResult run_baseline(const Model& base, const TaskSpec& task, const TrainConfig& config, RunKind kind) {
    if (kind == RunKind::sfa || kind == RunKind::imported_mask) {
        throw ConfigError("run_baseline: '" + run_kind_name(kind) + "' is not a baseline");
    }
    return train(base, task, config, kind);
}

RunResult adapt_with_mask(const Model& base, const TaskSpec& task, const TrainConfig& config,
                          const SelectionMask& mask) {
    return train(base, task, config, RunKind::imported_mask, &mask);
}

PretrainResult pretrain(const BackboneConfig& config, const TaskSpec& source, std::size_t steps, std::uint64_t seed,
                        const OptimizerConfig& optimizer, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ConfigError("pretrain: batch size must be positive");
    }
    source.validate();
    BackboneConfig bc = config;
    bc.head_kind = head_for(source.kind);
    bc.num_classes = bc.head_kind == HeadKind::segmentation ? source.num_classes : 1;
    check_shapes(bc, source);
    Model model = Model::build(bc, seed);
    auto& store = model.params();
    MaskedOptimizer opt(optimizer);
    for (std::size_t s = 0; s < store.size(); ++s) {
        store.entry(s).requires_grad = true;
        opt.add_dense(store, s);
    }
    const Dataset train_set = make_train_set(source);
    const Dataset val_set = make_val_set(source);
    BatchSampler sampler(train_set.size(), batch_size, derive_seed(seed, {0x7072ULL}));

    PretrainResult out{model, evaluate(model, val_set).value, 0.0, {}};
    const std::size_t eval_every = std::max<std::size_t>(1, steps / 10);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t t = 1; t <= steps; ++t) {
        const Batch batch = gather(train_set, sampler.next());
        loss_sum += masked_step(model, batch, opt, optimizer.learning_rate(t, steps), t).loss;
        ++loss_n;
        if (t % eval_every == 0 || t == steps) {
            out.history.push_back({t, loss_sum / static_cast<double>(loss_n), evaluate(model, val_set).value,
                                   opt.trainable_count()});
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    store.set_requires_grad(false);
    // Zero steps hands back the initialisation untouched.
    out.final_metric = out.history.empty() ? out.initial_metric : out.history.back().metric;
    out.model = std::move(model);
    return out;
}

}  // namespace sfa
