// Acceptance suite: one line per criterion, non-zero exit if any fails.
//
//   sfa_acceptance            run everything
//   sfa_acceptance 1 2 5      run a subset by index

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "sfa/adapter.hpp"
#include "sfa/backbone.hpp"
#include "sfa/budget.hpp"
#include "sfa/checkpoint.hpp"
#include "sfa/delta.hpp"
#include "sfa/errors.hpp"
#include "sfa/ops.hpp"
#include "sfa/selection.hpp"
#include "sfa/trainer.hpp"

using namespace sfa;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------- gradients

Verdict gradient_suite() {
    using oracle::TensorD;
    using oracle::VarD;
    using Vars = std::vector<VarD>;
    std::mt19937_64 rng(20240611);
    auto u = [&](Shape s) { return oracle::uniform(std::move(s), rng); };
    auto away_from_zero = [&](Shape s) {
        auto t = u(std::move(s));
        for (auto& v : t.data()) {
            v = (v < 0 ? -1.0 : 1.0) * (0.1 + std::abs(v));
        }
        return t;
    };
    std::vector<std::int32_t> labels;
    TensorD target;

    struct Case {
        std::string op;
        std::function<std::vector<TensorD>()> inputs;
        oracle::GraphFn graph;
    };
    const std::vector<Case> cases = {
        {"matmul", [&] { return std::vector{u({2, 3, 4}), u({4, 5})}; },
         [](auto&, const Vars& v) { return ops::matmul(v[0], v[1]); }},
        {"add", [&] { return std::vector{u({3, 4}), u({3, 4})}; },
         [](auto&, const Vars& v) { return ops::add(v[0], v[1]); }},
        {"add_broadcast", [&] { return std::vector{u({2, 3, 4}), u({4})}; },
         [](auto&, const Vars& v) { return ops::add(v[0], v[1]); }},
        {"mul", [&] { return std::vector{u({3, 4}), u({3, 4})}; },
         [](auto&, const Vars& v) { return ops::mul(v[0], v[1]); }},
        {"scale", [&] { return std::vector{u({3, 4})}; },
         [](auto&, const Vars& v) { return ops::scale(v[0], -1.7); }},
        {"relu", [&] { return std::vector{away_from_zero({3, 5})}; },
         [](auto&, const Vars& v) { return ops::relu(v[0]); }},
        {"gelu", [&] { return std::vector{u({3, 5})}; },
         [](auto&, const Vars& v) { return ops::gelu(v[0]); }},
        {"layer_norm", [&] { return std::vector{u({3, 6}), u({6}), u({6})}; },
         [](auto&, const Vars& v) { return ops::layer_norm(v[0], v[1], v[2]); }},
        {"softmax_lastdim", [&] { return std::vector{u({3, 5})}; },
         [](auto&, const Vars& v) { return ops::softmax_lastdim(v[0]); }},
        {"linear", [&] { return std::vector{u({2, 3, 4}), u({4, 5}), u({5})}; },
         [](auto&, const Vars& v) { return ops::linear(v[0], v[1], v[2]); }},
        {"scaled_dot_attention", [&] { return std::vector{u({2, 4, 6}), u({2, 4, 6}), u({2, 4, 6})}; },
         [](auto&, const Vars& v) { return ops::scaled_dot_attention(v[0], v[1], v[2], 2); }},
        {"reshape", [&] { return std::vector{u({2, 6})}; },
         [](auto&, const Vars& v) { return ops::reshape(v[0], Shape{3, 4}); }},
        {"upsample_nearest", [&] { return std::vector{u({1, 2, 2, 3})}; },
         [](auto&, const Vars& v) { return ops::upsample_nearest(v[0], 2); }},
        {"cross_entropy",
         [&] {
             labels.clear();
             std::uniform_int_distribution<int> d(0, 3);
             for (int i = 0; i < 6; ++i) {
                 labels.push_back(d(rng));
             }
             return std::vector{u({6, 4})};
         },
         [&](auto&, const Vars& v) { return ops::cross_entropy(v[0], std::span<const std::int32_t>(labels)); }},
        {"mse",
         [&] {
             target = u({3, 4});
             return std::vector{u({3, 4})};
         },
         [&](auto&, const Vars& v) { return ops::mse(v[0], target); }},
        {"sum", [&] { return std::vector{u({3, 4})}; },
         [](auto&, const Vars& v) { return ops::sum(v[0]); }},
    };

    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op;
    constexpr int kDraws = 20;
    for (const auto& c : cases) {
        for (int d = 0; d < kDraws; ++d) {
            const double e = oracle::fd_max_error(c.graph, c.inputs(), rng);
            if (e > worst) {
                worst = e;
                worst_op = c.op;
            }
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst <= 1e-4 && secs < 60.0,
            fmt("%zu ops x %d draws, max rel err %.2e (%s), %.1f s", cases.size(), kDraws, worst, worst_op.c_str(),
                secs)};
}

// ---------------------------------------------------------------- identity

Verdict identity_at_init() {
    const BackboneConfig cfg;
    Model model = Model::build(cfg, 3);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    std::vector<Tensor> batches;
    std::vector<Tensor> before_predict, before_tape;
    for (int i = 0; i < 10; ++i) {
        Tensor x({4, cfg.image_h, cfg.image_w, cfg.in_channels});
        for (auto& v : x.data()) {
            v = d(rng);
        }
        before_predict.push_back(model.predict(x));
        Tape<float> tape;
        before_tape.push_back(model.forward(tape, x).value());
        batches.push_back(std::move(x));
    }
    attach(model, AdapterConfig{}, 9);
    std::size_t differing = 0;
    for (int i = 0; i < 10; ++i) {
        const Tensor p = model.predict(batches[i]);
        Tape<float> tape;
        const Tensor t = model.forward(tape, batches[i]).value();
        differing += std::memcmp(p.raw(), before_predict[i].raw(), p.size() * 4) != 0;
        differing += std::memcmp(t.raw(), before_tape[i].raw(), t.size() * 4) != 0;
    }
    return {differing == 0 && model.params().count(Group::adapter) > 0,
            fmt("10 batches, %zu adapter scalars attached, %zu outputs differ bitwise",
                model.params().count(Group::adapter), differing)};
}

// ---------------------------------------------------------------- budget

BackboneConfig tiny_backbone(std::mt19937_64& rng) {
    BackboneConfig c;
    const std::size_t dims[] = {8, 12, 16};
    c.embed_dim = dims[rng() % 3];
    c.num_heads = (c.embed_dim % 4 == 0 && rng() % 2) ? 4 : 2;
    c.num_blocks = 1 + rng() % 3;
    c.mlp_ratio = 2;
    c.patch_size = 8;
    return c;
}

TaskSpec tiny_task(std::uint64_t seed) {
    TaskSpec t = make_task("target", TaskKind::shapes_segmentation, seed);
    t.train_count = 32;
    t.val_count = 8;
    return t;
}

Verdict budget_compliance() {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t runs = 0, rejected = 0, rounds_audited = 0, violations = 0, wrong_rejections = 0;
    std::size_t max_used_pct_x100 = 0;
    const SelectionCriterion crits[] = {SelectionCriterion::accumulated_gradient, SelectionCriterion::random_uniform,
                                        SelectionCriterion::weight_magnitude,
                                        SelectionCriterion::layer_wise_accumulated_gradient};
    while (runs < 200) {
        const BackboneConfig bc = tiny_backbone(rng);
        const Model base = Model::build(bc, rng());
        TrainConfig tc;
        tc.steps = 12 + rng() % 30;
        tc.batch_size = 2;
        tc.seed = rng();
        tc.beta = 0.01 + 0.29 * unit(rng);
        tc.rho = unit(rng);
        tc.one_shot_selection = rng() % 4 == 0;
        tc.step_size = 1 + rng() % (tc.steps - 1);
        tc.criterion = crits[rng() % 4];
        tc.eval_every = tc.steps;
        tc.eval_subset = 4;

        const std::size_t n = base.backbone_param_count();
        const auto ceiling = static_cast<std::size_t>(std::floor(tc.beta * static_cast<double>(n)));
        const auto external = static_cast<std::size_t>(std::floor(tc.rho * tc.beta * static_cast<double>(n)));
        const std::size_t sites = 2 * bc.num_blocks;
        const std::size_t head = bc.embed_dim * bc.num_classes + bc.num_classes;
        const bool feasible = oracle::max_dimension_by_scan(std::min(external, ceiling), bc.embed_dim, sites) > 0;

        bool run_bad = false;
        auto hook = [&](const RoundEvent& ev) {
            ++rounds_audited;
            const std::size_t adapters = ev.model.params().count(Group::adapter);
            const std::size_t by_optimizer = ev.optimizer.trainable_count() - head;
            if (adapters + ev.mask.size() > ceiling || by_optimizer != adapters + ev.mask.size()) {
                run_bad = true;
            }
            max_used_pct_x100 = std::max(max_used_pct_x100, (adapters + ev.mask.size()) * 10000 / std::max<std::size_t>(ceiling, 1));
        };
        try {
            const RunResult r = run_sfa(base, tiny_task(tc.seed), tc, hook);
            if (!feasible) {
                ++wrong_rejections;  // should have been refused
            }
            if (r.report.adapter_params + r.report.mask_params > ceiling) {
                run_bad = true;
            }
            violations += run_bad;
            ++runs;
        } catch (const ConfigError&) {
            ++rejected;
            if (feasible) {
                ++wrong_rejections;
            }
        }
    }

    // solve_dimension against the linear scan, including the infeasible edge.
    std::size_t dim_mismatch = 0, dim_cases = 0;
    for (std::size_t dim : {4u, 8u, 16u, 64u}) {
        for (std::size_t sites : {1u, 2u, 8u}) {
            for (std::size_t budget = 0; budget <= 20000; budget += 1 + budget / 97) {
                ++dim_cases;
                const std::size_t expect = oracle::max_dimension_by_scan(budget, dim, sites);
                std::size_t got = 0;
                try {
                    got = solve_dimension(budget, dim, sites);
                } catch (const ConfigError&) {
                    got = 0;
                }
                dim_mismatch += got != expect;
            }
        }
    }
    return {violations == 0 && wrong_rejections == 0 && dim_mismatch == 0 && rounds_audited > 0,
            fmt("200 runs (%zu infeasible redrawn), %zu rounds audited, %zu over budget, peak use %.2f%% of "
                "ceiling; solve_dimension %zu/%zu match scan",
                rejected, rounds_audited, violations, max_used_pct_x100 / 100.0, dim_cases - dim_mismatch,
                dim_cases)};
}

// ---------------------------------------------------------------- selection

Verdict selection_correctness() {
    std::mt19937_64 rng(99);
    std::size_t pools = 0, rank_mismatch = 0;
    for (; pools < 150; ++pools) {
        const std::size_t n = 1 + rng() % 10000;
        const int levels = 1 + static_cast<int>(rng() % 20);  // few levels -> many ties
        std::vector<float> scores(n);
        std::vector<std::uint8_t> taken(n);
        const double p_taken = static_cast<double>(rng() % 60) / 100.0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<float>(rng() % levels) * 0.25f;
            taken[i] = (static_cast<double>(rng() % 1000) / 1000.0) < p_taken;
        }
        const std::size_t quota = rng() % (n + 5);
        const auto got = rank_select(scores, quota, taken);
        rank_mismatch += got != oracle::brute_select(scores, quota, taken);
    }

    // Engine: disjoint rounds, growing mask, top-k by accumulated score, exact final size.
    std::size_t engines = 0, engine_faults = 0, rounds = 0;
    for (; engines < 30; ++engines) {
        const BackboneConfig bc = tiny_backbone(rng);
        const Model model = Model::build(bc, rng());
        const auto& store = model.params();
        const std::size_t n = model.backbone_param_count();
        const double beta = 0.02 + 0.3 * (static_cast<double>(rng() % 1000) / 1000.0);
        const double rho = static_cast<double>(rng() % 1000) / 1000.0;
        const std::size_t steps = 20 + rng() % 60;
        const auto plan = BudgetPlan::make(beta, rho, n);
        const auto expect_final = static_cast<std::size_t>(std::floor((beta - rho * beta) * static_cast<double>(n)));
        const auto criterion =
            engines % 3 == 0 ? SelectionCriterion::random_uniform : SelectionCriterion::accumulated_gradient;
        SelectionEngine engine(store, SelectionSchedule::periodic(steps, 1 + rng() % (steps / 2)), plan.internal_quota,
                               criterion, rng());
        std::set<std::pair<std::string, std::uint32_t>> seen;
        std::normal_distribution<float> g(0.0f, 1.0f);
        for (std::size_t step = 1; step <= steps; ++step) {
            std::vector<Tensor> grads;
            for (const auto& e : store) {
                Tensor t(e.value.shape());
                for (auto& v : t.data()) {
                    v = std::round(g(rng) * 4.0f) / 4.0f;
                }
                grads.push_back(std::move(t));
            }
            engine.accumulate(GradientMap(std::move(grads)), step);
            if (!engine.schedule().round_at(step)) {
                continue;
            }
            ++rounds;
            const std::vector<float> scores(engine.accumulator().scores().begin(),
                                            engine.accumulator().scores().end());
            const std::vector<std::uint8_t> taken(engine.selected().begin(), engine.selected().end());
            const SelectionMask prev = engine.mask();
            const std::size_t quota = engine.quota_for_round(engine.rounds_done());
            const auto picks = engine.run_round(step, store);
            const auto& pool = engine.pool();
            std::set<std::size_t> picked_pos;
            for (const auto& a : picks) {
                const auto& name = store.entry(a.slot).name;
                engine_faults += !seen.insert({name, a.index}).second;  // picked twice
                engine_faults += prev.contains(name, a.index);
                picked_pos.insert(*pool.position(name, a.index));
            }
            for (const auto& t : prev.tensors()) {
                for (auto i : t.indices) {
                    engine_faults += !engine.mask().contains(t.name, i);  // mask shrank
                }
            }
            engine_faults += engine.mask().size() != prev.size() + picks.size();
            if (criterion == SelectionCriterion::accumulated_gradient) {
                const auto want = oracle::brute_select(scores, quota, taken);
                engine_faults += std::set<std::size_t>(want.begin(), want.end()) != picked_pos;
            }
        }
        engine_faults += engine.mask().size() != expect_final;
    }
    return {rank_mismatch == 0 && engine_faults == 0,
            fmt("rank_select %zu/%zu pools match sort oracle; %zu engines, %zu rounds, %zu faults "
                "(overlap, shrink, top-k, final size)",
                pools - rank_mismatch, pools, engines, rounds, engine_faults)};
}

// ---------------------------------------------------------------- immutability

Verdict frozen_immutability() {
    BackboneConfig toy;
    toy.embed_dim = 16;
    toy.num_blocks = 2;
    toy.num_heads = 2;
    toy.mlp_ratio = 4;
    const Model base = Model::build(toy, 5);
    TrainConfig tc;
    tc.steps = 1000;
    tc.beta = 0.10;
    tc.seed = 3;
    tc.eval_every = 1000;
    TaskSpec task = make_task("target");
    task.train_count = 400;
    task.val_count = 50;
    const RunResult r = run_sfa(base, task, tc);
    const std::uint64_t before = oracle::unselected_hash(base.params(), r.mask);
    const std::uint64_t after = oracle::unselected_hash(r.model.params(), r.mask);

    // The selected scalars must actually have moved, or the check is vacuous.
    std::size_t moved = 0;
    for (const auto& t : r.mask.tensors()) {
        const auto& a = base.params().value(t.name);
        const auto& b = r.model.params().value(t.name);
        for (auto i : t.indices) {
            moved += a[i] != b[i];
        }
    }
    return {before == after && moved > 0,
            fmt("T=1000, mask %zu of %zu; unselected hash %016llx -> %016llx; %zu selected scalars moved",
                r.mask.size(), base.backbone_param_count(), static_cast<unsigned long long>(before),
                static_cast<unsigned long long>(after), moved)};
}

// ---------------------------------------------------------------- desk-scale runs

constexpr int kSeeds = 5;

/// One pretrained base shared by the comparison runs; each run is cached.
class Lab {
public:
    const Model& base() {
        if (!base_) {
            const auto t0 = std::chrono::steady_clock::now();
            base_ = pretrain(BackboneConfig{}, make_task("source"), 3000, 0).model;
            pretrain_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        return *base_;
    }
    double pretrain_seconds() const { return pretrain_seconds_; }

    static TrainConfig config(int seed, double beta) {
        TrainConfig tc;
        tc.steps = 2000;
        tc.seed = static_cast<std::uint64_t>(seed);
        tc.beta = beta;
        tc.eval_every = 2000;
        return tc;
    }

    const RunResult& run(const std::string& key, const std::function<RunResult()>& fn) {
        auto it = runs_.find(key);
        if (it == runs_.end()) {
            it = runs_.emplace(key, fn()).first;
        }
        return it->second;
    }

    const RunResult& sfa(int seed, double beta, const std::string& variant = "default",
                         const std::function<void(TrainConfig&)>& tweak = {}) {
        return run(fmt("sfa/%s/%g/%d", variant.c_str(), beta, seed), [&] {
            auto tc = config(seed, beta);
            if (tweak) {
                tweak(tc);
            }
            return run_sfa(base(), target(), tc);
        });
    }
    const RunResult& baseline(int seed, RunKind kind, double beta, const TaskSpec& task) {
        return run(fmt("%s/%s/%g/%d", run_kind_name(kind).c_str(), task.domain.c_str(), beta, seed),
                   [&] { return run_baseline(base(), task, config(seed, beta), kind); });
    }

    static const TaskSpec& target() {
        static const TaskSpec t = make_task("target");
        return t;
    }
    static const TaskSpec& target_b() {
        static const TaskSpec t = make_task("target_b");
        return t;
    }

    template <class F>
    std::vector<double> over_seeds(F&& f) {
        std::vector<double> out;
        for (int s = 0; s < kSeeds; ++s) {
            out.push_back(f(s).report.final_metric);
        }
        return out;
    }

private:
    std::optional<Model> base_;
    double pretrain_seconds_ = 0.0;
    std::map<std::string, RunResult> runs_;
};

Lab& lab() {
    static Lab l;
    return l;
}

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) {
        s += (s.empty() ? "" : " ") + fmt("%.3f", x);
    }
    return s;
}

Verdict directional_ordering() {
    auto& L = lab();
    const auto t0 = std::chrono::steady_clock::now();
    L.base();
    const auto frozen = L.over_seeds([&](int s) -> const RunResult& {
        return L.baseline(s, RunKind::frozen, 0.05, Lab::target());
    });
    const auto low = L.over_seeds([&](int s) -> const RunResult& { return L.sfa(s, 0.05); });
    const auto high = L.over_seeds([&](int s) -> const RunResult& { return L.sfa(s, 0.20); });
    const auto full = L.over_seeds([&](int s) -> const RunResult& {
        return L.baseline(s, RunKind::full_finetune, 1.0, Lab::target());
    });
    const double f = mean(frozen), a = mean(low), b = mean(high), ff = mean(full);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = f < a && a < b && std::abs(ff - b) <= 0.03 && a - f >= 0.02 && secs <= 1800.0;
    std::printf("        frozen  [%s]\n        sfa .05 [%s]\n        sfa .20 [%s]\n        full    [%s]\n",
                list(frozen).c_str(), list(low).c_str(), list(high).c_str(), list(full).c_str());
    return {ok, fmt("mIoU frozen %.3f < sfa(.05) %.3f < sfa(.20) %.3f; full %.3f (gap %.3f <= 0.03); "
                    "lift %.3f >= 0.02; %.0f s incl. %.0f s pretraining",
                    f, a, b, ff, ff - b, a - f, secs, L.pretrain_seconds())};
}

Verdict dual_adapter_benefit() {
    auto& L = lab();
    const auto both = L.over_seeds([&](int s) -> const RunResult& { return L.sfa(s, 0.05); });
    const auto internal = L.over_seeds([&](int s) -> const RunResult& {
        return L.baseline(s, RunKind::internal_only, 0.05, Lab::target());
    });
    std::printf("        internal+external [%s]\n        internal only     [%s]\n", list(both).c_str(),
                list(internal).c_str());
    return {mean(both) >= mean(internal),
            fmt("beta .05 mIoU internal+external %.3f >= internal-only %.3f", mean(both), mean(internal))};
}

Verdict criterion_ordering() {
    auto& L = lab();
    const auto grad = L.over_seeds([&](int s) -> const RunResult& { return L.sfa(s, 0.05); });
    const auto random = L.over_seeds([&](int s) -> const RunResult& {
        return L.sfa(s, 0.05, "random", [](TrainConfig& c) { c.criterion = SelectionCriterion::random_uniform; });
    });
    std::printf("        accumulated gradient [%s]\n        random uniform       [%s]\n", list(grad).c_str(),
                list(random).c_str());
    return {mean(grad) >= mean(random),
            fmt("beta .05 mIoU accumulated-gradient %.3f >= random %.3f", mean(grad), mean(random))};
}

Verdict step_size_sanity() {
    auto& L = lab();
    const auto multi = L.over_seeds([&](int s) -> const RunResult& { return L.sfa(s, 0.05); });
    const auto once = L.over_seeds([&](int s) -> const RunResult& {
        return L.sfa(s, 0.05, "oneshot", [](TrainConfig& c) { c.one_shot_selection = true; });
    });
    const auto& r = L.sfa(0, 0.05);
    std::printf("        multi-round [%s]\n        one-shot    [%s]\n", list(multi).c_str(), list(once).c_str());
    return {mean(once) < mean(multi), fmt("beta .05 mIoU one-shot %.3f < %zu rounds every %zu steps %.3f",
                                          mean(once), r.report.rounds, r.report.step_size, mean(multi))};
}

Verdict mask_transfer() {
    auto& L = lab();
    std::vector<double> transferred;
    for (int s = 0; s < kSeeds; ++s) {
        const SelectionMask& mask = L.sfa(s, 0.05).mask;
        transferred.push_back(L.run(fmt("transfer/%d", s), [&] {
                                   return adapt_with_mask(L.base(), Lab::target_b(), Lab::config(s, 0.05), mask);
                               }).report.final_metric);
    }
    const auto frozen = L.over_seeds([&](int s) -> const RunResult& {
        return L.baseline(s, RunKind::frozen, 0.05, Lab::target_b());
    });
    std::printf("        transferred mask [%s]\n        frozen           [%s]\n", list(transferred).c_str(),
                list(frozen).c_str());
    return {mean(transferred) > mean(frozen),
            fmt("target_b mIoU with target mask %.3f > frozen %.3f", mean(transferred), mean(frozen))};
}

Verdict storage_claim() {
    auto& L = lab();
    const std::vector<TaskSpec> tasks = {
        make_task("target"), make_task("target_b"), make_task("target", TaskKind::shapes_depth),
        make_task("target_b", TaskKind::shapes_depth), make_task("target", TaskKind::shapes_segmentation, 7)};
    std::size_t delta_bytes = 0, ckpt_bytes = 0, exact = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto tc = Lab::config(static_cast<int>(i), 0.05);
        tc.steps = 300;
        tc.eval_every = 300;
        const RunResult r = run_sfa(L.base(), tasks[i], tc);
        const auto delta = export_delta(r.model, r.mask, L.base());
        const auto full = encode_checkpoint(r.model, nullptr);
        delta_bytes += delta.size();
        ckpt_bytes += full.size();
        const AppliedDelta back = apply_delta(L.base(), delta);
        exact += encode_checkpoint(back.model, nullptr) == full && back.mask == r.mask;
    }
    const double ratio = static_cast<double>(delta_bytes) / static_cast<double>(ckpt_bytes);
    return {ratio < 0.40 && exact == tasks.size(),
            fmt("5 tasks: deltas %zu B vs checkpoints %zu B (ratio %.3f < 0.40); %zu/5 roundtrips bit-exact",
                delta_bytes, ckpt_bytes, ratio, exact)};
}

Verdict determinism() {
    auto& L = lab();
    auto tc = Lab::config(11, 0.10);
    tc.steps = 300;
    tc.eval_every = 300;
    const RunResult a = run_sfa(L.base(), Lab::target(), tc);
    const RunResult b = run_sfa(L.base(), Lab::target(), tc);
    const auto ca = encode_checkpoint(a.model, &a.mask);
    const auto cb = encode_checkpoint(b.model, &b.mask);
    const bool ok = a.mask == b.mask && ca == cb && a.mask.size() > 0;
    return {ok, fmt("two runs: mask %zu == %zu entries (%s), checkpoints %zu B (%s)", a.mask.size(), b.mask.size(),
                    a.mask == b.mask ? "identical" : "DIFFER", ca.size(), ca == cb ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);

    const std::vector<std::pair<const char*, Verdict (*)()>> criteria = {
        {"gradient suite", gradient_suite},
        {"identity at init", identity_at_init},
        {"budget compliance", budget_compliance},
        {"selection correctness", selection_correctness},
        {"frozen immutability", frozen_immutability},
        {"directional ordering", directional_ordering},
        {"dual-adapter benefit", dual_adapter_benefit},
        {"criterion ordering", criterion_ordering},
        {"step-size sanity", step_size_sanity},
        {"mask transfer", mask_transfer},
        {"storage", storage_claim},
        {"determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }

    int failed = 0, ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(id)) {
            continue;
        }
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !v.pass;
        std::printf("[%2d/12] %s  %-22s %s  (%.1f s)\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first,
                    v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("acceptance: %d/%d passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
