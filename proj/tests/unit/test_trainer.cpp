#include <cstring>

#include "doctest.h"
#include "sfa/checkpoint.hpp"
#include "sfa/errors.hpp"
#include "sfa/trainer.hpp"
#include "support/oracles.hpp"

using namespace sfa;

namespace {

BackboneConfig tiny() {
    BackboneConfig c;
    c.embed_dim = 16;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2;
    c.patch_size = 8;
    return c;
}

TaskSpec small_task(const std::string& domain = "target", TaskKind kind = TaskKind::shapes_segmentation) {
    TaskSpec t = make_task(domain, kind);
    t.train_count = 48;
    t.val_count = 12;
    return t;
}

TrainConfig short_run(double beta = 0.2) {
    TrainConfig tc;
    tc.steps = 40;
    tc.batch_size = 4;
    tc.beta = beta;
    tc.seed = 1;
    tc.step_size = 10;
    return tc;
}

std::size_t head_size(const Model& m) { return m.params().count(Group::head); }

}  // namespace

TEST_CASE("SFA run accounting") {
    const Model base = Model::build(tiny(), 0);
    const std::size_t n = base.backbone_param_count();
    const RunResult r = run_sfa(base, small_task(), short_run());
    const auto& rep = r.report;
    CHECK(rep.kind == "sfa");
    CHECK(rep.backbone_params == n);
    CHECK(rep.budget_ceiling == static_cast<std::size_t>(0.2 * static_cast<double>(n)));
    CHECK(rep.adapter_params == r.model.params().count(Group::adapter));
    CHECK(rep.mask_params == r.mask.size());
    CHECK(rep.adapter_params + rep.mask_params <= rep.budget_ceiling);
    CHECK(rep.head_params == head_size(r.model));
    CHECK(rep.rounds == 3);  // floor((40 - 1) / 10)
    CHECK(rep.step_size == 10);
    std::size_t selected = 0;
    for (const auto& l : rep.layers) {
        selected += l.att_selected + l.mlp_selected;
        CHECK(l.att_fraction() == doctest::Approx(double(l.att_selected) / double(l.att_pool)));
    }
    CHECK(selected == r.mask.size());
    CHECK(rep.history.back().step == 40);
    CHECK(rep.final_metric == rep.history.back().metric);
}

TEST_CASE("frozen and full fine-tuning baselines") {
    const Model base = Model::build(tiny(), 0);
    const auto frozen = run_baseline(base, small_task(), short_run(), RunKind::frozen);
    CHECK(frozen.report.backbone_side_trainable() == 0);
    CHECK(frozen.mask.size() == 0);
    for (const auto& l : frozen.report.layers) {
        CHECK(l.att_fraction() == 0.0);
        CHECK(l.mlp_fraction() == 0.0);
    }
    // Backbone untouched.
    for (const auto& e : base.params()) {
        if (is_backbone(e.group)) {
            CHECK(std::memcmp(e.value.raw(), frozen.model.params().value(e.name).raw(), e.value.size() * 4) == 0);
        }
    }
    const auto full = run_baseline(base, small_task(), short_run(), RunKind::full_finetune);
    CHECK(full.report.trainable_total() == base.backbone_param_count() + head_size(full.model));
    CHECK_THROWS_AS(run_baseline(base, small_task(), short_run(), RunKind::sfa), ConfigError);
}

TEST_CASE("internal-only shares the SFA ceiling") {
    const Model base = Model::build(tiny(), 0);
    const auto sfa = run_sfa(base, small_task(), short_run());
    const auto internal = run_baseline(base, small_task(), short_run(), RunKind::internal_only);
    CHECK(internal.report.budget_ceiling == sfa.report.budget_ceiling);
    CHECK(internal.report.adapter_params == 0);
    CHECK(internal.report.mask_params == sfa.report.budget_ceiling);
    const auto external = run_baseline(base, small_task(), short_run(), RunKind::external_only);
    CHECK(external.report.mask_params == 0);
    CHECK(external.report.adapter_params > 0);
    const auto parallel = run_baseline(base, small_task(), short_run(), RunKind::adaptformer_style);
    CHECK(parallel.report.adapter_style == "parallel_scaled");
    CHECK(parallel.report.adapter_params <= parallel.report.budget_ceiling);
}

TEST_CASE("zero budget without adapters degenerates to frozen") {
    const Model base = Model::build(tiny(), 0);
    auto tc = short_run(0.0);
    tc.use_external = false;
    const auto r = run_sfa(base, small_task(), tc);
    CHECK(r.report.kind == "frozen");
    CHECK(r.report.backbone_side_trainable() == 0);
}

TEST_CASE("full budget without adapters selects the whole pool") {
    const Model base = Model::build(tiny(), 0);
    auto tc = short_run(1.0);
    tc.rho = 0.0;
    tc.step_size = 10;
    const auto r = run_sfa(base, small_task(), tc);
    CHECK(r.mask.size() == SelectionPool::build(base.params()).size());
}

TEST_CASE("imported masks pass through unchanged") {
    const Model base = Model::build(tiny(), 0);
    const auto src = run_sfa(base, small_task(), short_run());
    const auto r = adapt_with_mask(base, small_task("target_b"), short_run(), src.mask);
    CHECK(r.mask == src.mask);
    CHECK(r.report.trainable_total() == src.mask.size() + r.report.adapter_params + r.report.head_params);
    CHECK(oracle::unselected_hash(base.params(), r.mask) == oracle::unselected_hash(r.model.params(), r.mask));

    SelectionMask bogus;
    bogus.add_tensor({"blocks.0.att.wq", {999999}, {0}});
    CHECK_THROWS(adapt_with_mask(base, small_task(), short_run(), bogus));
}

TEST_CASE("run_sfa is deterministic") {
    const Model base = Model::build(tiny(), 0);
    const auto a = run_sfa(base, small_task(), short_run());
    const auto b = run_sfa(base, small_task(), short_run());
    CHECK(a.mask == b.mask);
    CHECK(encode_checkpoint(a.model, &a.mask) == encode_checkpoint(b.model, &b.mask));
    auto other = short_run();
    other.seed = 2;
    CHECK_FALSE(run_sfa(base, small_task(), other).mask == a.mask);
}

TEST_CASE("depth tasks train a one-channel regression head") {
    const Model base = Model::build(tiny(), 0);
    const auto r = run_sfa(base, small_task("target", TaskKind::shapes_depth), short_run());
    CHECK(r.report.metric_name == "rmse");
    CHECK(r.model.params().value("head.weight").shape() == Shape{16, 1});
    CHECK(r.report.final_metric >= 0.0);
}

TEST_CASE("pretraining") {
    SUBCASE("zero steps returns the initialisation") {
        const auto p = pretrain(tiny(), small_task("source"), 0, 3);
        CHECK(encode_checkpoint(p.model, nullptr) == encode_checkpoint(Model::build(tiny(), 3), nullptr));
        CHECK(p.final_metric == p.initial_metric);
    }
    SUBCASE("beats the untrained model on average") {
        TaskSpec src = make_task("source");
        src.train_count = 200;
        src.val_count = 40;
        double before = 0.0, after = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto p = pretrain(tiny(), src, 150, seed);
            before += p.initial_metric;
            after += p.final_metric;
        }
        CHECK(after > before);
    }
}

TEST_CASE("invalid training configs are rejected") {
    const Model base = Model::build(tiny(), 0);
    auto tc = short_run();
    tc.steps = 0;
    CHECK_THROWS_AS(run_sfa(base, small_task(), tc), ConfigError);
    tc = short_run();
    tc.beta = 1.5;
    CHECK_THROWS_AS(run_sfa(base, small_task(), tc), ConfigError);
    tc = short_run(0.01);  // external share too small for a single adapter width
    CHECK_THROWS_AS(run_sfa(base, small_task(), tc), ConfigError);
    tc = short_run();
    tc.middle_dim = 500;  // larger than the budget allows
    CHECK_THROWS_AS(run_sfa(base, small_task(), tc), ConfigError);
}
