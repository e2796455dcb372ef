#include <random>
#include <set>

#include "doctest.h"
#include "sfa/backbone.hpp"
#include "sfa/budget.hpp"
#include "sfa/errors.hpp"
#include "sfa/selection.hpp"
#include "support/oracles.hpp"

using namespace sfa;

namespace {

BackboneConfig one_block() {
    BackboneConfig c;
    c.embed_dim = 8;
    c.num_blocks = 1;
    c.num_heads = 2;
    c.mlp_ratio = 4;
    c.num_classes = 3;
    return c;
}

GradientMap constant_grads(const ParameterStore& store, float v) {
    std::vector<Tensor> g;
    for (const auto& e : store) {
        g.emplace_back(e.value.shape(), v);
    }
    return GradientMap(std::move(g));
}

}  // namespace

TEST_CASE("pool covers attention and MLP scalars only") {
    const Model m = Model::build(one_block(), 1);
    const auto pool = SelectionPool::build(m.params());
    CHECK(pool.size() == 840);
    for (const auto& seg : pool.segments()) {
        CHECK((seg.group == Group::backbone_att || seg.group == Group::backbone_mlp));
        CHECK(seg.layer == 0);
    }
    const auto again = SelectionPool::build(Model::build(one_block(), 2).params());
    REQUIRE(again.segments().size() == pool.segments().size());
    for (std::size_t i = 0; i < pool.segments().size(); ++i) {
        CHECK(again.segments()[i].name == pool.segments()[i].name);
        CHECK(again.segments()[i].offset == pool.segments()[i].offset);
    }
    CHECK_THROWS(SelectionPool::build(ParameterStore{}));
}

TEST_CASE("schedule arithmetic") {
    const auto p = SelectionSchedule::periodic(2000, 400);
    CHECK(p.round_steps == std::vector<std::size_t>{400, 800, 1200, 1600});
    CHECK(SelectionSchedule::periodic(2001, 400).rounds == 5);
    for (auto s : SelectionSchedule::periodic(101, 25).round_steps) {
        CHECK(s < 101);
    }
    const auto once = SelectionSchedule::one_shot(2000);
    CHECK(once.round_steps == std::vector<std::size_t>{1});
    CHECK(SelectionSchedule::default_step_size(2000) == 400);
    CHECK(SelectionSchedule::default_step_size(100) == 50);
    CHECK(p.round_at(800) == 1u);
    CHECK_FALSE(p.round_at(801).has_value());
}

TEST_CASE("round quotas fold the remainder into the last round") {
    CHECK(round_quotas(10, 4) == std::vector<std::size_t>{2, 2, 2, 4});
    CHECK(round_quotas(3, 5) == std::vector<std::size_t>{0, 0, 0, 0, 3});
}

TEST_CASE("rank_select small cases") {
    const std::vector<float> scores = {0.9f, 0.5f, 0.5f, 0.1f};
    const std::vector<std::uint8_t> taken = {1, 0, 0, 0};
    CHECK(rank_select(scores, 2, taken) == std::vector<std::size_t>{1, 2});
    CHECK(rank_select(scores, 0, taken).empty());
    CHECK(rank_select(scores, 10, taken).size() == 3);
}

TEST_CASE("rank_select matches the sort oracle on random pools") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t n = 1 + rng() % 3000;
        std::vector<float> s(n);
        std::vector<std::uint8_t> t(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<float>(rng() % 7);
            t[i] = rng() % 5 == 0;
        }
        const std::size_t q = rng() % (n + 3);
        CHECK(rank_select(s, q, t) == oracle::brute_select(s, q, t));
    }
}

TEST_CASE("ranking is invariant to positive score scaling") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    std::vector<float> s(500), scaled(500);
    std::vector<std::uint8_t> t(500);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = d(rng);
        scaled[i] = s[i] * 8.0f;  // power of two keeps ordering exact
        t[i] = rng() % 6 == 0;
    }
    CHECK(rank_select(s, 40, t) == rank_select(scaled, 40, t));
}

TEST_CASE("accumulator sums magnitudes and skips selected scalars") {
    const Model m = Model::build(one_block(), 1);
    const auto pool = SelectionPool::build(m.params());
    ScoreAccumulator acc(pool.size());
    std::vector<std::uint8_t> sel(pool.size());
    sel[3] = 1;
    acc.accumulate(pool, constant_grads(m.params(), -0.5f), sel, 1);
    acc.accumulate(pool, constant_grads(m.params(), 0.25f), sel, 2);
    CHECK(acc.scores()[0] == doctest::Approx(0.75));
    CHECK(acc.scores()[3] == 0.0f);
    acc.reset();
    for (float v : acc.scores()) {
        CHECK(v == 0.0f);
    }
    CHECK_THROWS_AS(acc.accumulate(pool, constant_grads(m.params(), NAN), sel, 7), DivergenceError);
}

TEST_CASE("engine rounds are disjoint, cumulative and exact in size") {
    const Model m = Model::build(one_block(), 1);
    const auto plan = BudgetPlan::make(0.2, 0.5, m.backbone_param_count());
    for (auto crit : {SelectionCriterion::accumulated_gradient, SelectionCriterion::random_uniform,
                      SelectionCriterion::weight_magnitude}) {
        SelectionEngine engine(m.params(), SelectionSchedule::periodic(100, 20), plan.internal_quota, crit, 3);
        std::mt19937_64 rng(1);
        std::normal_distribution<float> g;
        std::size_t prev = 0;
        for (std::size_t step = 1; step <= 100; ++step) {
            std::vector<Tensor> grads;
            for (const auto& e : m.params()) {
                Tensor t(e.value.shape());
                for (auto& v : t.data()) {
                    v = g(rng);
                }
                grads.push_back(std::move(t));
            }
            engine.accumulate(GradientMap(std::move(grads)), step);
            if (engine.schedule().round_at(step)) {
                const SelectionMask before = engine.mask();
                const auto picks = engine.run_round(step, m.params());
                for (const auto& a : picks) {
                    CHECK_FALSE(before.contains(m.params().entry(a.slot).name, a.index));
                }
                CHECK(engine.mask().size() == prev + picks.size());
                prev = engine.mask().size();
                for (float v : engine.accumulator().scores()) {
                    REQUIRE(v == 0.0f);
                }
            } else {
                CHECK_THROWS_AS(engine.run_round(step, m.params()), std::logic_error);
            }
        }
        CHECK(engine.mask().size() == plan.internal_quota);
    }
}

TEST_CASE("layer-wise criterion splits each quota evenly and drops the surplus") {
    BackboneConfig c = one_block();
    c.num_blocks = 3;
    const Model m = Model::build(c, 1);
    SelectionEngine engine(m.params(), SelectionSchedule::periodic(30, 10), 100,
                           SelectionCriterion::layer_wise_accumulated_gradient, 1);
    // Quotas 50 and 50 over 3 layers -> 16 per layer per round.
    for (std::size_t step = 1; step < 30; ++step) {
        engine.accumulate(constant_grads(m.params(), 1.0f), step);
        if (engine.schedule().round_at(step)) {
            const auto picks = engine.run_round(step, m.params());
            std::vector<std::size_t> per_layer(3);
            for (const auto& a : picks) {
                ++per_layer[static_cast<std::size_t>(m.block_of(a.slot))];
            }
            CHECK(per_layer == std::vector<std::size_t>{16, 16, 16});
        }
    }
    CHECK(engine.mask().size() == 96);
}

TEST_CASE("random criterion depends on the seed only") {
    const Model m = Model::build(one_block(), 1);
    auto run = [&](std::uint64_t seed) {
        SelectionEngine e(m.params(), SelectionSchedule::periodic(10, 5), 30, SelectionCriterion::random_uniform,
                          seed);
        for (std::size_t s = 1; s <= 5; ++s) {
            e.accumulate(constant_grads(m.params(), static_cast<float>(s)), s);
        }
        e.run_round(5, m.params());
        return e.mask();
    };
    CHECK(run(1) == run(1));
    CHECK_FALSE(run(1) == run(2));
}

TEST_CASE("mask bookkeeping") {
    const Model m = Model::build(one_block(), 1);
    auto mask = SelectionMask::for_pool(SelectionPool::build(m.params()));
    const std::pair<std::string_view, std::uint32_t> picks[] = {{"blocks.0.att.wq", 5}, {"blocks.0.att.wq", 2}};
    mask.add_round(0, picks);
    CHECK(mask.size() == 2);
    CHECK(mask.find("blocks.0.att.wq")->indices == std::vector<std::uint32_t>{2, 5});
    CHECK(mask.contains("blocks.0.att.wq", 5));
    const std::pair<std::string_view, std::uint32_t> again[] = {{"blocks.0.att.wq", 5}};
    CHECK_THROWS(mask.add_round(1, again));
}

TEST_CASE("budget plan") {
    const auto p = BudgetPlan::make(0.10, 0.5, 100000);
    CHECK(p.beta_e == doctest::Approx(0.05));
    CHECK(p.beta_i == doctest::Approx(0.05));
    CHECK(p.beta_e + p.beta_i == 0.10);
    CHECK(p.total_quota == 10000);
    CHECK(p.external_quota + p.internal_quota <= p.total_quota);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const auto q = BudgetPlan::make(u(rng), u(rng), 1 + rng() % 1000000);
        CHECK(q.external_quota + q.internal_quota <= q.total_quota);
    }
    CHECK_THROWS_AS(BudgetPlan::make(1.5, 0.5, 10), ConfigError);
    CHECK_THROWS_AS(BudgetPlan::make(0.1, -0.1, 10), ConfigError);
}
