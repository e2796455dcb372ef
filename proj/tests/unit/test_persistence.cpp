#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sfa/checkpoint.hpp"
#include "sfa/config.hpp"
#include "sfa/delta.hpp"
#include "sfa/errors.hpp"
#include "sfa/io.hpp"
#include "sfa/reports.hpp"
#include "sfa/trainer.hpp"

using namespace sfa;
namespace fs = std::filesystem;

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

TaskSpec small_task(const std::string& domain = "target") {
    TaskSpec t = make_task(domain);
    t.train_count = 48;
    t.val_count = 12;
    return t;
}

TrainConfig short_run(double beta = 0.2) {
    TrainConfig tc;
    tc.steps = 30;
    tc.batch_size = 4;
    tc.beta = beta;
    tc.step_size = 10;
    return tc;
}

const Model& base() {
    static const Model m = Model::build(tiny(), 0);
    return m;
}

const RunResult& adapted() {
    static const RunResult r = run_sfa(base(), small_task(), short_run());
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sfa_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("checkpoint save, load, save is byte-identical") {
    const auto dir = scratch("ckpt");
    const auto& r = adapted();
    save_checkpoint(dir / "a.ckpt", r.model, &r.mask);
    const auto loaded = load_checkpoint(dir / "a.ckpt");
    REQUIRE(loaded.mask.has_value());
    CHECK(*loaded.mask == r.mask);
    save_checkpoint(dir / "b.ckpt", loaded.model, &*loaded.mask);
    CHECK(io::read_file(dir / "a.ckpt") == io::read_file(dir / "b.ckpt"));
    for (const auto& e : r.model.params()) {
        CHECK(loaded.model.params().entry(*loaded.model.params().find(e.name)).group == e.group);
    }
    CHECK(loaded.body_hash == body_hash(r.model.params()));
    fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are refused with a useful message") {
    const auto bytes = encode_checkpoint(base(), nullptr);

    SUBCASE("truncation names the tensor it cuts into") {
        const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 100);
        try {
            decode_checkpoint(cut);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("head.") != std::string::npos);
        }
    }
    SUBCASE("flipped body byte fails the hash") {
        auto bad = bytes;
        bad[bad.size() - 3] ^= 0x40;
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
    SUBCASE("wrong magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
    SUBCASE("unsupported version") {
        std::string s(bytes.begin(), bytes.end());
        const auto at = s.find("\"format_version\":1");
        REQUIRE(at != std::string::npos);
        s[at + 17] = '7';
        CHECK_THROWS_WITH_AS(decode_checkpoint(std::vector<std::uint8_t>(s.begin(), s.end())),
                             doctest::Contains("format_version"), FormatError);
    }
}

TEST_CASE("delta roundtrip is bit-exact") {
    const auto& r = adapted();
    const auto delta = export_delta(r.model, r.mask, base());
    const auto back = apply_delta(base(), delta);
    CHECK(back.mask == r.mask);
    CHECK(encode_checkpoint(back.model, &back.mask) == encode_checkpoint(r.model, &r.mask));

    const auto st = delta_stats(delta);
    CHECK(st.mask_entries == r.mask.size());
    CHECK(st.dense_scalars == r.model.params().count(Group::adapter) + r.model.params().count(Group::head));
    // Each mask entry costs a u32 index, an f32 value and a u16 round.
    CHECK(st.body_bytes == r.mask.size() * 10 + st.dense_scalars * 4);
}

TEST_CASE("delta compactness stays within format overhead") {
    // Desk-scale backbone: on toy models the fixed headers dominate.
    const Model big = Model::build(BackboneConfig{}, 0);
    auto tc = short_run(0.05);
    const RunResult r = run_sfa(big, small_task(), tc);
    const auto delta = export_delta(r.model, r.mask, big);
    const auto full = encode_checkpoint(r.model, nullptr);
    const double payload = static_cast<double>(r.mask.size() + r.model.params().count(Group::adapter) +
                                               r.model.params().count(Group::head));
    const double ratio_bound = payload / static_cast<double>(r.model.params().count_all());
    const double ratio = static_cast<double>(delta.size()) / static_cast<double>(full.size());
    CHECK(ratio <= ratio_bound + 0.10);
}

TEST_CASE("empty mask delta holds only dense sections") {
    const auto frozen = run_baseline(base(), small_task(), short_run(), RunKind::frozen);
    const auto delta = export_delta(frozen.model, frozen.mask, base());
    const auto st = delta_stats(delta);
    CHECK(st.mask_entries == 0);
    CHECK(st.dense_scalars == frozen.model.params().count(Group::head));
}

TEST_CASE("delta refuses a wrong base and unmasked drift") {
    const auto& r = adapted();
    const auto delta = export_delta(r.model, r.mask, base());
    const Model other = Model::build(tiny(), 1);
    CHECK_THROWS_AS(apply_delta(other, delta), FormatError);

    Model drifted = r.model;
    drifted.params().value("blocks.0.norm1.gamma")[0] += 1.0f;
    CHECK_THROWS_AS(export_delta(drifted, r.mask, base()), std::invalid_argument);
}

TEST_CASE("config JSON roundtrip and strictness") {
    ExperimentConfig c;
    c.backbone = tiny();
    c.target = small_task("target_b");
    c.train.beta = 0.07;
    c.train.criterion = SelectionCriterion::weight_magnitude;
    c.pretrain_steps = 123;
    CHECK(parse_config(config_to_json(c)) == c);
    CHECK(parse_config("{}") == ExperimentConfig{});
    CHECK_THROWS_AS(parse_config(R"({"train": {"betta": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"beta": "high"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    CHECK(task_from_json_text(task_to_json_text(c.target)) == c.target);
}

TEST_CASE("report JSON and CSV contracts") {
    const auto& r = adapted();
    const RunReport back = report_from_json(report_to_json(r.report));
    CHECK(back.mask_params == r.report.mask_params);
    CHECK(back.history.size() == r.report.history.size());
    CHECK(back.layers.size() == r.report.layers.size());
    CHECK(history_csv(r.report).starts_with("step,loss,metric,trainable_count\n"));

    std::vector<RunReport> rows;
    for (double beta : {0.2, 0.05, 0.1, 0.05}) {
        RunReport x = r.report;
        x.beta = beta;
        x.final_metric = beta;
        rows.push_back(x);
    }
    const auto summary = summarize(rows, SweepAxis::beta);
    REQUIRE(summary.size() == 3);
    CHECK(summary[0].sort_key < summary[1].sort_key);
    CHECK(summary[1].sort_key < summary[2].sort_key);
    CHECK(summary[0].runs == 2);
    CHECK(summary[0].metric_std == 0.0);
    CHECK_THROWS(parse_sweep_axis("nope"));
}

#ifdef SFA_CLI_PATH

namespace {

int cli(const std::string& args) {
    const std::string cmd = std::string(SFA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("CLI exit codes and outputs") {
    const auto dir = scratch("cli");
    ExperimentConfig c;
    c.backbone = tiny();
    c.source = small_task("source");
    c.target = small_task("target");
    c.train.steps = 20;
    c.train.batch_size = 4;
    c.train.step_size = 5;
    c.pretrain_steps = 10;
    {
        std::ofstream(dir / "cfg.json") << config_to_json(c);
    }
    const std::string cfg = "--config " + (dir / "cfg.json").string();

    CHECK(cli("selftest --draws 2") == 0);
    CHECK(cli("") == 2);
    CHECK(cli("frobnicate") == 2);
    CHECK(cli("adapt --base /no/such/file") == 2);
    std::ofstream(dir / "bad.json") << R"({"train": {"beta": 3}})";
    CHECK(cli("pretrain --config " + (dir / "bad.json").string()) == 2);

    REQUIRE(cli("pretrain " + cfg + " --out " + (dir / "base").string()) == 0);
    const std::string base_flag = " --base " + (dir / "base" / "model.ckpt").string();
    CHECK(fs::exists(dir / "base" / "report.json"));

    REQUIRE(cli("adapt " + cfg + base_flag + " --beta 0.2 --out " + (dir / "sfa").string()) == 0);
    for (const char* f : {"report.json", "history.csv", "layers.csv", "model.ckpt", "delta.sfad"}) {
        CHECK(fs::exists(dir / "sfa" / f));
    }
    CHECK(cli("eval" + base_flag + " --delta " + (dir / "sfa" / "delta.sfad").string() + " " + cfg) == 0);
    CHECK(cli("eval --checkpoint " + (dir / "sfa" / "model.ckpt").string() + " " + cfg) == 0);
    const std::string donor = " --mask-from " + (dir / "sfa" / "model.ckpt").string();
    CHECK(cli("transfer-mask " + cfg + base_flag + donor + " --beta 0.2 --task target_b --out " +
              (dir / "transfer").string()) == 0);
    // The same mask does not fit a smaller budget.
    CHECK(cli("transfer-mask " + cfg + base_flag + donor + " --beta 0.05 --out " + (dir / "x").string()) == 2);

    REQUIRE(cli("adapt " + cfg + base_flag + " --beta 0 --no-external --out " + (dir / "zero").string()) == 0);
    const RunReport zero = report_from_json(slurp(dir / "zero" / "report.json"));
    CHECK(zero.kind == "frozen");

    CHECK(cli("baseline " + cfg + base_flag + " --kind frozen --out " + (dir / "frozen").string()) == 0);
    CHECK(cli("baseline " + cfg + base_flag + " --kind sideways --out " + (dir / "x").string()) == 2);
    // A delta against the wrong base is a run failure, not a usage error.
    CHECK(cli("eval --base " + (dir / "sfa" / "model.ckpt").string() + " --delta " +
              (dir / "sfa" / "delta.sfad").string() + " " + cfg) == 1);

    REQUIRE(cli("sweep budget " + cfg + base_flag + " --seeds 1 --out " + (dir / "sweep").string()) == 0);
    const std::string csv = slurp(dir / "sweep" / "budget.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 6 budgets
    CHECK(csv.find("\n0.01,") != std::string::npos);

    CHECK(cli("report --runs " + (dir / "sweep").string()) == 0);
    fs::remove_all(dir);
}

#endif
