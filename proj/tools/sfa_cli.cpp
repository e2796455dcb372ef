// Command-line front end: pretraining, adaptation runs, baselines, mask
// transfer, evaluation, sweeps, self-tests and report aggregation.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sfa/budget.hpp"
#include "sfa/checkpoint.hpp"
#include "sfa/config.hpp"
#include "sfa/delta.hpp"
#include "sfa/errors.hpp"
#include "sfa/gradcheck.hpp"
#include "sfa/io.hpp"
#include "sfa/reports.hpp"
#include "sfa/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfa;

namespace {

/// Flags shared by every training subcommand; unset flags leave the config alone.
struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> beta;
    std::optional<double> rho;
    std::optional<std::size_t> step_size;
    std::optional<std::size_t> steps;
    std::optional<std::string> criterion;
    std::optional<std::string> task;
    std::string out = "runs/out";
    bool no_external = false;
    bool no_internal = false;
    bool one_shot = false;

    void add_to(CLI::App* app, bool with_selection = true) {
        app->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "run seed");
        app->add_option("--steps", steps, "training steps T");
        app->add_option("--task", task, "task as domain[:kind], e.g. target or target_b:depth");
        app->add_option("--out", out, "output directory")->capture_default_str();
        if (with_selection) {
            app->add_option("--beta", beta, "total budget fraction")->check(CLI::Range(0.0, 1.0));
            app->add_option("--rho", rho, "external share of the budget")->check(CLI::Range(0.0, 1.0));
            app->add_option("--step-size", step_size, "selection step size s (0 = default)");
            app->add_option("--criterion", criterion,
                            "accumulated_gradient | random_uniform | weight_magnitude | layer_wise_accumulated_gradient");
            app->add_flag("--no-external", no_external, "disable external adapters");
            app->add_flag("--no-internal", no_internal, "disable internal selection");
            app->add_flag("--one-shot", one_shot, "single selection round at step 1");
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
        auto& t = c.train;
        if (seed) {
            t.seed = *seed;
        }
        if (beta) {
            t.beta = *beta;
        }
        if (rho) {
            t.rho = *rho;
        }
        if (step_size) {
            t.step_size = *step_size;
        }
        if (steps) {
            t.steps = *steps;
        }
        if (criterion) {
            t.criterion = parse_criterion(*criterion);
        }
        if (task) {
            c.target = parse_task_flag(*task, c.target);
        }
        t.use_external = t.use_external && !no_external;
        t.use_internal = t.use_internal && !no_internal;
        t.one_shot_selection = t.one_shot_selection || one_shot;
        t.validate();
        return c;
    }

    static TaskSpec parse_task_flag(const std::string& flag, const TaskSpec& like) {
        const auto colon = flag.find(':');
        const std::string domain = flag.substr(0, colon);
        const TaskKind kind = colon == std::string::npos ? like.kind : parse_task_kind(flag.substr(colon + 1));
        TaskSpec t = make_task(domain, kind, like.seed);
        t.train_count = like.train_count;
        t.val_count = like.val_count;
        t.num_classes = like.num_classes;
        return t;
    }
};

Model load_base(const std::string& path) {
    auto ck = load_checkpoint(path);
    if (ck.model.adapter()) {
        throw ConfigError("'" + path + "' already carries adapters; pass a pretrained base checkpoint");
    }
    return std::move(ck.model);
}

void print_summary(const RunReport& r) {
    std::printf("%s on %s: %s %.4f -> %.4f | backbone-side trainable %zu / budget %zu (adapters %zu, mask %zu), head %zu, "
                "%.1fs\n",
                r.kind.c_str(), r.task.c_str(), r.metric_name.c_str(), r.initial_metric, r.final_metric,
                r.backbone_side_trainable(), r.budget_ceiling, r.adapter_params, r.mask_params, r.head_params,
                r.wall_seconds);
}

void write_run(const fs::path& dir, const RunResult& res, const Model& base) {
    write_run_reports(dir, res.report);
    save_checkpoint(dir / "model.ckpt", res.model, &res.mask);
    if (res.report.dense_backbone_params == 0) {
        save_delta(dir / "delta.sfad", res.model, res.mask, base);
    }
}

int cmd_pretrain(const RunFlags& f) {
    ExperimentConfig c = f.resolve();
    if (f.task) {
        c.source = RunFlags::parse_task_flag(*f.task, c.source);
    }
    const std::size_t steps = f.steps ? *f.steps : c.pretrain_steps;
    const std::uint64_t seed = f.seed ? *f.seed : c.pretrain_seed;
    auto p = pretrain(c.backbone, c.source, steps, seed, c.train.optimizer, c.train.batch_size);
    const fs::path out(f.out);
    save_checkpoint(out / "model.ckpt", p.model);
    RunReport r;
    r.kind = "pretrain";
    r.task = c.source.domain + "/" + task_kind_name(c.source.kind);
    r.metric_name = p.model.config().head_kind == HeadKind::segmentation ? "miou" : "rmse";
    r.initial_metric = p.initial_metric;
    r.final_metric = p.final_metric;
    r.history = p.history;
    r.seed = seed;
    r.backbone_params = p.model.backbone_param_count();
    r.dense_backbone_params = r.backbone_params;
    r.head_params = p.model.params().count(Group::head);
    write_run_reports(out, r);
    std::printf("pretrained %zu steps on %s: %s %.4f -> %.4f; checkpoint %s\n", steps, r.task.c_str(),
                r.metric_name.c_str(), r.initial_metric, r.final_metric, (out / "model.ckpt").c_str());
    return 0;
}

int cmd_adapt(const RunFlags& f, const std::string& base_path, std::optional<RunKind> baseline) {
    const ExperimentConfig c = f.resolve();
    const Model base = load_base(base_path);
    RunResult res = baseline ? run_baseline(base, c.target, c.train, *baseline) : run_sfa(base, c.target, c.train);
    write_run(f.out, res, base);
    print_summary(res.report);
    return 0;
}

int cmd_transfer(const RunFlags& f, const std::string& base_path, const std::string& mask_path) {
    const ExperimentConfig c = f.resolve();
    const Model base = load_base(base_path);
    const auto donor = load_checkpoint(mask_path);
    if (!donor.mask) {
        throw ConfigError("'" + mask_path + "' holds no selection mask");
    }
    RunResult res = adapt_with_mask(base, c.target, c.train, *donor.mask);
    write_run(f.out, res, base);
    print_summary(res.report);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& base_path, const std::string& delta_path,
             const std::optional<std::string>& task_flag, const std::string& config) {
    const ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
    std::optional<Model> model;
    if (!ckpt.empty()) {
        model = load_checkpoint(ckpt).model;
    } else if (!base_path.empty() && !delta_path.empty()) {
        model = load_and_apply_delta(delta_path, load_checkpoint(base_path).model).model;
    } else {
        throw ConfigError("eval needs --checkpoint, or --base together with --delta");
    }
    TaskSpec task = task_flag ? RunFlags::parse_task_flag(*task_flag, c.target) : c.target;
    const auto& bc = model->config();
    task.kind = bc.head_kind == HeadKind::segmentation ? TaskKind::shapes_segmentation : TaskKind::shapes_depth;
    if (bc.head_kind == HeadKind::segmentation) {
        task.num_classes = bc.num_classes;
    }
    const Metrics m = evaluate(*model, make_val_set(task));
    std::printf("%s %.6f on %s (%zu val samples)\n", m.name.c_str(), m.value, task.domain.c_str(), task.val_count);
    return 0;
}

int cmd_sweep(const RunFlags& f, const std::string& axis_name, const std::string& base_path, std::size_t seeds,
              std::vector<double> values) {
    const SweepAxis axis = parse_sweep_axis(axis_name);
    const ExperimentConfig c = f.resolve();
    const Model base = load_base(base_path);
    if (values.empty()) {
        switch (axis) {
        case SweepAxis::beta: values = {0.01, 0.02, 0.05, 0.10, 0.15, 0.20}; break;
        case SweepAxis::middle_dim: values = {1, 2, 4, 8, 16}; break;
        case SweepAxis::step_size: values = {0, 50, 100, 200, 400}; break;
        case SweepAxis::criterion: values = {0, 1, 2, 3}; break;
        }
    }
    static const SelectionCriterion criteria[] = {
        SelectionCriterion::accumulated_gradient, SelectionCriterion::random_uniform,
        SelectionCriterion::weight_magnitude, SelectionCriterion::layer_wise_accumulated_gradient};
    std::vector<RunReport> reports;
    const fs::path out(f.out);
    for (double v : values) {
        for (std::size_t s = 0; s < seeds; ++s) {
            TrainConfig t = c.train;
            t.seed = c.train.seed + s;
            std::string tag;
            switch (axis) {
            case SweepAxis::beta: t.beta = v; tag = "beta_" + std::to_string(v); break;
            case SweepAxis::middle_dim:
                // Fixed d; internal selection keeps its own share.
                t.middle_dim = static_cast<std::size_t>(v);
                tag = "dim_" + std::to_string(t.middle_dim);
                break;
            case SweepAxis::step_size:
                t.one_shot_selection = v == 0;
                t.step_size = static_cast<std::size_t>(v);
                tag = "s_" + std::to_string(t.step_size);
                break;
            case SweepAxis::criterion:
                if (v < 0 || v > 3) {
                    throw ConfigError("criterion sweep values are indices 0..3");
                }
                t.criterion = criteria[static_cast<int>(v)];
                tag = criterion_name(t.criterion);
                break;
            }
            RunResult res = [&] {
                try {
                    return run_sfa(base, c.target, t);
                } catch (const ConfigError& e) {
                    if (axis != SweepAxis::beta || !t.use_external) {
                        throw;
                    }
                    // Budget below one minimal adapter set: spend it all on selection.
                    std::fprintf(stderr, "beta %.3f: %s; running without external adapters\n", v, e.what());
                    t.use_external = false;
                    t.rho = 0.0;
                    return run_sfa(base, c.target, t);
                }
            }();
            write_run_reports(out / tag / ("seed_" + std::to_string(t.seed)), res.report);
            print_summary(res.report);
            reports.push_back(std::move(res.report));
        }
    }
    const std::string file = sweep_axis_name(axis) + ".csv";
    write_text(out / file, sweep_csv(reports, axis));
    std::printf("wrote %s\n", (out / file).c_str());
    return 0;
}

int cmd_selftest(std::size_t draws) {
    bool ok = true;
    std::printf("%-22s %6s %8s %12s\n", "op", "draws", "scalars", "max_rel_err");
    for (const auto& r : gradcheck_all(draws, 7)) {
        const bool pass = r.max_error <= kGradCheckTolerance;
        ok = ok && pass;
        std::printf("%-22s %6zu %8zu %12.3e %s\n", r.op.c_str(), r.draws, r.scalars_checked, r.max_error,
                    pass ? "ok" : "FAIL");
    }

    auto check = [&](const char* name, bool pass) {
        ok = ok && pass;
        std::printf("%-48s %s\n", name, pass ? "ok" : "FAIL");
    };
    BackboneConfig bc;
    bc.embed_dim = 16;
    bc.num_blocks = 2;
    const Model plain = Model::build(bc, 3);
    Model adapted = plain;
    attach(adapted, AdapterConfig{4}, 5);
    auto task = make_task("target");
    task.train_count = 4;
    task.val_count = 4;
    const Tensor imgs = make_train_set(task).images;
    check("zero-init adapters leave outputs bit-identical", plain.predict(imgs).bit_equal(adapted.predict(imgs)));

    const auto plan = BudgetPlan::make(0.1, 0.5, plain.backbone_param_count());
    check("budget split sums to beta", plan.beta_e + plan.beta_i == plan.beta &&
                                           plan.external_quota + plan.internal_quota <= plan.total_quota);

    const auto bytes = encode_checkpoint(adapted);
    check("checkpoint save/load/save is byte-identical", encode_checkpoint(decode_checkpoint(bytes).model) == bytes);

    TrainConfig t;
    t.steps = 6;
    t.step_size = 2;
    t.batch_size = 2;
    t.beta = 0.2;
    t.eval_subset = 4;
    const auto res = run_sfa(plain, task, t);
    check("budget respected after selection",
          res.report.backbone_side_trainable() <= res.report.budget_ceiling);
    const auto delta = export_delta(res.model, res.mask, plain);
    const auto applied = apply_delta(plain, delta);
    check("delta roundtrip reproduces the adapted model",
          encode_checkpoint(applied.model, &applied.mask) == encode_checkpoint(res.model, &res.mask));
    std::printf("selftest %s\n", ok ? "passed" : "FAILED");
    return ok ? 0 : 1;
}

int cmd_report(const std::string& runs, const std::string& out) {
    std::vector<RunReport> reports;
    for (const auto& e : fs::recursive_directory_iterator(runs)) {
        if (e.is_regular_file() && e.path().filename() == "report.json") {
            const auto bytes = io::read_file(e.path());
            RunReport r = report_from_json(std::string(bytes.begin(), bytes.end()));
            if (r.kind != "pretrain") {
                write_text(e.path().parent_path() / "layers.csv", layer_csv(r));
                reports.push_back(std::move(r));
            }
        }
    }
    if (reports.empty()) {
        throw ConfigError("no run reports found under '" + runs + "'");
    }
    std::sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
        return std::tie(a.beta, a.kind, a.seed) < std::tie(b.beta, b.kind, b.seed);
    });
    const fs::path dir(out.empty() ? runs : out);
    for (auto axis : {SweepAxis::beta, SweepAxis::middle_dim, SweepAxis::step_size, SweepAxis::criterion}) {
        write_text(dir / (sweep_axis_name(axis) + ".csv"), sweep_csv(reports, axis));
    }
    std::printf("aggregated %zu reports into %s\n", reports.size(), dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training allocates and frees the same large activation buffers every
    // step; keeping them on the heap avoids repeated page faults.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Budgeted transformer adaptation: external adapters plus selected internal parameters"};
    app.require_subcommand(1);

    RunFlags pre_flags, adapt_flags, base_flags, transfer_flags, sweep_flags;
    std::string base_path, mask_path, kind_name, ckpt, delta_path, eval_config, sweep_axis, runs_dir, report_out;
    std::optional<std::string> eval_task;
    std::size_t seeds = 5, draws = 20;
    std::vector<double> sweep_values;

    auto* pre = app.add_subcommand("pretrain", "train the full model on the source task");
    pre_flags.add_to(pre, false);

    auto* adapt = app.add_subcommand("adapt", "adapt a pretrained base with external adapters + selected parameters");
    adapt_flags.add_to(adapt);
    adapt->add_option("--base", base_path, "pretrained checkpoint")->required()->check(CLI::ExistingFile);

    auto* baseline = app.add_subcommand("baseline", "run a comparison baseline");
    base_flags.add_to(baseline);
    baseline->add_option("--base", base_path, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
    baseline->add_option("--kind", kind_name, "frozen | full_finetune | external_only | internal_only | adaptformer_style")
        ->required();

    auto* transfer = app.add_subcommand("transfer-mask", "reuse a selection mask from another run");
    transfer_flags.add_to(transfer);
    transfer->add_option("--base", base_path, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
    transfer->add_option("--mask-from", mask_path, "checkpoint holding the mask")->required()->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or base + delta) on a task's validation split");
    eval->add_option("--checkpoint", ckpt, "model checkpoint");
    eval->add_option("--base", base_path, "base checkpoint for --delta");
    eval->add_option("--delta", delta_path, "sparse delta file");
    eval->add_option("--task", eval_task, "task as domain[:kind]");
    eval->add_option("--config", eval_config, "JSON experiment config")->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "multi-seed sweep over one axis");
    sweep->add_option("axis", sweep_axis, "budget | dim | step-size | criterion")->required();
    sweep_flags.add_to(sweep);
    sweep->add_option("--base", base_path, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
    sweep->add_option("--seeds", seeds, "seeds per value")->capture_default_str();
    sweep->add_option("--values", sweep_values, "override the swept values");

    auto* self = app.add_subcommand("selftest", "gradient checks and invariant suite");
    self->add_option("--draws", draws, "random draws per op")->capture_default_str();

    auto* report = app.add_subcommand("report", "aggregate report.json files into sweep CSVs");
    report->add_option("--runs", runs_dir, "directory searched recursively")->required()->check(CLI::ExistingDirectory);
    report->add_option("--out", report_out, "output directory (default: --runs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*pre) {
            return cmd_pretrain(pre_flags);
        }
        if (*adapt) {
            return cmd_adapt(adapt_flags, base_path, std::nullopt);
        }
        if (*baseline) {
            const RunKind kind = parse_run_kind(kind_name);
            return cmd_adapt(base_flags, base_path, kind);
        }
        if (*transfer) {
            return cmd_transfer(transfer_flags, base_path, mask_path);
        }
        if (*eval) {
            return cmd_eval(ckpt, base_path, delta_path, eval_task, eval_config);
        }
        if (*sweep) {
            return cmd_sweep(sweep_flags, sweep_axis, base_path, seeds, sweep_values);
        }
        if (*self) {
            return cmd_selftest(draws);
        }
        if (*report) {
            return cmd_report(runs_dir, report_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
