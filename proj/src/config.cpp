#include "sfa/config.hpp"

#include <algorithm>
#include <cstring>

#include "codec.hpp"
#include "sfa/errors.hpp"
#include "sfa/io.hpp"

namespace sfa {

namespace codec {

namespace {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void require_object(const Json& j, const char* where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected a JSON object");
    }
}

}  // namespace

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where) {
    require_object(j, where);
    for (const auto& [key, _] : j.items()) {
        const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!ok) {
            throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
        }
    }
}

Json to_json(const BackboneConfig& c) {
    Json j;
    j["image_h"] = c.image_h;
    j["image_w"] = c.image_w;
    j["in_channels"] = c.in_channels;
    j["patch_size"] = c.patch_size;
    j["embed_dim"] = c.embed_dim;
    j["num_blocks"] = c.num_blocks;
    j["num_heads"] = c.num_heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["head_kind"] = head_kind_name(c.head_kind);
    j["num_classes"] = c.num_classes;
    return j;
}

BackboneConfig backbone_from_json(const Json& j) {
    check_keys(j, {"image_h", "image_w", "in_channels", "patch_size", "embed_dim", "num_blocks", "num_heads",
                   "mlp_ratio", "head_kind", "num_classes"},
               "backbone");
    BackboneConfig c;
    read_opt(j, "image_h", c.image_h);
    read_opt(j, "image_w", c.image_w);
    read_opt(j, "in_channels", c.in_channels);
    read_opt(j, "patch_size", c.patch_size);
    read_opt(j, "embed_dim", c.embed_dim);
    read_opt(j, "num_blocks", c.num_blocks);
    read_opt(j, "num_heads", c.num_heads);
    read_opt(j, "mlp_ratio", c.mlp_ratio);
    std::string head = head_kind_name(c.head_kind);
    read_opt(j, "head_kind", head);
    c.head_kind = parse_head_kind(head);
    read_opt(j, "num_classes", c.num_classes);
    c.validate();
    return c;
}

Json to_json(const AdapterConfig& c) {
    Json j;
    j["middle_dim"] = c.middle_dim;
    j["style"] = adapter_style_name(c.style);
    j["scale"] = c.scale;
    Json sites = Json::array();
    for (const auto& s : c.sites) {
        sites.push_back(Json{{"after_att", s.after_att}, {"after_mlp", s.after_mlp}});
    }
    j["sites"] = std::move(sites);
    return j;
}

AdapterConfig adapter_from_json(const Json& j) {
    check_keys(j, {"middle_dim", "style", "scale", "sites"}, "adapter");
    AdapterConfig c;
    read_opt(j, "middle_dim", c.middle_dim);
    std::string style = adapter_style_name(c.style);
    read_opt(j, "style", style);
    c.style = parse_adapter_style(style);
    read_opt(j, "scale", c.scale);
    if (j.contains("sites")) {
        for (const auto& s : j.at("sites")) {
            check_keys(s, {"after_att", "after_mlp"}, "adapter site");
            AdapterSites site;
            read_opt(s, "after_att", site.after_att);
            read_opt(s, "after_mlp", site.after_mlp);
            c.sites.push_back(site);
        }
    }
    return c;
}

Json to_json(const TaskSpec& t) {
    Json j;
    j["domain"] = t.domain;
    j["kind"] = task_kind_name(t.kind);
    j["seed"] = t.seed;
    j["image_h"] = t.image_h;
    j["image_w"] = t.image_w;
    j["num_classes"] = t.num_classes;
    j["min_shapes"] = t.min_shapes;
    j["max_shapes"] = t.max_shapes;
    j["min_size"] = t.min_size;
    j["max_size"] = t.max_size;
    j["noise"] = t.noise;
    j["color_jitter"] = t.color_jitter;
    j["depth_min"] = t.depth_min;
    j["depth_max"] = t.depth_max;
    j["train_count"] = t.train_count;
    j["val_count"] = t.val_count;
    return j;
}

TaskSpec task_from_json(const Json& j) {
    check_keys(j, {"domain", "kind", "seed", "image_h", "image_w", "num_classes", "min_shapes", "max_shapes",
                   "min_size", "max_size", "noise", "color_jitter", "depth_min", "depth_max", "train_count",
                   "val_count"},
               "task");
    std::string domain = "target", kind = task_kind_name(TaskKind::shapes_segmentation);
    std::uint64_t seed = 1;
    read_opt(j, "domain", domain);
    read_opt(j, "kind", kind);
    read_opt(j, "seed", seed);
    TaskSpec t = make_task(domain, parse_task_kind(kind), seed);
    read_opt(j, "image_h", t.image_h);
    read_opt(j, "image_w", t.image_w);
    read_opt(j, "num_classes", t.num_classes);
    read_opt(j, "min_shapes", t.min_shapes);
    read_opt(j, "max_shapes", t.max_shapes);
    read_opt(j, "min_size", t.min_size);
    read_opt(j, "max_size", t.max_size);
    read_opt(j, "noise", t.noise);
    read_opt(j, "color_jitter", t.color_jitter);
    read_opt(j, "depth_min", t.depth_min);
    read_opt(j, "depth_max", t.depth_max);
    read_opt(j, "train_count", t.train_count);
    read_opt(j, "val_count", t.val_count);
    t.validate();
    return t;
}

Json to_json(const OptimizerConfig& c) {
    Json j;
    j["kind"] = optimizer_kind_name(c.kind);
    j["lr"] = c.lr;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["weight_decay"] = c.weight_decay;
    j["warmup_fraction"] = c.warmup_fraction;
    j["decay"] = lr_decay_name(c.decay);
    return j;
}

OptimizerConfig optimizer_from_json(const Json& j) {
    check_keys(j, {"kind", "lr", "beta1", "beta2", "eps", "weight_decay", "warmup_fraction", "decay"}, "optimizer");
    OptimizerConfig c;
    std::string kind = optimizer_kind_name(c.kind), decay = lr_decay_name(c.decay);
    read_opt(j, "kind", kind);
    c.kind = parse_optimizer_kind(kind);
    read_opt(j, "lr", c.lr);
    read_opt(j, "beta1", c.beta1);
    read_opt(j, "beta2", c.beta2);
    read_opt(j, "eps", c.eps);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "warmup_fraction", c.warmup_fraction);
    read_opt(j, "decay", decay);
    c.decay = parse_lr_decay(decay);
    return c;
}

Json to_json(const TrainConfig& c) {
    Json j;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["optimizer"] = to_json(c.optimizer);
    j["seed"] = c.seed;
    j["beta"] = c.beta;
    j["rho"] = c.rho;
    j["step_size"] = c.step_size;
    j["one_shot_selection"] = c.one_shot_selection;
    j["criterion"] = criterion_name(c.criterion);
    j["use_external"] = c.use_external;
    j["use_internal"] = c.use_internal;
    j["adapter_style"] = adapter_style_name(c.adapter_style);
    j["adapter_scale"] = c.adapter_scale;
    j["middle_dim"] = c.middle_dim;
    j["eval_every"] = c.eval_every;
    j["eval_subset"] = c.eval_subset;
    return j;
}

TrainConfig train_from_json(const Json& j) {
    check_keys(j, {"steps", "batch_size", "optimizer", "seed", "beta", "rho", "step_size", "one_shot_selection",
                   "criterion", "use_external", "use_internal", "adapter_style", "adapter_scale", "middle_dim",
                   "eval_every", "eval_subset"},
               "train");
    TrainConfig c;
    read_opt(j, "steps", c.steps);
    read_opt(j, "batch_size", c.batch_size);
    if (j.contains("optimizer")) {
        c.optimizer = optimizer_from_json(j.at("optimizer"));
    }
    read_opt(j, "seed", c.seed);
    read_opt(j, "beta", c.beta);
    read_opt(j, "rho", c.rho);
    read_opt(j, "step_size", c.step_size);
    read_opt(j, "one_shot_selection", c.one_shot_selection);
    std::string criterion = criterion_name(c.criterion), style = adapter_style_name(c.adapter_style);
    read_opt(j, "criterion", criterion);
    c.criterion = parse_criterion(criterion);
    read_opt(j, "use_external", c.use_external);
    read_opt(j, "use_internal", c.use_internal);
    read_opt(j, "adapter_style", style);
    c.adapter_style = parse_adapter_style(style);
    read_opt(j, "adapter_scale", c.adapter_scale);
    read_opt(j, "middle_dim", c.middle_dim);
    read_opt(j, "eval_every", c.eval_every);
    read_opt(j, "eval_subset", c.eval_subset);
    c.validate();
    return c;
}

Json to_json(const SelectionMask& m) {
    Json tensors = Json::array();
    for (const auto& t : m.tensors()) {
        tensors.push_back(Json{{"name", t.name}, {"indices", t.indices}, {"rounds", t.rounds}});
    }
    return Json{{"size", m.size()}, {"tensors", std::move(tensors)}};
}

SelectionMask mask_from_json(const Json& j) {
    try {
        SelectionMask m;
        for (const auto& t : j.at("tensors")) {
            m.add_tensor(TensorMask{t.at("name").get<std::string>(), t.at("indices").get<std::vector<std::uint32_t>>(),
                                    t.at("rounds").get<std::vector<std::uint16_t>>()});
        }
        if (j.contains("size") && j.at("size").get<std::size_t>() != m.size()) {
            throw FormatError("mask: recorded size does not match its entries");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mask: ") + e.what());
    }
}

Json to_json(const RunReport& r) {
    Json j;
    j["format_version"] = 1;
    j["kind"] = r.kind;
    j["task"] = r.task;
    j["seed"] = r.seed;
    j["metric"] = r.metric_name;
    j["initial_metric"] = r.initial_metric;
    j["final_metric"] = r.final_metric;
    j["beta"] = r.beta;
    j["rho"] = r.rho;
    j["criterion"] = r.criterion;
    j["adapter_style"] = r.adapter_style;
    j["middle_dim"] = r.middle_dim;
    j["step_size"] = r.step_size;
    j["rounds"] = r.rounds;
    j["trainable"] = Json{{"backbone_params", r.backbone_params},
                          {"budget_ceiling", r.budget_ceiling},
                          {"adapter", r.adapter_params},
                          {"mask", r.mask_params},
                          {"dense_backbone", r.dense_backbone_params},
                          {"head", r.head_params},
                          {"backbone_side", r.backbone_side_trainable()},
                          {"total", r.trainable_total()}};
    Json layers = Json::array();
    for (const auto& l : r.layers) {
        layers.push_back(Json{{"layer", l.layer},
                              {"att_selected", l.att_selected},
                              {"att_pool", l.att_pool},
                              {"att_fraction", l.att_fraction()},
                              {"mlp_selected", l.mlp_selected},
                              {"mlp_pool", l.mlp_pool},
                              {"mlp_fraction", l.mlp_fraction()}});
    }
    j["layers"] = std::move(layers);
    Json hist = Json::array();
    for (const auto& e : r.history) {
        hist.push_back(Json{{"step", e.step}, {"loss", e.loss}, {"metric", e.metric}, {"trainable_count", e.trainable_count}});
    }
    j["history"] = std::move(hist);
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

RunReport report_from_json(const Json& j) {
    try {
        RunReport r;
        r.kind = j.at("kind").get<std::string>();
        r.task = j.at("task").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.metric_name = j.at("metric").get<std::string>();
        r.initial_metric = j.at("initial_metric").get<double>();
        r.final_metric = j.at("final_metric").get<double>();
        r.beta = j.at("beta").get<double>();
        r.rho = j.at("rho").get<double>();
        r.criterion = j.at("criterion").get<std::string>();
        r.adapter_style = j.at("adapter_style").get<std::string>();
        r.middle_dim = j.at("middle_dim").get<std::size_t>();
        r.step_size = j.at("step_size").get<std::size_t>();
        r.rounds = j.at("rounds").get<std::size_t>();
        const auto& t = j.at("trainable");
        r.backbone_params = t.at("backbone_params").get<std::size_t>();
        r.budget_ceiling = t.at("budget_ceiling").get<std::size_t>();
        r.adapter_params = t.at("adapter").get<std::size_t>();
        r.mask_params = t.at("mask").get<std::size_t>();
        r.dense_backbone_params = t.at("dense_backbone").get<std::size_t>();
        r.head_params = t.at("head").get<std::size_t>();
        for (const auto& l : j.at("layers")) {
            r.layers.push_back(LayerSelection{l.at("layer").get<std::size_t>(), l.at("att_selected").get<std::size_t>(),
                                              l.at("att_pool").get<std::size_t>(), l.at("mlp_selected").get<std::size_t>(),
                                              l.at("mlp_pool").get<std::size_t>()});
        }
        for (const auto& e : j.at("history")) {
            r.history.push_back(EvalPoint{e.at("step").get<std::size_t>(), e.at("loss").get<double>(),
                                          e.at("metric").get<double>(), e.at("trainable_count").get<std::size_t>()});
        }
        r.wall_seconds = j.value("wall_seconds", 0.0);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
}

}  // namespace codec

ExperimentConfig parse_config(std::string_view json_text) {
    codec::Json j;
    try {
        j = codec::Json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    codec::check_keys(j, {"format_version", "backbone", "source", "target", "train", "pretrain_steps", "pretrain_seed"},
                      "config");
    if (j.contains("format_version") && j.at("format_version") != 1) {
        throw ConfigError("config: unsupported format_version " + j.at("format_version").dump());
    }
    ExperimentConfig c;
    if (j.contains("backbone")) {
        c.backbone = codec::backbone_from_json(j.at("backbone"));
    }
    if (j.contains("source")) {
        c.source = codec::task_from_json(j.at("source"));
    }
    if (j.contains("target")) {
        c.target = codec::task_from_json(j.at("target"));
    }
    if (j.contains("train")) {
        c.train = codec::train_from_json(j.at("train"));
    }
    if (j.contains("pretrain_steps")) {
        c.pretrain_steps = j.at("pretrain_steps").get<std::size_t>();
    }
    if (j.contains("pretrain_seed")) {
        c.pretrain_seed = j.at("pretrain_seed").get<std::uint64_t>();
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string config_to_json(const ExperimentConfig& c) {
    codec::Json j;
    j["format_version"] = 1;
    j["backbone"] = codec::to_json(c.backbone);
    j["source"] = codec::to_json(c.source);
    j["target"] = codec::to_json(c.target);
    j["train"] = codec::to_json(c.train);
    j["pretrain_steps"] = c.pretrain_steps;
    j["pretrain_seed"] = c.pretrain_seed;
    return j.dump(2);
}

TaskSpec task_from_json_text(std::string_view json_text) {
    try {
        return codec::task_from_json(codec::Json::parse(json_text));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
}

std::string task_to_json_text(const TaskSpec& task) { return codec::to_json(task).dump(2); }

}  // namespace sfa
