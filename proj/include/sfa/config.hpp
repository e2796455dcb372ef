#pragma once

// Experiment configuration and its JSON form. Missing keys keep their
// defaults; unknown keys are rejected so typos fail loudly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "sfa/backbone.hpp"
#include "sfa/tasks.hpp"
#include "sfa/trainer.hpp"

namespace sfa {

struct ExperimentConfig {
    BackboneConfig backbone;
    TaskSpec source = make_task("source");
    TaskSpec target = make_task("target");
    TrainConfig train;
    std::size_t pretrain_steps = 3000;
    std::uint64_t pretrain_seed = 0;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

/// Domain names and shape/palette come from make_task; the remaining task
/// fields are overridable. Shared with the dataset manifest and the CLI.
TaskSpec task_from_json_text(std::string_view json_text);
std::string task_to_json_text(const TaskSpec& task);

}  // namespace sfa
