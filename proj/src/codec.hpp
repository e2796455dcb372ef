#pragma once

// JSON codecs shared by the config loader, checkpoints, deltas and reports.

#include <nlohmann/json.hpp>

#include "sfa/adapter.hpp"
#include "sfa/backbone.hpp"
#include "sfa/selection.hpp"
#include "sfa/tasks.hpp"
#include "sfa/trainer.hpp"

namespace sfa::codec {

using Json = nlohmann::ordered_json;

Json to_json(const BackboneConfig& c);
BackboneConfig backbone_from_json(const Json& j);

Json to_json(const AdapterConfig& c);
AdapterConfig adapter_from_json(const Json& j);

Json to_json(const TaskSpec& t);
TaskSpec task_from_json(const Json& j);

Json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_from_json(const Json& j);

/// Mask as {"size", "tensors": [{"name", "indices", "rounds"}]}, empty tensors included.
Json to_json(const SelectionMask& m);
SelectionMask mask_from_json(const Json& j);

Json to_json(const RunReport& r);
RunReport report_from_json(const Json& j);

/// Rejects keys outside `allowed` with a ConfigError naming `where`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace sfa::codec
