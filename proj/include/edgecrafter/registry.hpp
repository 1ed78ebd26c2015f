// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "edgecrafter/distill.hpp"
#include "edgecrafter/model.hpp"

namespace ec {

inline constexpr const char* kSchemaVersion = "1.0";

/// Published budget of a registry entry at 640 x 640.
struct BudgetTarget {
  double params_m = 0;      // millions of parameters
  double gflops = 0;
  double alt_params_m = 0;  // second reported count for the same model, 0 if none
};

struct RegistryEntry {
  std::string name;  // S, M, L or X
  Task task = Task::detect;
  ModelConfig model;
  LossWeights weights;
  DistillConfig distill;
  BudgetTarget target;
  nlohmann::json metadata;  // training-recipe values, recorded but unused
};

const std::vector<std::string>& registry_names();
/// Throws ConfigError naming the valid options for an unknown name.
RegistryEntry registry_entry(const std::string& name, Task task);

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Applies the keys present in `j` on top of `base`; unknown keys are errors.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base);

nlohmann::json entry_to_json(const RegistryEntry& entry);
/// Config file: {"name", "task", "model": {...}, "weights": {...}}; every key optional.
/// The recorded distill, target and metadata blocks may be present if unchanged.
RegistryEntry entry_from_json(const nlohmann::json& j);

}  // namespace ec
