// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/registry.hpp"

#include <cstdint>
#include <functional>
#include <map>

namespace ec {

namespace {

using json = nlohmann::json;

struct ScaleRow {
  VitVariant variant;
  std::size_t enc_hidden, enc_ffn, dec_ffn;
  TeacherKind teacher;
};

const std::map<std::string, ScaleRow>& scale_rows() {
  static const std::map<std::string, ScaleRow> rows = {
      {"S", {VitVariant::T, 192, 512, 512, TeacherKind::mockS}},
      {"M", {VitVariant::TPlus, 256, 512, 1024, TeacherKind::mockB}},
      {"L", {VitVariant::S, 256, 1024, 1024, TeacherKind::mockB}},
      {"X", {VitVariant::SPlus, 256, 2048, 2048, TeacherKind::mockB}},
  };
  return rows;
}

BudgetTarget target_for(const std::string& name, Task task) {
  static const std::map<std::string, BudgetTarget> det = {
      {"S", {10, 26, 0}}, {"M", {18, 53, 19.2}}, {"L", {31, 101, 0}}, {"X", {49, 151, 0}}};
  static const std::map<std::string, BudgetTarget> pose = {
      {"S", {9.9, 30.4, 0}}, {"M", {19.8, 62.8, 0}}, {"L", {34.3, 111.7, 0}}, {"X", {50.6, 172.2, 0}}};
  static const std::map<std::string, BudgetTarget> seg = {
      {"S", {10.3, 33.1, 0}}, {"M", {20.1, 64.2, 0}}, {"L", {33.6, 110.8, 0}}, {"X", {49.9, 168.1, 0}}};
  switch (task) {
    case Task::detect: return det.at(name);
    case Task::pose: return pose.at(name);
    case Task::insseg: return seg.at(name);
  }
  return {};
}

json metadata_for(const std::string& name, Task task) {
  const bool small = name == "S" || name == "M";
  if (task == Task::pose) {
    const bool sm = small;
    return {{"optimizer", "AdamW"},
            {"backbone_lr", sm ? 2.5e-5 : 2.5e-6},
            {"base_lr", 5e-4},
            {"weight_decay", sm ? 1e-4 : 1.25e-4},
            {"epochs", sm ? 90 : 72},
            {"epochs_no_aug", 2},
            {"prob_mosaic", 0.5},
            {"epochs_mosaic", sm ? 45 : 48},
            {"prob_mixup", 0.5},
            {"epochs_mixup", sm ? 45 : 48},
            {"prob_copypaste", 0.5},
            {"epochs_copypaste", sm ? 45 : 48},
            {"total_batch", 64}};
  }
  static const std::map<std::string, json> det = {
      {"S", {{"backbone_lr", 2.5e-5}, {"weight_decay", 1e-4}, {"epochs", 72}, {"prob_aug", 0.75}, {"epochs_aug", 36}}},
      {"M", {{"backbone_lr", 2.5e-5}, {"weight_decay", 1e-4}, {"epochs", 60}, {"prob_aug", 0.75}, {"epochs_aug", 30}}},
      {"L", {{"backbone_lr", 5e-6}, {"weight_decay", 1.25e-4}, {"epochs", 48}, {"prob_aug", 1.0}, {"epochs_aug", 24}}},
      {"X", {{"backbone_lr", 2.5e-6}, {"weight_decay", 1.25e-4}, {"epochs", 48}, {"prob_aug", 1.0}, {"epochs_aug", 24}}},
  };
  const json& d = det.at(name);
  return {{"optimizer", "AdamW"},
          {"backbone_lr", d["backbone_lr"]},
          {"base_lr", 5e-4},
          {"lr_decay", 0.5},
          {"weight_decay", d["weight_decay"]},
          {"epochs", d["epochs"]},
          {"epochs_no_aug", 2},
          {"prob_mosaic", d["prob_aug"]},
          {"epochs_mosaic", d["epochs_aug"]},
          {"prob_mixup", d["prob_aug"]},
          {"epochs_mixup", d["epochs_aug"]},
          {"total_batch", 32}};
}

using Setter = std::function<void(const json&)>;

void apply_section(const json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
    }
  }
}

template <typename T>
Setter set(T& slot) {
  return [&slot](const json& v) {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError("expected a nonnegative integer, got " + v.dump());
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer, got " + v.dump());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number, got " + v.dump());
    }
    slot = v.get<T>();
  };
}

}  // namespace

const std::vector<std::string>& registry_names() {
  static const std::vector<std::string> names = {"S", "M", "L", "X"};
  return names;
}

RegistryEntry registry_entry(const std::string& name, Task task) {
  const auto& rows = scale_rows();
  const auto it = rows.find(name);
  if (it == rows.end()) throw ConfigError("unknown model '" + name + "'; valid options: S, M, L, X");
  const ScaleRow& row = it->second;

  RegistryEntry e;
  e.name = name;
  e.task = task;
  e.model.name = name;
  e.model.task = task;
  e.model.backbone = BackboneConfig::for_variant(row.variant);
  e.model.fusion = FusionStrategy::mean;
  e.model.fusion_range = default_fusion_range(e.model.backbone.depth);
  e.model.encoder.hidden_dim = row.enc_hidden;
  e.model.encoder.ffn_dim = row.enc_ffn;
  e.model.decoder.hidden_dim = row.enc_hidden;
  e.model.decoder.ffn_dim = row.dec_ffn;
  e.model.decoder.task = task;
  e.weights = LossWeights::for_task(task);
  e.distill = DistillConfig::for_variant(row.variant, row.teacher);
  e.target = target_for(name, task);
  e.metadata = metadata_for(name, task);
  e.model.validate();
  return e;
}

json model_config_to_json(const ModelConfig& c) {
  return {{"name", c.name},
          {"task", to_string(c.task)},
          {"backbone",
           {{"variant", to_string(c.backbone.variant)},
            {"embed_dim", c.backbone.embed_dim},
            {"heads", c.backbone.heads},
            {"ffn_ratio", c.backbone.ffn_ratio},
            {"depth", c.backbone.depth},
            {"register_count", c.backbone.register_count},
            {"stem_dilation", c.backbone.stem_dilation},
            {"patch_embed", to_string(c.backbone.patch_embed)}}},
          {"fusion",
           {{"strategy", c.fusion == FusionStrategy::mean ? "mean" : "concat"},
            {"first", c.fusion_range.first},
            {"last", c.fusion_range.last}}},
          {"encoder",
           {{"hidden_dim", c.encoder.hidden_dim},
            {"ffn_dim", c.encoder.ffn_dim},
            {"aifi_heads", c.encoder.aifi_heads},
            {"fuse_expansion", c.encoder.fuse_expansion}}},
          {"decoder",
           {{"layers", c.decoder.layers},
            {"queries", c.decoder.queries},
            {"ffn_dim", c.decoder.ffn_dim},
            {"heads", c.decoder.heads},
            {"points", c.decoder.points},
            {"levels", c.decoder.levels},
            {"num_classes", c.decoder.num_classes},
            {"keypoints", c.decoder.keypoints}}}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "name") {
      c.name = value.get<std::string>();
    } else if (key == "task") {
      c.task = parse_task(value.get<std::string>());
      c.decoder.task = c.task;
    } else if (key == "backbone") {
      auto& b = c.backbone;
      apply_section(value, key,
                    {{"variant", [&](const json& v) { b.variant = parse_variant(v.get<std::string>()); }},
                     {"embed_dim", set(b.embed_dim)},
                     {"heads", set(b.heads)},
                     {"ffn_ratio", set(b.ffn_ratio)},
                     {"depth", set(b.depth)},
                     {"register_count", set(b.register_count)},
                     {"stem_dilation", set(b.stem_dilation)},
                     {"patch_embed", [&](const json& v) { b.patch_embed = parse_patch_embed(v.get<std::string>()); }}});
    } else if (key == "fusion") {
      apply_section(value, key,
                    {{"strategy",
                      [&](const json& v) {
                        const auto s = v.get<std::string>();
                        if (s != "mean" && s != "concat") throw ConfigError("fusion strategy must be mean or concat");
                        c.fusion = s == "mean" ? FusionStrategy::mean : FusionStrategy::concat;
                      }},
                     {"first", set(c.fusion_range.first)},
                     {"last", set(c.fusion_range.last)}});
    } else if (key == "encoder") {
      auto& e = c.encoder;
      apply_section(value, key,
                    {{"hidden_dim", set(e.hidden_dim)},
                     {"ffn_dim", set(e.ffn_dim)},
                     {"aifi_heads", set(e.aifi_heads)},
                     {"fuse_expansion", set(e.fuse_expansion)}});
      c.decoder.hidden_dim = e.hidden_dim;
    } else if (key == "decoder") {
      auto& d = c.decoder;
      apply_section(value, key,
                    {{"layers", set(d.layers)},
                     {"queries", set(d.queries)},
                     {"ffn_dim", set(d.ffn_dim)},
                     {"heads", set(d.heads)},
                     {"points", set(d.points)},
                     {"levels", set(d.levels)},
                     {"num_classes", set(d.num_classes)},
                     {"keypoints", set(d.keypoints)}});
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

json entry_to_json(const RegistryEntry& e) {
  return {{"name", e.name},
          {"task", to_string(e.task)},
          {"model", model_config_to_json(e.model)},
          {"weights", e.weights.to_json()},
          {"distill", e.distill.to_json()},
          {"target", {{"params_m", e.target.params_m}, {"gflops", e.target.gflops}, {"alt_params_m", e.target.alt_params_m}}},
          {"metadata", e.metadata}};
}

RegistryEntry entry_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  const std::string name = j.value("name", std::string("S"));
  const Task task = parse_task(j.value("task", std::string("det")));
  RegistryEntry e = registry_entry(name, task);
  // Recorded fields are accepted so saved entries load back, but cannot be edited.
  const json recorded = entry_to_json(e);
  for (const auto& [key, value] : j.items()) {
    if (key == "distill" || key == "target" || key == "metadata") {
      if (value != recorded[key]) throw ConfigError("config key '" + key + "' is read-only");
    } else if (key != "name" && key != "task" && key != "model" && key != "weights") {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (j.contains("model")) e.model = model_config_from_json(j["model"], e.model);
  if (e.model.task != task) throw ConfigError("model.task disagrees with task");
  if (j.contains("weights")) e.weights = LossWeights::from_json(j["weights"], e.weights);
  return e;
}

}  // namespace ec
