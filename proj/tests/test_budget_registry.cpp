// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "edgecrafter/budget.hpp"
#include "edgecrafter/registry.hpp"

using namespace ec;

namespace {

std::uint64_t counted_macs(const ModelConfig& c, std::size_t size, const DecoderOptions& o) {
  Rng rng(5);
  const ModelParams p = build_model(c, rng);
  Rng irng(6);
  Tensor img({3, size, size});
  for (float& v : img.values()) v = static_cast<float>(irng.uniform(-1.0, 1.0));
  MacTally tally;
  (void)model_forward(img, p, c, o);
  return tally.macs();
}

}  // namespace

TEST_CASE("walked parameter counts equal the closed form for every registry entry") {
  for (const auto& name : registry_names()) {
    for (Task task : {Task::detect, Task::pose, Task::insseg}) {
      CAPTURE(name);
      const RegistryEntry e = registry_entry(name, task);
      Rng rng(1);
      ModelParams p = build_model(e.model, rng);
      CHECK(count_params(p) == analytic_params(e.model));
    }
  }
}

TEST_CASE("counted MACs equal the estimate across architecture options") {
  ModelConfig base = registry_entry("S", Task::detect).model;
  SUBCASE("default") { CHECK(counted_macs(base, 128, {}) == total_of(estimate_macs(base, 128, 128))); }
  SUBCASE("concat fusion") {
    base.fusion = FusionStrategy::concat;
    base.fusion_range = {9, 11};
    base.validate();
    CHECK(counted_macs(base, 128, {}) == total_of(estimate_macs(base, 128, 128)));
  }
  SUBCASE("vanilla embedding") {
    base.backbone.patch_embed = PatchEmbed::vanilla16;
    CHECK(counted_macs(base, 128, {}) == total_of(estimate_macs(base, 128, 128)));
  }
  SUBCASE("pose") {
    const ModelConfig c = registry_entry("S", Task::pose).model;
    CHECK(counted_macs(c, 128, {}) == total_of(estimate_macs(c, 128, 128)));
  }
  SUBCASE("insseg with auxiliary masks") {
    const ModelConfig c = registry_entry("S", Task::insseg).model;
    DecoderOptions aux;
    aux.aux_masks = true;
    const std::uint64_t with = counted_macs(c, 128, aux);
    CHECK(with == total_of(estimate_macs(c, 128, 128, aux)));
    CHECK(with > total_of(estimate_macs(c, 128, 128)));
  }
}

TEST_CASE("budget report totals and FLOP conventions") {
  const ModelConfig c = registry_entry("S", Task::detect).model;
  const BudgetReport r = budget_report(c, 640, 640);
  CHECK(r.macs_total == total_of(r.macs_by_module));
  CHECK(r.params_total == total_of(r.params_by_module));
  CHECK(r.flops_1x == r.macs_total);
  CHECK(r.flops_2x == 2 * r.macs_total);
  REQUIRE(r.params_by_module.size() == 4);
  CHECK(r.params_by_module[0].first == "backbone");
  CHECK(r.params_by_module[3].first == "decoder");
  // MACs scale with area; quadrupling the pixels at least triples the cost.
  CHECK(total_of(estimate_macs(c, 640, 640)) > 3 * total_of(estimate_macs(c, 320, 320)));
  CHECK(r.to_json()["params_total"] == r.params_total);
  CHECK(r.to_table().find("backbone") != std::string::npos);
}

TEST_CASE("registry entries") {
  CHECK(registry_names() == std::vector<std::string>{"S", "M", "L", "X"});
  const RegistryEntry s = registry_entry("S", Task::detect);
  CHECK(s.model.backbone.embed_dim == 192);
  CHECK(s.model.backbone.heads == 3);
  CHECK(s.model.decoder.queries == 300);
  CHECK(s.target.params_m == 10.0);
  CHECK(registry_entry("S", Task::pose).target.params_m == 9.9);
  CHECK(registry_entry("S", Task::pose).target.gflops == 30.4);
  CHECK(registry_entry("S", Task::insseg).target.params_m == 10.3);
  CHECK(s.weights.giou == 2.0);
  for (const auto& name : registry_names()) {
    for (Task task : {Task::detect, Task::pose, Task::insseg}) CHECK_NOTHROW(registry_entry(name, task).model.validate());
  }
  try {
    registry_entry("XL", Task::detect);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("XL") != std::string::npos);
    CHECK(msg.find("S") != std::string::npos);
  }
}

TEST_CASE("config JSON round trip and strict keys") {
  for (Task task : {Task::detect, Task::pose, Task::insseg}) {
    const RegistryEntry e = registry_entry("M", task);
    const nlohmann::json j = entry_to_json(e);
    const RegistryEntry back = entry_from_json(j);
    CHECK(entry_to_json(back) == j);
    CHECK(model_config_to_json(model_config_from_json(model_config_to_json(e.model), ModelConfig{})) ==
          model_config_to_json(e.model));
  }
  const nlohmann::json partial = {{"name", "S"}, {"task", "det"}, {"model", {{"decoder", {{"queries", 100}}}}}};
  const RegistryEntry p = entry_from_json(partial);
  CHECK(p.model.decoder.queries == 100);
  CHECK(p.model.backbone.embed_dim == 192);
  CHECK_THROWS_AS(entry_from_json({{"name", "S"}, {"bogus", 1}}), ConfigError);
  nlohmann::json edited = entry_to_json(registry_entry("S", Task::detect));
  edited["target"]["params_m"] = 1.0;
  CHECK_THROWS_AS(entry_from_json(edited), ConfigError);
  CHECK_THROWS_AS(model_config_from_json({{"backbone", {{"embed_dims", 5}}}}, ModelConfig{}), ConfigError);
}

TEST_CASE("parameters survive a save and load round trip") {
  const ModelConfig c = registry_entry("S", Task::detect).model;
  Rng r1(7), r2(8);
  ModelParams a = build_model(c, r1), b = build_model(c, r2);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string blob = (dir / "ec_params_rt.bin").string(), man = (dir / "ec_params_rt.json").string();
  save_params([&](const ParamVisitor& f) { visit(a, f); }, blob, man);
  load_params([&](const ParamVisitor& f) { visit(b, f); }, blob, man);
  std::vector<float> va, vb;
  visit(a, [&](const std::string&, Tensor& t) { va.insert(va.end(), t.values().begin(), t.values().end()); });
  visit(b, [&](const std::string&, Tensor& t) { vb.insert(vb.end(), t.values().begin(), t.values().end()); });
  CHECK(va == vb);

  const auto size = std::filesystem::file_size(blob);
  CHECK(size == 4 * va.size());
  // A tree of another shape is rejected.
  ModelConfig wider = registry_entry("M", Task::detect).model;
  Rng r4(10);
  ModelParams w = build_model(wider, r4);
  CHECK_THROWS_AS(load_params([&](const ParamVisitor& f) { visit(w, f); }, blob, man), Error);
  std::filesystem::remove(blob);
  std::filesystem::remove(man);
}
