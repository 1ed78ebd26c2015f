// SPDX-License-Identifier: Apache-2.0
// edgecrafter: registry, budget audit, forward demo and self-checking suites.
//
// JSON goes to stdout, human diagnostics to stderr (silenced by --json).
// Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "edgecrafter/budget.hpp"
#include "edgecrafter/objective.hpp"
#include "edgecrafter/registry.hpp"
#include "edgecrafter/suites.hpp"
#include "edgecrafter/synthetic.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t input = 640;
  bool json_only = false;
  std::string config_path;
};

struct ModelArgs {
  std::string name = "S";
  std::string task = "det";
  std::optional<std::size_t> register_count;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_model_args(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("name", args.name, "Registry name: S, M, L or X")->capture_default_str();
  cmd->add_option("task", args.task, "Task: det, pose or insseg")->capture_default_str();
  cmd->add_option("--register-count", args.register_count, "Override the backbone register-token count");
}

ec::RegistryEntry resolve_entry(const Globals& g, const ModelArgs& args) {
  ec::RegistryEntry e;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw ec::ConfigError("cannot open config file '" + g.config_path + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& ex) {
      throw ec::ConfigError("config file is not valid JSON: " + std::string(ex.what()));
    }
    e = ec::entry_from_json(j);
  } else {
    e = ec::registry_entry(args.name, ec::parse_task(args.task));
  }
  if (args.register_count) e.model.backbone.register_count = *args.register_count;
  e.model.validate();
  return e;
}

json envelope(const std::string& command) { return {{"spec_version", ec::kSchemaVersion}, {"command", command}}; }

json shape_json(const ec::Tensor& t) { return t.empty() ? json(nullptr) : json(t.shape()); }

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a over the raw float bytes.
std::uint64_t fnv1a(std::uint64_t h, const ec::Tensor& t) {
  const auto* p = reinterpret_cast<const unsigned char*>(t.data());
  for (std::size_t i = 0; i < t.numel() * sizeof(float); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Diag {
 public:
  explicit Diag(bool quiet) : quiet_(quiet) {}
  template <typename... A>
  void operator()(const char* fmt, A... a) const {
    if (quiet_) return;
    if constexpr (sizeof...(A) == 0) {
      std::fputs(fmt, stderr);
    } else {
      std::fprintf(stderr, fmt, a...);
    }
  }

 private:
  bool quiet_;
};

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

int cmd_build(const Globals& g, const ModelArgs& args, const std::string& save_prefix) {
  const ec::RegistryEntry e = resolve_entry(g, args);
  ec::Rng rng(g.seed);
  ec::ModelParams params = ec::build_model(e.model, rng);
  const auto walk = [&](const ec::ParamVisitor& f) { ec::visit(params, f); };
  const auto manifest = ec::collect_manifest(walk);
  const auto by_module = ec::count_params(params);
  const auto analytic = ec::analytic_params(e.model);
  json out = envelope("build");
  out["entry"] = ec::entry_to_json(e);
  out["seed"] = g.seed;
  out["params_total"] = ec::manifest_total(manifest);
  json mods = json::object();
  for (const auto& [m, v] : by_module) mods[m] = v;
  out["params_by_module"] = mods;
  out["analytic_matches"] = by_module == analytic;
  out["manifest"] = ec::manifest_to_json(manifest);
  if (!save_prefix.empty()) {
    ec::save_params(walk, save_prefix + ".bin", save_prefix + ".json");
    out["saved"] = {save_prefix + ".bin", save_prefix + ".json"};
  }
  emit(out);
  Diag(g.json_only)("built %s %s: %.3fM parameters in %zu tensors\n", e.name.c_str(), ec::to_string(e.task).c_str(),
                    static_cast<double>(ec::manifest_total(manifest)) / 1e6, manifest.size());
  return by_module == analytic ? 0 : kExitCheckFailed;
}

int cmd_profile(const Globals& g, const ModelArgs& args, bool aux_masks) {
  const ec::RegistryEntry e = resolve_entry(g, args);
  ec::DecoderOptions options;
  options.aux_masks = aux_masks;
  const ec::BudgetReport report = ec::budget_report(e.model, g.input, g.input, options);
  ec::Rng rng(g.seed);
  ec::ModelParams params = ec::build_model(e.model, rng);
  const auto counted = ec::count_params(params);
  const bool counts_agree = counted == report.params_by_module;

  const double params_m = static_cast<double>(report.params_total) / 1e6;
  const double lo = 0.8 * static_cast<double>(report.flops_1x) / 1e9;
  const double hi = 1.2 * static_cast<double>(report.flops_2x) / 1e9;
  auto within = [&](double target) { return target > 0 && std::abs(params_m - target) <= 0.2 * target; };
  json out = envelope("profile");
  out["name"] = e.name;
  out["task"] = ec::to_string(e.task);
  out["report"] = report.to_json();
  out["constructed_params_match"] = counts_agree;
  out["target"] = {{"params_m", e.target.params_m},
                   {"gflops", e.target.gflops},
                   {"alt_params_m", e.target.alt_params_m}};
  out["comparison"] = {{"params_m", params_m},
                       {"params_ratio", params_m / e.target.params_m},
                       {"params_within_20pct", within(e.target.params_m) || within(e.target.alt_params_m)},
                       {"gflops_bracket", {lo, hi}},
                       {"gflops_in_bracket", lo <= e.target.gflops && e.target.gflops <= hi}};
  emit(out);
  Diag d(g.json_only);
  d("%s", report.to_table().c_str());
  d("target: %.1fM params, %.1f GFLOPs; bracket [%.2f, %.2f]\n", e.target.params_m, e.target.gflops, lo, hi);
  return counts_agree ? 0 : kExitCheckFailed;
}

int cmd_forward(const Globals& g, const ModelArgs& args, bool aux_masks) {
  const ec::RegistryEntry e = resolve_entry(g, args);
  ec::Rng rng(g.seed);
  const ec::ModelParams params = ec::build_model(e.model, rng);
  const ec::Tensor image = ec::random_image(g.input, g.input, rng);
  ec::DecoderOptions options;
  options.aux_masks = aux_masks;

  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t counted = 0;
  ec::ModelOutput o;
  {
    ec::MacTally tally;
    o = ec::model_forward(image, params, e.model, options);
    counted = tally.macs();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const ec::PredictionSet& p = o.final();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* t : {&p.class_logits, &p.boxes, &p.keypoints, &p.mask_logits}) h = fnv1a(h, *t);

  json out = envelope("forward");
  out["name"] = e.name;
  out["task"] = ec::to_string(e.task);
  out["seed"] = g.seed;
  out["shapes"] = {
      {"image", image.shape()},
      {"grid", {o.backbone.grid_h, o.backbone.grid_w}},
      {"register_count", o.backbone.register_count},
      {"backbone_tokens", o.backbone.block_tokens.back().shape()},
      {"fused", o.fused.shape()},
      {"pyramid", {{"f8", o.pyramid.f8.shape()}, {"f16", o.pyramid.f16.shape()}, {"f32", o.pyramid.f32.shape()}}},
      {"encoded", {{"e8", o.encoded.e8.shape()}, {"e16", o.encoded.e16.shape()}, {"e32", o.encoded.e32.shape()}}},
      {"decoder_layers", o.predictions.size()},
      {"class_logits", shape_json(p.class_logits)},
      {"boxes", shape_json(p.boxes)},
      {"keypoints", shape_json(p.keypoints)},
      {"mask_logits", shape_json(p.mask_logits)}};
  out["macs"] = {{"counted", counted},
                 {"estimated", ec::total_of(ec::estimate_macs(e.model, g.input, g.input, options))}};
  out["checksum"] = hex64(h);
  emit(out);
  Diag(g.json_only)("forward %s %s at %zux%zu: %.2f s, %.2f GMAC, checksum %s\n", e.name.c_str(),
                    ec::to_string(e.task).c_str(), g.input, g.input, seconds, static_cast<double>(counted) / 1e9,
                    hex64(h).c_str());
  return 0;
}

int cmd_match(const Globals& g, std::size_t gt, std::size_t queries, std::size_t trials, bool tie_heavy) {
  if (gt == 0 || queries == 0 || trials == 0) throw UsageError("--gt, --queries and --trials must be positive");
  const ec::MatchTrials r = ec::run_match_trials(g.seed, gt, queries, trials, tie_heavy);
  json out = envelope("match");
  out["gt"] = gt;
  out["queries"] = queries;
  out["tie_heavy"] = tie_heavy;
  out["result"] = r.to_json();
  emit(out);
  Diag d(g.json_only);
  d("trial 0 assignment (gt -> query):");
  for (const auto& [gi, q] : r.first.pairs) d(" %zu->%zu", gi, q);
  d(", cost %.6f\noracle agreement %zu/%zu\n", r.first.total_cost, r.agree, r.trials);
  return r.agree == r.trials ? 0 : kExitCheckFailed;
}

int cmd_loss(const Globals& g, const ModelArgs& args, std::size_t objects, bool perfect, bool aux_masks) {
  const ec::RegistryEntry e = resolve_entry(g, args);
  const ec::DecoderConfig& dc = e.model.decoder;
  ec::Rng rng(g.seed);
  ec::SceneOptions so;
  so.objects = objects;
  so.num_classes = static_cast<int>(dc.class_outputs());
  so.keypoints = dc.keypoints;
  so.mask_h = g.input / 4;
  so.mask_w = g.input / 4;
  const ec::GroundTruthSet gt = ec::random_scene(e.task, so, rng);
  std::vector<ec::PredictionSet> layers;
  for (std::size_t l = 0; l < dc.layers; ++l) {
    ec::PredictionSet p = perfect ? ec::perfect_predictions(gt, e.task, dc.queries, so.num_classes)
                                  : ec::random_predictions(e.task, dc.queries, so.num_classes, dc.keypoints,
                                                           so.mask_h, so.mask_w, rng);
    if (e.task == ec::Task::insseg && !aux_masks && l + 1 < dc.layers) p.mask_logits = ec::Tensor();
    layers.push_back(std::move(p));
  }
  const auto matches = ec::match_layers(layers, gt, e.weights, e.task);
  const ec::LossReport report = ec::total_loss(e.task, layers, gt, matches, e.weights);
  json pairs = json::array();
  for (const auto& [gi, q] : matches.back().pairs) pairs.push_back({gi, q});
  json out = envelope("loss");
  out["name"] = e.name;
  out["task"] = ec::to_string(e.task);
  out["objects"] = objects;
  out["perfect"] = perfect;
  out["final_layer_assignment"] = pairs;
  out["report"] = report.to_json();
  emit(out);
  Diag d(g.json_only);
  for (const auto& it : report.items) d("%-6s raw %.6g x %.3g = %.6g\n", it.name.c_str(), it.raw, it.weight, it.weighted);
  d("total %.6g\n", report.total);
  return std::isfinite(report.total) ? 0 : kExitCheckFailed;
}

int cmd_gradcheck(const Globals& g, std::size_t instances) {
  if (instances == 0) throw UsageError("--instances must be positive");
  const auto results = ec::run_gradcheck_suite(g.seed, instances);
  json out = envelope("gradcheck");
  out["results"] = json::array();
  bool ok = true;
  double worst = 0;
  Diag d(g.json_only);
  for (const auto& r : results) {
    out["results"].push_back(r.to_json());
    ok = ok && r.pass();
    worst = std::max(worst, r.max_rel_error);
    d("%-12s %zu instances, max relative error %.3e (tol %.0e) %s\n", r.name.c_str(), r.instances, r.max_rel_error,
      r.tolerance, r.pass() ? "ok" : "FAIL");
  }
  out["max_rel_error"] = worst;
  out["pass"] = ok;
  emit(out);
  return ok ? 0 : kExitCheckFailed;
}

int cmd_distill_demo(const Globals& g, const ec::DistillDemoConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  const ec::DistillDemoResult r = ec::run_distill_demo(g.seed, config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool probe = config.teacher == ec::TeacherKind::linear_probe;
  json out = envelope("distill-demo");
  out["seed"] = g.seed;
  out["config"] = config.to_json();
  out["result"] = r.to_json();
  out["checked"] = probe;
  emit(out);
  Diag(g.json_only)("%zu steps in %.1f s, final loss %.3e, max epoch ratio %.3f\n", r.run.steps, seconds,
                    r.run.final_loss, r.max_epoch_ratio);
  return !probe || (r.converged && r.monotone) ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EdgeCrafter model family: registry, budgets, forward pass and self-checks"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--input", g.input, "Square input size in pixels")->capture_default_str();
  app.add_flag("--json", g.json_only, "Suppress human diagnostics on stderr");
  app.add_option("--config", g.config_path, "JSON config file mirroring a registry entry");

  ModelArgs build_args, profile_args, forward_args, loss_args;
  std::string save_prefix;
  auto* build = app.add_subcommand("build", "Construct a model and print its parameter manifest");
  add_model_args(build, build_args);
  build->add_option("--save", save_prefix, "Write <prefix>.bin and <prefix>.json");

  bool profile_aux = false;
  auto* profile = app.add_subcommand("profile", "Parameter and FLOP budget against the published targets");
  add_model_args(profile, profile_args);
  profile->add_flag("--aux-masks", profile_aux, "Count mask heads on every decoder layer");

  bool forward_aux = false;
  auto* forward = app.add_subcommand("forward", "Random image through the full model");
  add_model_args(forward, forward_args);
  forward->add_flag("--aux-masks", forward_aux, "Predict masks on every decoder layer");

  std::size_t gt = 5, queries = 7, trials = 1000;
  bool tie_heavy = false;
  auto* match = app.add_subcommand("match", "Hungarian matching against the brute-force oracle");
  match->add_option("--gt", gt)->capture_default_str();
  match->add_option("--queries", queries)->capture_default_str();
  match->add_option("--trials", trials)->capture_default_str();
  match->add_flag("--tie-heavy", tie_heavy, "Quantized costs with many ties");

  std::size_t objects = 5;
  bool perfect = false, loss_aux = false;
  auto* loss = app.add_subcommand("loss", "Itemized task loss on a synthetic scene");
  add_model_args(loss, loss_args);
  loss->add_option("--gt", objects, "Ground-truth objects in the scene")->capture_default_str();
  loss->add_flag("--perfect", perfect, "Predictions that reproduce the scene exactly");
  loss->add_flag("--aux-masks", loss_aux, "Mask logits on every decoder layer");

  std::size_t instances = 100;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every analytic loss gradient");
  gradcheck->add_option("--instances", instances)->capture_default_str();

  ec::DistillDemoConfig demo;
  std::string teacher = "linear-probe";
  auto* distill = app.add_subcommand("distill-demo", "Adapter distillation convergence run");
  distill->add_option("--teacher", teacher, "linear-probe, mockS or mockB")->capture_default_str();
  distill->add_option("--images", demo.images)->capture_default_str();
  distill->add_option("--image-size", demo.image_size)->capture_default_str();
  distill->add_option("--batch", demo.batch)->capture_default_str();
  distill->add_option("--base-lr", demo.base_lr)->capture_default_str();
  distill->add_option("--epochs", demo.epochs)->capture_default_str();
  distill->add_option("--warmup-epochs", demo.warmup_epochs)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*build) return cmd_build(g, build_args, save_prefix);
    if (*profile) return cmd_profile(g, profile_args, profile_aux);
    if (*forward) return cmd_forward(g, forward_args, forward_aux);
    if (*match) return cmd_match(g, gt, queries, trials, tie_heavy);
    if (*loss) return cmd_loss(g, loss_args, objects, perfect, loss_aux);
    if (*gradcheck) return cmd_gradcheck(g, instances);
    if (*distill) {
      demo.teacher = ec::parse_teacher(teacher);
      return cmd_distill_demo(g, demo);
    }
  } catch (const ec::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ec::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
