// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgecrafter/assignment.hpp"
#include "edgecrafter/distill.hpp"

namespace ec {

// Self-checking experiments shared by the CLI and the acceptance runner.

struct GradcheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
  double tolerance = 0;

  bool pass() const { return max_rel_error < tolerance; }
  nlohmann::json to_json() const;
};

/// Central finite differences against every analytic loss gradient on
/// `instances` random non-degenerate inputs per loss.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, std::size_t instances = 100);

struct MatchTrials {
  std::size_t trials = 0;
  std::size_t agree = 0;
  MatchAssignment first;  // Hungarian result of trial 0
  Matrix first_cost;
  std::vector<std::size_t> disagreements;  // trial indices

  nlohmann::json to_json() const;
};

/// Hungarian versus brute force on random G x N costs. Tie-heavy trials draw
/// integer costs from {0, 1, 2, 3}. Trial t uses rng stream split(t).
MatchTrials run_match_trials(std::uint64_t seed, std::size_t gt, std::size_t queries, std::size_t trials,
                             bool tie_heavy);

struct DistillDemoConfig {
  TeacherKind teacher = TeacherKind::linear_probe;
  std::size_t images = 512;
  std::size_t image_size = 64;
  std::size_t batch = 1;
  double base_lr = 0.014;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  PatchEmbed student_embed = PatchEmbed::vanilla16;

  nlohmann::json to_json() const;
};

struct DistillDemoResult {
  DistillRun run;
  double max_epoch_ratio = 0;  // largest epoch-over-previous-epoch loss ratio
  bool converged = false;      // final loss < 1e-3
  bool monotone = false;       // every ratio <= 1.05

  nlohmann::json to_json() const;
};

inline constexpr double kDemoLossThreshold = 1e-3;
inline constexpr double kDemoCurveTolerance = 1.05;

/// ECViT-T student trained against `config.teacher` on random images.
DistillDemoResult run_distill_demo(std::uint64_t seed, const DistillDemoConfig& config);

}  // namespace ec
