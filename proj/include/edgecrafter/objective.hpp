// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "edgecrafter/assignment.hpp"

namespace ec {

struct LossItem {
  std::string name;
  double raw = 0;       // averaged over decoder layers
  double weight = 0;
  double weighted = 0;  // weight * raw
};

struct LossReport {
  std::vector<LossItem> items;
  double total = 0;  // sum of weighted items

  const LossItem& item(const std::string& name) const;
  nlohmann::json to_json() const;
};

/// Pluggable per-layer term; the default contributes zero.
using LossHook = std::function<double(const PredictionSet&, const GroundTruthSet&, const MatchAssignment&)>;

struct LossHooks {
  LossHook ddf;
  LossHook fgl;
};

/// One matching per layer. Insseg layers without mask logits are matched on
/// the detection cost.
std::vector<MatchAssignment> match_layers(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                                          const LossWeights& weights, Task task);

/// Classification terms are normalized by the matched-query count; box,
/// keypoint and mask terms by the ground-truth count. Every term is averaged
/// over decoder layers (mask terms over the layers that predict masks).
LossReport total_det_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                          const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                          const LossHooks& hooks = {});
LossReport total_pose_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                           const std::vector<MatchAssignment>& matches, const LossWeights& weights);
LossReport total_insseg_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                             const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                             const LossHooks& hooks = {});
LossReport total_loss(Task task, const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                      const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                      const LossHooks& hooks = {});

}  // namespace ec
