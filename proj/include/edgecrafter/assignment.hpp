// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "edgecrafter/losses.hpp"

namespace ec {

struct MatchAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt, query), ascending gt
  double total_cost = 0.0;

  /// Query matched to each gt, or the inverse map query -> gt (-1 if unmatched).
  std::vector<long> query_to_gt(std::size_t queries) const;
};

/// Minimum-cost assignment of every row (ground truth) of a G x N cost matrix
/// to a distinct column (query). Among optimal assignments the one whose
/// query sequence, read in gt order, is lexicographically smallest wins;
/// totals within 1e-9 of the scale of the costs count as ties.
MatchAssignment hungarian(const Matrix& cost);

/// Exhaustive reference with the same tie rule. G <= 8.
MatchAssignment brute_force_match(const Matrix& cost);

/// Task-specific matching costs [G, N] from one layer's predictions.
Matrix build_cost_matrix(const PredictionSet& pred, const GroundTruthSet& gt, const LossWeights& weights, Task task);

/// Predicted box of query q as doubles.
Box4 predicted_box(const PredictionSet& pred, std::size_t q);
std::vector<Point2> predicted_keypoints(const PredictionSet& pred, std::size_t q);
/// Mask logits of query q as a [Hm, Wm] matrix.
Matrix predicted_mask_logits(const PredictionSet& pred, std::size_t q);

}  // namespace ec
