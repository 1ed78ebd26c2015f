// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "edgecrafter/losses.hpp"
#include "edgecrafter/params.hpp"

namespace ec {

struct SceneOptions {
  std::size_t objects = 5;
  int num_classes = 80;
  std::size_t keypoints = 17;
  std::size_t mask_h = 0, mask_w = 0;  // insseg only
  double min_side = 0.02;
  double visibility = 0.8;
};

/// Random annotations in [0,1]: clipped boxes, keypoints inside their box with
/// at least one visible, rectangular masks rasterized on the mask grid.
GroundTruthSet random_scene(Task task, const SceneOptions& options, Rng& rng);

/// Binary [h, w] mask of an xyxy box; a cell is set when the box covers at
/// least half of it.
Matrix rasterize_box(const Box4& xyxy, std::size_t h, std::size_t w);

/// [3, h, w] image of normalized pixel values, uniform in [-1, 1).
Tensor random_image(std::size_t h, std::size_t w, Rng& rng);

/// Predictions for `queries` queries that reproduce `gt` exactly on the first
/// G queries; the rest are confident background.
PredictionSet perfect_predictions(const GroundTruthSet& gt, Task task, std::size_t queries, int num_classes);

/// Random predictions of the shapes the decoder emits.
PredictionSet random_predictions(Task task, std::size_t queries, int num_classes, std::size_t keypoints,
                                 std::size_t mask_h, std::size_t mask_w, Rng& rng);

}  // namespace ec
