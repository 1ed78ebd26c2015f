// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "edgecrafter/ecvit.hpp"

namespace ec {

enum class FusionStrategy { mean, concat };

/// Inclusive block interval [first, last].
struct LayerRange {
  std::size_t first = 10;
  std::size_t last = 11;

  std::size_t size() const { return last >= first ? last - first + 1 : 0; }
};

/// The last two blocks of a backbone of the given depth.
LayerRange default_fusion_range(std::size_t depth);

struct FeaturePyramid {
  Tensor f8, f16, f32;
};

struct PyramidParams {
  ConvParams proj8, proj16, proj32;  // 1x1, C' -> C
};

/// Channel width of the fused map: D for mean, D * |range| for concat.
std::size_t fused_channels(std::size_t embed_dim, FusionStrategy strategy, LayerRange range);

/// Blocks in `range` (register rows dropped) combined into a [C', gh, gw] map.
Tensor fuse_layers(const BackboneOutput& blocks, FusionStrategy strategy, LayerRange range);

PyramidParams build_pyramid(std::size_t fused_dim, std::size_t hidden_dim, Rng& rng);

/// Resizes the stride-16 map to 2x, 1x and 1/2x and projects each level.
FeaturePyramid make_pyramid(const Tensor& fused, const PyramidParams& params);

void visit(PyramidParams& p, const std::string& name, const ParamVisitor& f);

}  // namespace ec
