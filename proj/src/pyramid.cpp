// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/pyramid.hpp"

namespace ec {

LayerRange default_fusion_range(std::size_t depth) {
  if (depth < 2) throw ConfigError("fusion needs at least two blocks");
  return {depth - 2, depth - 1};
}

std::size_t fused_channels(std::size_t embed_dim, FusionStrategy strategy, LayerRange range) {
  return strategy == FusionStrategy::mean ? embed_dim : embed_dim * range.size();
}

Tensor fuse_layers(const BackboneOutput& blocks, FusionStrategy strategy, LayerRange range) {
  if (range.size() == 0) throw ConfigError("empty fusion range");
  if (range.last >= blocks.block_tokens.size()) {
    throw ConfigError("fusion range ends at block " + std::to_string(range.last) + " but the backbone has " +
                      std::to_string(blocks.block_tokens.size()));
  }
  const std::size_t gh = blocks.grid_h, gw = blocks.grid_w;
  if (strategy == FusionStrategy::mean) {
    Tensor acc = blocks.spatial_tokens(range.first);
    for (std::size_t b = range.first + 1; b <= range.last; ++b) add_inplace(acc, blocks.spatial_tokens(b));
    return tokens_to_map(scale(acc, 1.0f / static_cast<float>(range.size())), gh, gw);
  }
  Tensor map = tokens_to_map(blocks.spatial_tokens(range.first), gh, gw);
  for (std::size_t b = range.first + 1; b <= range.last; ++b) {
    map = concat_channels(map, tokens_to_map(blocks.spatial_tokens(b), gh, gw));
  }
  return map;
}

PyramidParams build_pyramid(std::size_t fused_dim, std::size_t hidden_dim, Rng& rng) {
  return {make_conv(fused_dim, hidden_dim, 1, 1, 0, rng), make_conv(fused_dim, hidden_dim, 1, 1, 0, rng),
          make_conv(fused_dim, hidden_dim, 1, 1, 0, rng)};
}

FeaturePyramid make_pyramid(const Tensor& fused, const PyramidParams& params) {
  require_rank(fused, 3, "fused map");
  const std::size_t gh = fused.dim(1), gw = fused.dim(2);
  if (gh % 2 != 0 || gw % 2 != 0) throw DimensionError("stride-16 grid must be even to form the stride-32 level");
  FeaturePyramid out;
  out.f8 = conv2d(bilinear_resize(fused, gh * 2, gw * 2), params.proj8);
  out.f16 = conv2d(fused, params.proj16);
  out.f32 = conv2d(bilinear_resize(fused, gh / 2, gw / 2), params.proj32);
  return out;
}

void visit(PyramidParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.proj8, name + ".proj8", f);
  visit(p.proj16, name + ".proj16", f);
  visit(p.proj32, name + ".proj32", f);
}

}  // namespace ec
