// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "edgecrafter/params.hpp"

namespace ec {

enum class VitVariant { T, TPlus, S, SPlus };
enum class PatchEmbed { conv_stem, vanilla16 };

std::string to_string(VitVariant v);
VitVariant parse_variant(const std::string& s);
std::string to_string(PatchEmbed p);
PatchEmbed parse_patch_embed(const std::string& s);

/// Learned positional embeddings live on this grid (640 / 16) and are
/// resampled for other input sizes.
inline constexpr std::size_t kPosEmbedGrid = 40;

struct BackboneConfig {
  VitVariant variant = VitVariant::T;
  std::size_t embed_dim = 192;
  int heads = 3;
  std::size_t ffn_ratio = 4;
  std::size_t depth = 12;
  std::size_t register_count = 1;
  int stem_dilation = 1;
  PatchEmbed patch_embed = PatchEmbed::conv_stem;

  /// Width, heads and FFN ratio of the named variant with default knobs.
  static BackboneConfig for_variant(VitVariant v);
  void validate() const;
};

struct StemParams {
  PatchEmbed kind = PatchEmbed::conv_stem;
  std::vector<ConvParams> convs;  // four 3x3/s2 convs, or one 16x16/s16
  std::vector<NormParams> norms;  // one per conv for the conv stem, empty for vanilla
};

struct VitBlockParams {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  LinearParams fc1, fc2;
};

struct BackboneParams {
  StemParams stem;
  Tensor registers;      // [R, D], empty when R = 0
  Tensor register_pos;   // [R, D], empty when R = 0
  Tensor pos_embed;      // [D, 40, 40]
  std::vector<VitBlockParams> blocks;
};

/// Token outputs of every transformer block. Register tokens occupy the
/// leading `register_count` rows of each tensor.
struct BackboneOutput {
  std::vector<Tensor> block_tokens;
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t register_count = 0;

  /// Block output with register rows dropped: [grid_h * grid_w, D].
  Tensor spatial_tokens(std::size_t block) const;
};

StemParams build_conv_stem(const BackboneConfig& config, Rng& rng);
StemParams build_vanilla_embed(const BackboneConfig& config, Rng& rng);
VitBlockParams build_vit_block(std::size_t dim, std::size_t ffn_dim, Rng& rng);
BackboneParams build_backbone(const BackboneConfig& config, Rng& rng);

/// Image [3,H,W] -> feature map [D, H/16, W/16].
Tensor stem_forward(const Tensor& image, const StemParams& stem);
/// Pre-norm block: x + MHSA(LN(x)), then x + FFN(LN(x)) with GELU.
Tensor vit_block_forward(const Tensor& tokens, const VitBlockParams& block, int heads);
BackboneOutput backbone_forward(const Tensor& image, const BackboneParams& params, const BackboneConfig& config);

void visit(StemParams& p, const std::string& name, const ParamVisitor& f);
void visit(VitBlockParams& p, const std::string& name, const ParamVisitor& f);
void visit(BackboneParams& p, const std::string& name, const ParamVisitor& f);

}  // namespace ec
