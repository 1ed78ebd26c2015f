// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "edgecrafter/pyramid.hpp"

namespace ec {

struct EncoderConfig {
  std::size_t hidden_dim = 256;
  std::size_t ffn_dim = 1024;
  int aifi_heads = 8;
  /// Width of the inner 3x3 convs of a fuse block, as a fraction of hidden_dim.
  double fuse_expansion = 0.5;

  std::size_t fuse_hidden() const;
  void validate() const;
};

struct AifiParams {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  LinearParams fc1, fc2;
};

/// Conv + channel norm + SiLU.
struct ConvNormParams {
  ConvParams conv;
  NormParams norm;
};

/// fuse(other, same) = same + expand(h + convs(h)), h = reduce(concat(other, same)).
struct FuseBlockParams {
  ConvNormParams reduce;               // 1x1, 2C -> Ch
  ConvNormParams conv1, conv2;         // 3x3, Ch -> Ch
  ConvParams expand;                   // 1x1, Ch -> C
};

struct EncoderParams {
  AifiParams aifi;
  FuseBlockParams top_down16, top_down8;
  ConvNormParams down8, down16;        // 3x3 stride 2
  FuseBlockParams bottom_up16, bottom_up32;
};

struct EncodedFeatures {
  Tensor e8, e16, e32;
};

/// Fixed 2D sin-cos encoding for an h x w grid, [h*w, dim], row-major tokens.
/// Channels are [sin(x w_i), cos(x w_i), sin(y w_i), cos(y w_i)] with
/// w_i = 10000^(-i / (dim/4)).
Tensor sincos_position_2d(std::size_t h, std::size_t w, std::size_t dim, double temperature = 10000.0);

EncoderParams build_encoder(const EncoderConfig& config, Rng& rng);

/// Single pre-norm transformer layer over the stride-32 map; the positional
/// encoding is added to queries and keys.
Tensor aifi(const Tensor& f32, const AifiParams& params, const EncoderConfig& config,
            AttentionProbs* probs = nullptr);

Tensor conv_norm_silu(const Tensor& x, const ConvNormParams& p);
Tensor fuse_block(const Tensor& other, const Tensor& same, const FuseBlockParams& p);

/// Top-down then bottom-up cross-scale fusion.
EncodedFeatures ccff(const Tensor& f32_refined, const Tensor& f16, const Tensor& f8, const EncoderParams& params);

EncodedFeatures encoder_forward(const FeaturePyramid& pyramid, const EncoderParams& params,
                                const EncoderConfig& config);

void visit(AifiParams& p, const std::string& name, const ParamVisitor& f);
void visit(ConvNormParams& p, const std::string& name, const ParamVisitor& f);
void visit(FuseBlockParams& p, const std::string& name, const ParamVisitor& f);
void visit(EncoderParams& p, const std::string& name, const ParamVisitor& f);

}  // namespace ec
