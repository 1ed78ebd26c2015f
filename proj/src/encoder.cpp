// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/encoder.hpp"

#include <cmath>

namespace ec {

std::size_t EncoderConfig::fuse_hidden() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(hidden_dim) * fuse_expansion));
}

void EncoderConfig::validate() const {
  if (hidden_dim == 0 || hidden_dim % 4 != 0) throw ConfigError("encoder hidden_dim must be a positive multiple of 4");
  if (aifi_heads < 1 || hidden_dim % static_cast<std::size_t>(aifi_heads) != 0) {
    throw ConfigError("encoder hidden_dim not divisible by aifi_heads");
  }
  if (ffn_dim == 0) throw ConfigError("encoder ffn_dim must be positive");
  if (fuse_hidden() == 0) throw ConfigError("fuse_expansion too small");
}

Tensor sincos_position_2d(std::size_t h, std::size_t w, std::size_t dim, double temperature) {
  if (dim % 4 != 0) throw ConfigError("sin-cos position dim must be divisible by 4");
  const std::size_t q = dim / 4;
  std::vector<double> omega(q);
  for (std::size_t i = 0; i < q; ++i) {
    omega[i] = 1.0 / std::pow(temperature, static_cast<double>(i) / static_cast<double>(q));
  }
  Tensor out({h * w, dim});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float* row = out.data() + (y * w + x) * dim;
      for (std::size_t i = 0; i < q; ++i) {
        const double ax = static_cast<double>(x) * omega[i], ay = static_cast<double>(y) * omega[i];
        row[i] = static_cast<float>(std::sin(ax));
        row[q + i] = static_cast<float>(std::cos(ax));
        row[2 * q + i] = static_cast<float>(std::sin(ay));
        row[3 * q + i] = static_cast<float>(std::cos(ay));
      }
    }
  }
  return out;
}

namespace {

ConvNormParams make_conv_norm(std::size_t c_in, std::size_t c_out, int k, int stride, Rng& rng) {
  return {make_conv(c_in, c_out, k, stride, k / 2, rng), make_norm(c_out)};
}

FuseBlockParams make_fuse_block(std::size_t c, std::size_t ch, Rng& rng) {
  FuseBlockParams p;
  p.reduce = make_conv_norm(2 * c, ch, 1, 1, rng);
  p.conv1 = make_conv_norm(ch, ch, 3, 1, rng);
  p.conv2 = make_conv_norm(ch, ch, 3, 1, rng);
  p.expand = make_conv(ch, c, 1, 1, 0, rng);
  return p;
}

void require_double(const Tensor& coarse, const Tensor& fine, const char* what) {
  if (fine.dim(1) != 2 * coarse.dim(1) || fine.dim(2) != 2 * coarse.dim(2)) {
    throw DimensionError(std::string(what) + ": " + shape_str(fine.shape()) + " is not twice " +
                         shape_str(coarse.shape()));
  }
}

}  // namespace

EncoderParams build_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t c = config.hidden_dim, ch = config.fuse_hidden();
  EncoderParams p;
  p.aifi.norm1 = make_norm(c);
  p.aifi.attn = make_attention(c, rng);
  p.aifi.norm2 = make_norm(c);
  p.aifi.fc1 = make_linear(c, config.ffn_dim, rng);
  p.aifi.fc2 = make_linear(config.ffn_dim, c, rng);
  p.top_down16 = make_fuse_block(c, ch, rng);
  p.top_down8 = make_fuse_block(c, ch, rng);
  p.down8 = make_conv_norm(c, c, 3, 2, rng);
  p.down16 = make_conv_norm(c, c, 3, 2, rng);
  p.bottom_up16 = make_fuse_block(c, ch, rng);
  p.bottom_up32 = make_fuse_block(c, ch, rng);
  return p;
}

Tensor aifi(const Tensor& f32, const AifiParams& params, const EncoderConfig& config, AttentionProbs* probs) {
  require_rank(f32, 3, "aifi input");
  if (f32.dim(0) != config.hidden_dim) throw DimensionError("aifi input width does not match hidden_dim");
  const std::size_t h = f32.dim(1), w = f32.dim(2);
  Tensor x = map_to_tokens(f32);
  const Tensor pos = sincos_position_2d(h, w, config.hidden_dim);
  const Tensor normed = layer_norm(x, params.norm1);
  const Tensor qk = add(normed, pos);
  add_inplace(x, multi_head_attention(qk, qk, normed, config.aifi_heads, params.attn, probs));
  Tensor hid = linear(layer_norm(x, params.norm2), params.fc1);
  gelu_inplace(hid);
  add_inplace(x, linear(hid, params.fc2));
  return tokens_to_map(x, h, w);
}

Tensor conv_norm_silu(const Tensor& x, const ConvNormParams& p) {
  Tensor y = channel_norm(conv2d(x, p.conv), p.norm);
  silu_inplace(y);
  return y;
}

Tensor fuse_block(const Tensor& other, const Tensor& same, const FuseBlockParams& p) {
  if (other.shape() != same.shape()) {
    throw DimensionError("fuse inputs differ: " + shape_str(other.shape()) + " vs " + shape_str(same.shape()));
  }
  Tensor h = conv_norm_silu(concat_channels(other, same), p.reduce);
  add_inplace(h, conv_norm_silu(conv_norm_silu(h, p.conv1), p.conv2));
  return add(same, conv2d(h, p.expand));
}

EncodedFeatures ccff(const Tensor& f32_refined, const Tensor& f16, const Tensor& f8, const EncoderParams& params) {
  require_rank(f32_refined, 3, "f32");
  require_rank(f16, 3, "f16");
  require_rank(f8, 3, "f8");
  require_double(f32_refined, f16, "ccff f16");
  require_double(f16, f8, "ccff f8");

  const Tensor t16 = fuse_block(bilinear_resize(f32_refined, f16.dim(1), f16.dim(2)), f16, params.top_down16);
  EncodedFeatures out;
  out.e8 = fuse_block(bilinear_resize(t16, f8.dim(1), f8.dim(2)), f8, params.top_down8);
  out.e16 = fuse_block(conv_norm_silu(out.e8, params.down8), t16, params.bottom_up16);
  out.e32 = fuse_block(conv_norm_silu(out.e16, params.down16), f32_refined, params.bottom_up32);
  return out;
}

EncodedFeatures encoder_forward(const FeaturePyramid& pyramid, const EncoderParams& params,
                                const EncoderConfig& config) {
  return ccff(aifi(pyramid.f32, params.aifi, config), pyramid.f16, pyramid.f8, params);
}

void visit(AifiParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.norm1, name + ".norm1", f);
  visit(p.attn, name + ".attn", f);
  visit(p.norm2, name + ".norm2", f);
  visit(p.fc1, name + ".fc1", f);
  visit(p.fc2, name + ".fc2", f);
}

void visit(ConvNormParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.conv, name + ".conv", f);
  visit(p.norm, name + ".norm", f);
}

void visit(FuseBlockParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.reduce, name + ".reduce", f);
  visit(p.conv1, name + ".conv1", f);
  visit(p.conv2, name + ".conv2", f);
  visit(p.expand, name + ".expand", f);
}

void visit(EncoderParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.aifi, name + ".aifi", f);
  visit(p.top_down16, name + ".top_down16", f);
  visit(p.top_down8, name + ".top_down8", f);
  visit(p.down8, name + ".down8", f);
  visit(p.down16, name + ".down16", f);
  visit(p.bottom_up16, name + ".bottom_up16", f);
  visit(p.bottom_up32, name + ".bottom_up32", f);
}

}  // namespace ec
