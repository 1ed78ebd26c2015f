// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/ecvit.hpp"

#include <algorithm>

namespace ec {

std::string to_string(VitVariant v) {
  switch (v) {
    case VitVariant::T: return "T";
    case VitVariant::TPlus: return "T+";
    case VitVariant::S: return "S";
    case VitVariant::SPlus: return "S+";
  }
  return "?";
}

VitVariant parse_variant(const std::string& s) {
  if (s == "T") return VitVariant::T;
  if (s == "T+") return VitVariant::TPlus;
  if (s == "S") return VitVariant::S;
  if (s == "S+") return VitVariant::SPlus;
  throw ConfigError("unknown backbone variant '" + s + "' (expected T, T+, S, S+)");
}

std::string to_string(PatchEmbed p) { return p == PatchEmbed::conv_stem ? "conv_stem" : "vanilla16"; }

PatchEmbed parse_patch_embed(const std::string& s) {
  if (s == "conv_stem") return PatchEmbed::conv_stem;
  if (s == "vanilla16") return PatchEmbed::vanilla16;
  throw ConfigError("unknown patch embedding '" + s + "' (expected conv_stem, vanilla16)");
}

BackboneConfig BackboneConfig::for_variant(VitVariant v) {
  BackboneConfig c;
  c.variant = v;
  switch (v) {
    case VitVariant::T: c.embed_dim = 192, c.heads = 3, c.ffn_ratio = 4; break;
    case VitVariant::TPlus: c.embed_dim = 256, c.heads = 4, c.ffn_ratio = 4; break;
    case VitVariant::S: c.embed_dim = 384, c.heads = 6, c.ffn_ratio = 4; break;
    case VitVariant::SPlus: c.embed_dim = 384, c.heads = 6, c.ffn_ratio = 6; break;
  }
  return c;
}

void BackboneConfig::validate() const {
  if (heads < 1 || embed_dim % static_cast<std::size_t>(heads) != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (depth < 2) throw ConfigError("backbone depth must be at least 2");
  if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be positive");
  if (patch_embed == PatchEmbed::conv_stem) {
    if (embed_dim % 8 != 0) throw ConfigError("conv stem needs embed_dim divisible by 8");
    if (stem_dilation < 1 || stem_dilation > 3) throw ConfigError("stem_dilation must be 1, 2 or 3");
  }
}

StemParams build_conv_stem(const BackboneConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.embed_dim;
  const std::size_t widths[] = {3, d / 8, d / 4, d / 2, d};
  StemParams stem;
  stem.kind = PatchEmbed::conv_stem;
  for (std::size_t i = 0; i < 4; ++i) {
    const int dil = i == 3 ? config.stem_dilation : 1;
    stem.convs.push_back(make_conv(widths[i], widths[i + 1], 3, 2, dil, rng, dil));
    stem.norms.push_back(make_norm(widths[i + 1]));
  }
  return stem;
}

StemParams build_vanilla_embed(const BackboneConfig& config, Rng& rng) {
  config.validate();
  StemParams stem;
  stem.kind = PatchEmbed::vanilla16;
  stem.convs.push_back(make_conv(3, config.embed_dim, 16, 16, 0, rng));
  return stem;
}

VitBlockParams build_vit_block(std::size_t dim, std::size_t ffn_dim, Rng& rng) {
  VitBlockParams b;
  b.norm1 = make_norm(dim);
  b.attn = make_attention(dim, rng);
  b.norm2 = make_norm(dim);
  b.fc1 = make_linear(dim, ffn_dim, rng);
  b.fc2 = make_linear(ffn_dim, dim, rng);
  return b;
}

BackboneParams build_backbone(const BackboneConfig& config, Rng& rng) {
  config.validate();
  BackboneParams p;
  p.stem = config.patch_embed == PatchEmbed::conv_stem ? build_conv_stem(config, rng) : build_vanilla_embed(config, rng);
  const std::size_t d = config.embed_dim, r = config.register_count;
  if (r > 0) {
    p.registers = normal_tensor({r, d}, 0.02, rng);
    p.register_pos = normal_tensor({r, d}, 0.02, rng);
  }
  p.pos_embed = normal_tensor({d, kPosEmbedGrid, kPosEmbedGrid}, 0.02, rng);
  for (std::size_t i = 0; i < config.depth; ++i) p.blocks.push_back(build_vit_block(d, d * config.ffn_ratio, rng));
  return p;
}

Tensor stem_forward(const Tensor& image, const StemParams& stem) {
  require_rank(image, 3, "image");
  if (image.dim(0) != 3) throw DimensionError("image must have 3 channels");
  if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0) {
    throw DimensionError("image size " + shape_str(image.shape()) + " must be divisible by 16");
  }
  if (stem.kind == PatchEmbed::vanilla16) return conv2d(image, stem.convs.at(0));
  Tensor x = image;
  for (std::size_t i = 0; i < stem.convs.size(); ++i) {
    x = channel_norm(conv2d(x, stem.convs[i]), stem.norms[i]);
    silu_inplace(x);
  }
  return x;
}

Tensor vit_block_forward(const Tensor& tokens, const VitBlockParams& block, int heads) {
  Tensor x = add(tokens, multi_head_self_attention(layer_norm(tokens, block.norm1), heads, block.attn));
  Tensor h = linear(layer_norm(x, block.norm2), block.fc1);
  gelu_inplace(h);
  add_inplace(x, linear(h, block.fc2));
  return x;
}

Tensor BackboneOutput::spatial_tokens(std::size_t block) const {
  const Tensor& t = block_tokens.at(block);
  return slice_rows(t, register_count, t.dim(0));
}

BackboneOutput backbone_forward(const Tensor& image, const BackboneParams& params, const BackboneConfig& config) {
  const Tensor fmap = stem_forward(image, params.stem);
  const std::size_t d = config.embed_dim, r = config.register_count;
  const std::size_t gh = fmap.dim(1), gw = fmap.dim(2), n = gh * gw;
  if (fmap.dim(0) != d) throw DimensionError("stem output width does not match embed_dim");

  const Tensor pos = bilinear_resize(params.pos_embed, gh, gw);
  const Tensor spatial = map_to_tokens(add(fmap, pos));
  Tensor x({r + n, d});
  if (r > 0) {
    for (std::size_t i = 0; i < r * d; ++i) x[i] = params.registers[i] + params.register_pos[i];
  }
  std::copy(spatial.values().begin(), spatial.values().end(), x.values().begin() + static_cast<long>(r * d));

  BackboneOutput out;
  out.grid_h = gh;
  out.grid_w = gw;
  out.register_count = r;
  out.block_tokens.reserve(params.blocks.size());
  for (const auto& block : params.blocks) {
    x = vit_block_forward(x, block, config.heads);
    out.block_tokens.push_back(x);
  }
  return out;
}

void visit(StemParams& p, const std::string& name, const ParamVisitor& f) {
  for (std::size_t i = 0; i < p.convs.size(); ++i) {
    visit(p.convs[i], name + ".conv" + std::to_string(i), f);
    if (i < p.norms.size()) visit(p.norms[i], name + ".norm" + std::to_string(i), f);
  }
}

void visit(VitBlockParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.norm1, name + ".norm1", f);
  visit(p.attn, name + ".attn", f);
  visit(p.norm2, name + ".norm2", f);
  visit(p.fc1, name + ".fc1", f);
  visit(p.fc2, name + ".fc2", f);
}

void visit(BackboneParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.stem, name + ".stem", f);
  if (!p.registers.empty()) {
    f(name + ".registers", p.registers);
    f(name + ".register_pos", p.register_pos);
  }
  f(name + ".pos_embed", p.pos_embed);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) visit(p.blocks[i], name + ".blocks." + std::to_string(i), f);
}

}  // namespace ec
