// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/budget.hpp"

#include <cstdio>
#include <map>

namespace ec {

namespace {

using u64 = std::uint64_t;

u64 lin(u64 in, u64 out) { return in * out + out; }
u64 conv(u64 c_in, u64 c_out, u64 k, u64 groups = 1) { return c_in / groups * c_out * k * k + c_out; }
u64 norm(u64 d) { return 2 * d; }

}  // namespace

std::uint64_t total_of(const ModuleCounts& counts) {
  u64 t = 0;
  for (const auto& [name, v] : counts) t += v;
  return t;
}

ModuleCounts count_params(ModelParams& params) {
  std::map<std::string, u64> by;
  visit(params, [&](const std::string& name, Tensor& t) { by[name.substr(0, name.find('.'))] += t.numel(); });
  ModuleCounts out;
  for (const char* m : {"backbone", "pyramid", "encoder", "decoder"}) out.emplace_back(m, by[m]);
  return out;
}

ModuleCounts analytic_params(const ModelConfig& config) {
  config.validate();
  const auto& bb = config.backbone;
  const u64 d = bb.embed_dim, r = bb.register_count, f = d * bb.ffn_ratio;

  u64 backbone = 0;
  if (bb.patch_embed == PatchEmbed::conv_stem) {
    const u64 widths[] = {3, d / 8, d / 4, d / 2, d};
    for (int i = 0; i < 4; ++i) backbone += conv(widths[i], widths[i + 1], 3) + norm(widths[i + 1]);
  } else {
    backbone += conv(3, d, 16);
  }
  backbone += 2 * r * d + d * kPosEmbedGrid * kPosEmbedGrid;
  backbone += bb.depth * (4 * lin(d, d) + 2 * norm(d) + lin(d, f) + lin(f, d));

  const u64 c = config.encoder.hidden_dim, ch = config.encoder.fuse_hidden(), ef = config.encoder.ffn_dim;
  const u64 pyramid = 3 * conv(config.fused_dim(), c, 1);

  const u64 aifi = 4 * lin(c, c) + 2 * norm(c) + lin(c, ef) + lin(ef, c);
  const u64 fuse = conv(2 * c, ch, 1) + norm(ch) + 2 * (conv(ch, ch, 3) + norm(ch)) + conv(ch, c, 1);
  const u64 down = conv(c, c, 3) + norm(c);
  const u64 encoder = aifi + 4 * fuse + 2 * down;

  const auto& dc = config.decoder;
  const u64 n = dc.queries, k = dc.keypoints, df = dc.ffn_dim;
  const u64 hlp = static_cast<u64>(dc.heads) * dc.levels * dc.points;
  u64 decoder = n * c + n * 4;
  decoder += dc.task == Task::pose ? k * c + k * 2 : lin(4, 2 * c) + lin(2 * c, c);
  const u64 layer = 4 * lin(c, c) + 3 * norm(c) + lin(c, c) + lin(c, 2 * hlp) + lin(c, hlp) + lin(c, c) +
                    lin(c, df) + lin(df, c);
  u64 head = lin(c, dc.class_outputs()) + 2 * lin(c, c) + lin(c, 4);
  if (dc.task == Task::pose) head += lin(c, 3);
  decoder += dc.layers * (layer + head);
  if (dc.task == Task::insseg) {
    const u64 e = dc.mask_dim();
    decoder += conv(c, c, 3, c) + lin(c, e) + lin(e, e) + lin(c, c) + lin(c, e);
  }
  return {{"backbone", backbone}, {"pyramid", pyramid}, {"encoder", encoder}, {"decoder", decoder}};
}

ModuleCounts estimate_macs(const ModelConfig& config, std::size_t h, std::size_t w, const DecoderOptions& options) {
  config.validate();
  if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) throw DimensionError("input must be divisible by 32");
  const auto& bb = config.backbone;
  const u64 d = bb.embed_dim, f = d * bb.ffn_ratio;
  const u64 gh = h / 16, gw = w / 16, n = gh * gw, t = n + bb.register_count;

  u64 backbone = 0;
  if (bb.patch_embed == PatchEmbed::conv_stem) {
    const u64 widths[] = {3, d / 8, d / 4, d / 2, d};
    u64 oh = h, ow = w;
    for (int i = 0; i < 4; ++i) {
      oh /= 2;
      ow /= 2;
      backbone += widths[i + 1] * oh * ow * widths[i] * 9;
    }
  } else {
    backbone += d * n * 3 * 256;
  }
  backbone += bb.depth * (4 * t * d * d + 2 * t * t * d + 2 * t * d * f);

  const u64 c = config.encoder.hidden_dim, ch = config.encoder.fuse_hidden(), ef = config.encoder.ffn_dim;
  const u64 n8 = 4 * n, n32 = (gh / 2) * (gw / 2);
  const u64 pyramid = config.fused_dim() * c * (n8 + n + n32);

  auto fuse = [&](u64 hw) { return hw * (2 * c * ch + 2 * 9 * ch * ch + ch * c); };
  u64 encoder = 4 * n32 * c * c + 2 * n32 * n32 * c + 2 * n32 * c * ef;
  encoder += fuse(n) + fuse(n8) + fuse(n) + fuse(n32);
  encoder += 9 * c * c * n + 9 * c * c * n32;

  const auto& dc = config.decoder;
  const u64 q = dc.queries, g = dc.group_size(), tokens = q * g, df = dc.ffn_dim, k = dc.keypoints;
  const u64 hlp = static_cast<u64>(dc.heads) * dc.levels * dc.points, lp = dc.levels * dc.points;
  u64 layer = dc.task == Task::pose ? 0 : q * (4 * 2 * c + 2 * c * c);  // positional head
  layer += 4 * tokens * c * c;
  layer += dc.task == Task::pose ? 2 * tokens * (g + q - 1) * c : 2 * q * q * c;
  layer += (n8 + n + n32) * c * c;                          // value projections
  layer += tokens * c * (3 * hlp) + tokens * lp * c + tokens * c * c;  // offsets, weights, sum, output
  layer += 2 * tokens * c * df;
  u64 head = q * (c * dc.class_outputs() + 2 * c * c + 4 * c);
  if (dc.task == Task::pose) head += q * k * c * 3;
  u64 decoder = dc.layers * (layer + head);
  if (dc.task == Task::insseg) {
    const u64 e = dc.mask_dim(), hw4 = 4 * n8;
    const u64 mask = c * hw4 * 9 + hw4 * (c * e + e * e) + q * (c * c + c * e) + q * hw4 * e;
    decoder += (options.aux_masks ? dc.layers : 1) * mask;
  }
  return {{"backbone", backbone}, {"pyramid", pyramid}, {"encoder", encoder}, {"decoder", decoder}};
}

BudgetReport budget_report(const ModelConfig& config, std::size_t h, std::size_t w, const DecoderOptions& options) {
  BudgetReport r;
  r.params_by_module = analytic_params(config);
  r.params_total = total_of(r.params_by_module);
  r.macs_by_module = estimate_macs(config, h, w, options);
  r.macs_total = total_of(r.macs_by_module);
  r.flops_1x = r.macs_total;
  r.flops_2x = 2 * r.macs_total;
  r.input_h = h;
  r.input_w = w;
  return r;
}

nlohmann::json BudgetReport::to_json() const {
  nlohmann::json params = nlohmann::json::object(), macs = nlohmann::json::object();
  for (const auto& [m, v] : params_by_module) params[m] = v;
  for (const auto& [m, v] : macs_by_module) macs[m] = v;
  return {{"params_total", params_total},
          {"params_by_module", params},
          {"macs_total", macs_total},
          {"macs_by_module", macs},
          {"flops_1x", flops_1x},
          {"flops_2x", flops_2x},
          {"input_size", {input_h, input_w}}};
}

std::string BudgetReport::to_table() const {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %14s %16s\n", "module", "params", "MACs");
  out += line;
  for (std::size_t i = 0; i < params_by_module.size(); ++i) {
    std::snprintf(line, sizeof line, "%-10s %14llu %16llu\n", params_by_module[i].first.c_str(),
                  static_cast<unsigned long long>(params_by_module[i].second),
                  static_cast<unsigned long long>(macs_by_module[i].second));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-10s %14llu %16llu\n", "total", static_cast<unsigned long long>(params_total),
                static_cast<unsigned long long>(macs_total));
  out += line;
  std::snprintf(line, sizeof line, "GFLOPs at %zux%zu: %.2f (1 per MAC) / %.2f (2 per MAC)\n", input_h, input_w,
                static_cast<double>(flops_1x) / 1e9, static_cast<double>(flops_2x) / 1e9);
  out += line;
  return out;
}

}  // namespace ec
