// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ec {

std::string to_string(Task t) {
  switch (t) {
    case Task::detect: return "det";
    case Task::pose: return "pose";
    case Task::insseg: return "insseg";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "det" || s == "detect") return Task::detect;
  if (s == "pose") return Task::pose;
  if (s == "insseg") return Task::insseg;
  throw ConfigError("unknown task '" + s + "' (expected det, pose, insseg)");
}

void DecoderConfig::validate() const {
  if (hidden_dim == 0 || hidden_dim % 2 != 0) throw ConfigError("decoder hidden_dim must be positive and even");
  if (heads < 1 || hidden_dim % static_cast<std::size_t>(heads) != 0) {
    throw ConfigError("decoder hidden_dim not divisible by heads");
  }
  if (layers == 0 || queries == 0 || points == 0 || levels == 0 || ffn_dim == 0) {
    throw ConfigError("decoder layers, queries, points, levels and ffn_dim must be positive");
  }
  if (task != Task::pose && num_classes == 0) throw ConfigError("num_classes must be positive");
  if (task == Task::pose && keypoints == 0) throw ConfigError("pose task needs keypoints");
}

MlpParams build_mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) p.layers.push_back(make_linear(widths[i], widths[i + 1], rng));
  return p;
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  Tensor h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = linear(h, p.layers[i]);
    if (i + 1 < p.layers.size()) relu_inplace(h);
  }
  return h;
}

DeformAttnParams build_deform_attn(std::size_t dim, int heads, std::size_t levels, std::size_t points, Rng& rng) {
  const auto nh = static_cast<std::size_t>(heads);
  DeformAttnParams p;
  p.value_proj = make_linear(dim, dim, rng);
  p.sampling_offsets = {Tensor({nh * levels * points * 2, dim}), Tensor({nh * levels * points * 2})};
  // Head h starts on a ray at angle 2*pi*h/heads, point i at radius i+1.
  for (std::size_t h = 0; h < nh; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(nh);
    const double cx = std::cos(theta), cy = std::sin(theta);
    const double norm = std::max(std::abs(cx), std::abs(cy));
    for (std::size_t l = 0; l < levels; ++l) {
      for (std::size_t i = 0; i < points; ++i) {
        const std::size_t idx = ((h * levels + l) * points + i) * 2;
        p.sampling_offsets.bias[idx] = static_cast<float>(cx / norm * static_cast<double>(i + 1));
        p.sampling_offsets.bias[idx + 1] = static_cast<float>(cy / norm * static_cast<double>(i + 1));
      }
    }
  }
  p.attention_weights = {Tensor({nh * levels * points, dim}), Tensor({nh * levels * points})};
  p.output_proj = make_linear(dim, dim, rng);
  return p;
}

DecoderParams build_decoder(const DecoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t c = config.hidden_dim, n = config.queries;
  DecoderParams p;
  p.query_content = normal_tensor({n, c}, 1.0, rng);
  p.query_reference = Tensor({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    p.query_reference[i * 4 + 0] = inverse_sigmoid(static_cast<float>(rng.uniform(0.05, 0.95)));
    p.query_reference[i * 4 + 1] = inverse_sigmoid(static_cast<float>(rng.uniform(0.05, 0.95)));
    p.query_reference[i * 4 + 2] = inverse_sigmoid(static_cast<float>(rng.uniform(0.05, 0.4)));
    p.query_reference[i * 4 + 3] = inverse_sigmoid(static_cast<float>(rng.uniform(0.05, 0.4)));
  }
  if (config.task == Task::pose) {
    p.keypoint_embed = normal_tensor({config.keypoints, c}, 1.0, rng);
    p.keypoint_prior = uniform_tensor({config.keypoints, 2}, 0.4, rng);
  }
  if (config.task != Task::pose) p.query_pos_head = build_mlp({4, 2 * c, c}, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    DecoderLayerParams layer;
    layer.self_attn = make_attention(c, rng);
    layer.norm1 = make_norm(c);
    layer.cross_attn = build_deform_attn(c, config.heads, config.levels, config.points, rng);
    layer.norm2 = make_norm(c);
    layer.fc1 = make_linear(c, config.ffn_dim, rng);
    layer.fc2 = make_linear(config.ffn_dim, c, rng);
    layer.norm3 = make_norm(c);
    p.layers.push_back(std::move(layer));

    LayerHeadParams head;
    head.cls = make_linear(c, config.class_outputs(), rng);
    head.cls.bias = Tensor::filled({config.class_outputs()}, -4.6f);  // prior probability 0.01
    head.box = build_mlp({c, c, c, 4}, rng);
    head.box.layers.back() = {Tensor({4, c}), Tensor({4})};
    if (config.task == Task::pose) head.keypoint = {Tensor({3, c}), Tensor({3})};
    p.heads.push_back(std::move(head));
  }
  if (config.task == Task::insseg) {
    const std::size_t e = config.mask_dim();
    MaskHeadParams m;
    m.depthwise = make_conv(c, c, 3, 1, 1, rng, 1, static_cast<int>(c));
    m.pixel_mlp = build_mlp({c, e, e}, rng);
    m.query_mlp = build_mlp({c, c, e}, rng);
    p.mask_head = std::move(m);
  }
  return p;
}

Tensor sine_point_embedding(const Tensor& points, std::size_t dim, double temperature) {
  require_rank(points, 2, "sine embedding points");
  if (points.dim(1) != 2) throw DimensionError("sine embedding expects [M, 2] points");
  if (dim % 4 != 0) throw ConfigError("sine embedding dim must be divisible by 4");
  const std::size_t half = dim / 2, m = points.dim(0);
  std::vector<double> freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    freq[i] = 2.0 * std::numbers::pi /
              std::pow(temperature, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
  }
  Tensor out({m, dim});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const double v = points[r * 2 + axis];
      float* dst = out.data() + r * dim + axis * half;
      for (std::size_t i = 0; i < half; ++i) {
        dst[i] = static_cast<float>(i % 2 == 0 ? std::sin(v * freq[i]) : std::cos(v * freq[i]));
      }
    }
  }
  return out;
}

std::vector<LevelValues> project_levels(const std::vector<Tensor>& maps, const LinearParams& value_proj) {
  std::vector<LevelValues> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    require_rank(m, 3, "value map");
    out.push_back({linear(map_to_tokens(m), value_proj), m.dim(1), m.dim(2)});
  }
  return out;
}

namespace {

// Accumulates weight * bilinear(values at normalized x, y) over `width`
// channels starting at `channel`. Same tap convention as sample_point.
void accumulate_sample(const LevelValues& lv, std::size_t channel, std::size_t width, double x, double y,
                       double weight, double* acc) {
  double px = x * static_cast<double>(lv.w) - 0.5;
  double py = y * static_cast<double>(lv.h) - 0.5;
  if (std::abs(px - std::round(px)) < 1e-9) px = std::round(px);
  if (std::abs(py - std::round(py)) < 1e-9) py = std::round(py);
  const double fx = std::floor(px), fy = std::floor(py);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = px - fx, ay = py - fy;
  const std::size_t d = lv.tokens.dim(1);
  const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int t = 0; t < 4; ++t) {
    if (wts[t] == 0.0) continue;
    if (xs[t] < 0 || ys[t] < 0 || xs[t] >= static_cast<long>(lv.w) || ys[t] >= static_cast<long>(lv.h)) continue;
    const float* src = lv.tokens.data() + (static_cast<std::size_t>(ys[t]) * lv.w + static_cast<std::size_t>(xs[t])) * d +
                       channel;
    const double w = weight * wts[t];
    for (std::size_t c = 0; c < width; ++c) acc[c] += w * src[c];
  }
}

Tensor gather_rows(const Tensor& t, std::size_t start, std::size_t stride, std::size_t count, std::size_t span = 1) {
  const std::size_t d = t.dim(1);
  Tensor out({count * span, d});
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(t.data() + (start + i * stride) * d, span * d, out.data() + i * span * d);
  }
  return out;
}

void scatter_rows(Tensor& t, const Tensor& rows, std::size_t start, std::size_t stride, std::size_t count,
                  std::size_t span = 1) {
  const std::size_t d = t.dim(1);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(rows.data() + i * span * d, span * d, t.data() + (start + i * stride) * d);
  }
}

}  // namespace

Tensor deformable_attention(const Tensor& queries, const Tensor& reference, const std::vector<LevelValues>& levels,
                            const DeformAttnParams& p, int heads, std::size_t points,
                            std::vector<double>* weight_sums) {
  require_rank(queries, 2, "deformable queries");
  require_rank(reference, 2, "deformable reference");
  const std::size_t m = queries.dim(0), d = queries.dim(1);
  const bool box_ref = reference.dim(1) == 4;
  if (reference.dim(0) != m || (!box_ref && reference.dim(1) != 2)) {
    throw DimensionError("deformable reference must be [M,2] or [M,4] with M = " + std::to_string(m));
  }
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) throw ConfigError("deformable: dim not divisible by heads");
  const auto nh = static_cast<std::size_t>(heads);
  const std::size_t nl = levels.size(), dh = d / nh, lp = nl * points;
  if (p.attention_weights.out_features() != nh * lp) throw DimensionError("deformable: attention weight width");

  const Tensor offsets = linear(queries, p.sampling_offsets);
  Tensor weights = linear(queries, p.attention_weights);
  count_macs(static_cast<std::uint64_t>(m) * lp * d);
  if (weight_sums) weight_sums->assign(m * nh, 0.0);

  Tensor sampled({m, d});
  std::vector<double> acc(dh);
  for (std::size_t q = 0; q < m; ++q) {
    const float* ref = reference.data() + q * reference.dim(1);
    for (std::size_t h = 0; h < nh; ++h) {
      std::span<float> aw(weights.data() + (q * nh + h) * lp, lp);
      softmax_inplace(aw);
      std::fill(acc.begin(), acc.end(), 0.0);
      double total = 0.0;
      for (std::size_t l = 0; l < nl; ++l) {
        const LevelValues& lv = levels[l];
        for (std::size_t i = 0; i < points; ++i) {
          const std::size_t k = l * points + i;
          const float* off = offsets.data() + ((q * nh + h) * lp + k) * 2;
          double x, y;
          if (box_ref) {
            x = ref[0] + off[0] / static_cast<double>(points) * ref[2] * 0.5;
            y = ref[1] + off[1] / static_cast<double>(points) * ref[3] * 0.5;
          } else {
            x = ref[0] + off[0] / static_cast<double>(lv.w);
            y = ref[1] + off[1] / static_cast<double>(lv.h);
          }
          total += aw[k];
          accumulate_sample(lv, h * dh, dh, x, y, aw[k], acc.data());
        }
      }
      if (weight_sums) (*weight_sums)[q * nh + h] = total;
      float* dst = sampled.data() + q * d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) dst[c] = static_cast<float>(acc[c]);
    }
  }
  return linear(sampled, p.output_proj);
}

Tensor deformable_attention(const Tensor& query, double ref_x, double ref_y, const std::vector<Tensor>& maps,
                            const DeformAttnParams& p, int heads, std::size_t points) {
  require_rank(query, 1, "deformable query");
  const Tensor q = query.reshaped({1, query.dim(0)});
  const Tensor ref({1, 2}, {static_cast<float>(ref_x), static_cast<float>(ref_y)});
  const Tensor out = deformable_attention(q, ref, project_levels(maps, p.value_proj), p, heads, points);
  return out.reshaped({query.dim(0)});
}

QueryState initial_query_state(const DecoderParams& params, const DecoderConfig& config) {
  const std::size_t n = config.queries, c = config.hidden_dim, g = config.group_size();
  QueryState s;
  s.reference = params.query_reference;
  sigmoid_inplace(s.reference);
  if (config.task != Task::pose) {
    s.content = params.query_content;
    return s;
  }
  const std::size_t k = config.keypoints;
  s.content = Tensor({n * g, c});
  s.keypoint_reference = Tensor({n, k, 2});
  for (std::size_t q = 0; q < n; ++q) {
    std::copy_n(params.query_content.data() + q * c, c, s.content.data() + q * g * c);
    std::copy_n(params.keypoint_embed.data(), k * c, s.content.data() + (q * g + 1) * c);
    const float* box = s.reference.data() + q * 4;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t a = 0; a < 2; ++a) {
        const float v = box[a] + params.keypoint_prior[j * 2 + a] * box[2 + a];
        s.keypoint_reference[(q * k + j) * 2 + a] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return s;
}

Tensor mask_head(const Tensor& queries, const Tensor& e8, const MaskHeadParams& params) {
  require_rank(queries, 2, "mask queries");
  require_rank(e8, 3, "mask features");
  const std::size_t h = e8.dim(1) * 2, w = e8.dim(2) * 2, n = queries.dim(0);
  const Tensor pixels = mlp_forward(map_to_tokens(conv2d(bilinear_resize(e8, h, w), params.depthwise)),
                                    params.pixel_mlp);
  const Tensor q = mlp_forward(queries, params.query_mlp);
  const std::size_t e = q.dim(1);
  if (pixels.dim(1) != e) throw DimensionError("mask head: query and pixel embedding widths differ");
  const Tensor pt = transpose2d(pixels);
  Tensor out({n, h, w});
  gemm(q.data(), pt.data(), out.data(), n, e, h * w);
  return out;
}

namespace {

Tensor refine_boxes(const Tensor& reference, const Tensor& delta) {
  Tensor out(reference.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid(inverse_sigmoid(reference[i]) + delta[i]);
  return out;
}

Tensor box_centers(const Tensor& boxes) {
  Tensor out({boxes.dim(0), 2});
  for (std::size_t i = 0; i < boxes.dim(0); ++i) {
    out[i * 2] = boxes[i * 4];
    out[i * 2 + 1] = boxes[i * 4 + 1];
  }
  return out;
}

}  // namespace

std::vector<PredictionSet> decoder_forward(const QueryState& queries, const EncodedFeatures& enc,
                                           const DecoderParams& params, const DecoderConfig& config,
                                           const DecoderOptions& options) {
  config.validate();
  const std::size_t n = config.queries, c = config.hidden_dim, g = config.group_size();
  const bool pose = config.task == Task::pose;
  const std::size_t k = config.keypoints;
  if (queries.content.dim(0) != n * g || queries.content.dim(1) != c) {
    throw DimensionError("query content " + shape_str(queries.content.shape()) + " does not match the config");
  }
  if (config.levels != 3) throw ConfigError("decoder reads exactly three encoder levels");
  if (config.task == Task::insseg && !params.mask_head) throw ContractError("insseg decoder has no mask head");
  const std::vector<Tensor> maps = {enc.e8, enc.e16, enc.e32};

  Tensor tgt = queries.content;
  Tensor ref = queries.reference;
  Tensor kref = queries.keypoint_reference;
  std::vector<PredictionSet> out;
  for (std::size_t li = 0; li < config.layers; ++li) {
    const DecoderLayerParams& layer = params.layers[li];
    const LayerHeadParams& head = params.heads[li];

    // Positional queries: box MLP, or for pose a sine code of every token's point.
    Tensor pos({n * g, c});
    const Tensor box_pos = pose ? sine_point_embedding(box_centers(ref), c) : mlp_forward(ref, params.query_pos_head);
    const Tensor kpt_pos = pose ? sine_point_embedding(kref.reshaped({n * k, 2}), c) : Tensor();
    scatter_rows(pos, box_pos, 0, g, n);
    if (pose) scatter_rows(pos, kpt_pos, 1, g, n, k);

    const Tensor qk = add(tgt, pos);
    const Tensor sa = pose ? grouped_cross_type_attention(qk, qk, tgt, config.heads, g, layer.self_attn)
                           : multi_head_attention(qk, qk, tgt, config.heads, layer.self_attn);
    tgt = layer_norm(add(tgt, sa), layer.norm1);

    const auto levels = project_levels(maps, layer.cross_attn.value_proj);
    const Tensor cq = add(tgt, pos);
    Tensor ca;
    if (!pose) {
      ca = deformable_attention(cq, ref, levels, layer.cross_attn, config.heads, config.points);
    } else {
      ca = Tensor({n * g, c});
      scatter_rows(ca,
                   deformable_attention(gather_rows(cq, 0, g, n), ref, levels, layer.cross_attn, config.heads,
                                        config.points),
                   0, g, n);
      scatter_rows(ca,
                   deformable_attention(gather_rows(cq, 1, g, n, k), kref.reshaped({n * k, 2}), levels,
                                        layer.cross_attn, config.heads, config.points),
                   1, g, n, k);
    }
    tgt = layer_norm(add(tgt, ca), layer.norm2);

    Tensor hid = linear(tgt, layer.fc1);
    gelu_inplace(hid);
    tgt = layer_norm(add(tgt, linear(hid, layer.fc2)), layer.norm3);

    PredictionSet pred;
    const Tensor inst = pose ? gather_rows(tgt, 0, g, n) : tgt;
    pred.class_logits = linear(inst, head.cls);
    ref = refine_boxes(ref, mlp_forward(inst, head.box));
    pred.boxes = ref;
    if (pose) {
      const Tensor raw = linear(gather_rows(tgt, 1, g, n, k), head.keypoint);
      Tensor next({n, k, 2});
      pred.keypoints = Tensor({n, k, 3});
      for (std::size_t i = 0; i < n * k; ++i) {
        for (std::size_t a = 0; a < 2; ++a) {
          next[i * 2 + a] = sigmoid(inverse_sigmoid(kref[i * 2 + a]) + raw[i * 3 + a]);
          pred.keypoints[i * 3 + a] = next[i * 2 + a];
        }
        pred.keypoints[i * 3 + 2] = sigmoid(raw[i * 3 + 2]);
      }
      kref = std::move(next);
    }
    if (config.task == Task::insseg && (options.aux_masks || li + 1 == config.layers)) {
      pred.mask_logits = mask_head(tgt, enc.e8, *params.mask_head);
    }
    out.push_back(std::move(pred));
  }
  return out;
}

void visit(MlpParams& p, const std::string& name, const ParamVisitor& f) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) visit(p.layers[i], name + "." + std::to_string(i), f);
}

void visit(DeformAttnParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.value_proj, name + ".value_proj", f);
  visit(p.sampling_offsets, name + ".sampling_offsets", f);
  visit(p.attention_weights, name + ".attention_weights", f);
  visit(p.output_proj, name + ".output_proj", f);
}

void visit(DecoderParams& p, const std::string& name, const ParamVisitor& f) {
  f(name + ".query_content", p.query_content);
  f(name + ".query_reference", p.query_reference);
  if (!p.keypoint_embed.empty()) {
    f(name + ".keypoint_embed", p.keypoint_embed);
    f(name + ".keypoint_prior", p.keypoint_prior);
  }
  visit(p.query_pos_head, name + ".query_pos_head", f);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string base = name + ".layers." + std::to_string(i);
    auto& l = p.layers[i];
    visit(l.self_attn, base + ".self_attn", f);
    visit(l.norm1, base + ".norm1", f);
    visit(l.cross_attn, base + ".cross_attn", f);
    visit(l.norm2, base + ".norm2", f);
    visit(l.fc1, base + ".fc1", f);
    visit(l.fc2, base + ".fc2", f);
    visit(l.norm3, base + ".norm3", f);
  }
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    const std::string base = name + ".heads." + std::to_string(i);
    auto& h = p.heads[i];
    visit(h.cls, base + ".cls", f);
    visit(h.box, base + ".box", f);
    if (!h.keypoint.weight.empty()) visit(h.keypoint, base + ".keypoint", f);
  }
  if (p.mask_head) {
    visit(p.mask_head->depthwise, name + ".mask_head.depthwise", f);
    visit(p.mask_head->pixel_mlp, name + ".mask_head.pixel_mlp", f);
    visit(p.mask_head->query_mlp, name + ".mask_head.query_mlp", f);
  }
}

}  // namespace ec
