// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ec {

std::string to_string(TeacherKind t) {
  switch (t) {
    case TeacherKind::mockS: return "mockS";
    case TeacherKind::mockB: return "mockB";
    case TeacherKind::linear_probe: return "linear_probe";
  }
  return "?";
}

TeacherKind parse_teacher(const std::string& s) {
  if (s == "mockS") return TeacherKind::mockS;
  if (s == "mockB") return TeacherKind::mockB;
  if (s == "linear_probe" || s == "linear-probe") return TeacherKind::linear_probe;
  throw ConfigError("unknown teacher '" + s + "' (expected mockS, mockB, linear-probe)");
}

std::size_t teacher_dim(TeacherKind t) {
  switch (t) {
    case TeacherKind::mockS: return 384;
    case TeacherKind::mockB: return 768;
    case TeacherKind::linear_probe: return 0;
  }
  return 0;
}

DistillConfig DistillConfig::for_variant(VitVariant v, TeacherKind teacher) {
  DistillConfig c;
  c.teacher = teacher;
  c.base_lr = (v == VitVariant::T || v == VitVariant::TPlus) ? 4.0 : 9.0;
  return c;
}

void DistillConfig::validate() const {
  if (!(base_lr > 0) || batch == 0 || epochs == 0) throw ConfigError("distill: base_lr, batch and epochs must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("distill: warmup must be shorter than training");
  if (!(final_lr_fraction > 0 && final_lr_fraction <= 1)) throw ConfigError("distill: final_lr_fraction in (0,1]");
  if (weight_decay < 0) throw ConfigError("distill: weight_decay must be nonnegative");
  if (aligned_teacher_layers < 1 || aligned_teacher_layers > 4) {
    throw ConfigError("distill: aligned_teacher_layers must be 1 to 4");
  }
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("distill: momentum in [0,1)");
}

nlohmann::json DistillConfig::to_json() const {
  return {{"teacher", to_string(teacher)},
          {"base_lr", base_lr},
          {"batch", batch},
          {"epochs", epochs},
          {"warmup_epochs", warmup_epochs},
          {"final_lr_fraction", final_lr_fraction},
          {"weight_decay", weight_decay},
          {"aligned_teacher_layers", aligned_teacher_layers},
          {"momentum", momentum},
          {"peak_lr", peak_lr(*this)}};
}

double peak_lr(const DistillConfig& config) {
  return config.base_lr * std::sqrt(static_cast<double>(config.batch) / kReferenceBatch);
}

std::size_t warmup_steps(std::size_t total_steps, const DistillConfig& config) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(total_steps) *
                                               static_cast<double>(config.warmup_epochs) /
                                               static_cast<double>(config.epochs)));
}

double lr_at(std::size_t step, std::size_t total_steps, const DistillConfig& config) {
  if (step > total_steps) throw InputError("lr_at: step beyond the schedule");
  const double peak = peak_lr(config);
  const std::size_t warm = warmup_steps(total_steps, config);
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  const double floor = config.final_lr_fraction * peak;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lars_trust_ratio(std::span<const double> param, std::span<const double> grad, double weight_decay, double eps) {
  double pn = 0.0, gn = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double u = grad[i] + weight_decay * param[i];
    pn += param[i] * param[i];
    gn += u * u;
  }
  pn = std::sqrt(pn);
  if (pn == 0.0) return 1.0;
  return pn / (std::sqrt(gn) + eps);
}

void lars_step(std::span<double> param, std::span<const double> grad, double lr, double weight_decay,
               std::vector<double>& momentum_buffer, double momentum, bool layer_adaptation) {
  if (param.size() != grad.size()) throw DimensionError("lars_step: parameter and gradient sizes differ");
  if (momentum_buffer.size() != param.size()) momentum_buffer.assign(param.size(), 0.0);
  const double wd = layer_adaptation ? weight_decay : 0.0;
  const double trust = layer_adaptation ? lars_trust_ratio(param, grad, wd) : 1.0;
  const double local = lr * trust;
  for (std::size_t i = 0; i < param.size(); ++i) {
    momentum_buffer[i] = momentum * momentum_buffer[i] + local * (grad[i] + wd * param[i]);
    param[i] -= momentum_buffer[i];
  }
}

Teacher build_teacher(TeacherKind kind, std::size_t student_dim, Rng& rng) {
  Teacher t;
  t.kind = kind;
  if (kind == TeacherKind::linear_probe) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(student_dim));
    t.probe = Matrix(student_dim, student_dim);
    for (auto& v : t.probe.values) v = rng.uniform(-bound, bound);
    return t;
  }
  t.config = BackboneConfig::for_variant(VitVariant::S);
  t.config.embed_dim = teacher_dim(kind);
  t.config.heads = static_cast<int>(t.config.embed_dim / 64);
  t.config.ffn_ratio = 4;
  t.config.register_count = 4;
  t.config.patch_embed = PatchEmbed::vanilla16;
  t.params = build_backbone(t.config, rng);
  return t;
}

namespace {

Matrix to_matrix(const Tensor& t) { return Matrix::from_tensor(t); }

}  // namespace

std::vector<Matrix> teacher_features(const Teacher& teacher, const Tensor& image, const Matrix& student_final,
                                     std::size_t layers) {
  std::vector<Matrix> out;
  if (teacher.kind == TeacherKind::linear_probe) {
    const Matrix& a = teacher.probe;
    if (a.cols != student_final.cols) throw DimensionError("linear probe width does not match the student");
    Matrix y(student_final.rows, a.rows);
    for (std::size_t i = 0; i < y.rows; ++i) {
      for (std::size_t o = 0; o < a.rows; ++o) {
        double acc = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) acc += student_final(i, c) * a(o, c);
        y(i, o) = acc;
      }
    }
    out.assign(layers, y);
    return out;
  }
  const BackboneOutput f = backbone_forward(image, teacher.params, teacher.config);
  const std::size_t depth = f.block_tokens.size();
  if (layers > depth) throw ConfigError("more aligned layers than teacher blocks");
  for (std::size_t l = depth - layers; l < depth; ++l) out.push_back(to_matrix(f.spatial_tokens(l)));
  return out;
}

DistillRun run_distillation(const BackboneConfig& student_config, const BackboneParams& student,
                            const Teacher& teacher, const std::vector<Tensor>& images, const DistillConfig& config,
                            Rng& rng, const DistillOptions& options) {
  config.validate();
  if (images.empty()) throw InputError("distillation needs at least one image");
  const std::size_t ds = student_config.embed_dim;

  std::vector<Matrix> s_feats;
  std::vector<std::vector<Matrix>> t_feats;
  for (const auto& img : images) {
    const BackboneOutput out = backbone_forward(img, student, student_config);
    s_feats.push_back(to_matrix(out.spatial_tokens(out.block_tokens.size() - 1)));
    t_feats.push_back(teacher_features(teacher, img, s_feats.back(), config.aligned_teacher_layers));
    if (t_feats.back().front().rows != s_feats.back().rows) {
      throw DimensionError("teacher and student token counts differ");
    }
  }
  const std::size_t dt = t_feats.front().front().cols;

  DistillRun run;
  run.adapter_weight = Matrix(dt, ds);
  run.adapter_bias.assign(dt, 0.0);
  if (!options.zero_adapter) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(ds));
    for (auto& v : run.adapter_weight.values) v = rng.uniform(-bound, bound);
  }

  // Per-token loss averaged over the images of a batch.
  auto batch_loss = [&](std::span<const std::size_t> idx, Matrix* gw, std::vector<double>* gb) {
    double loss = 0.0;
    if (gw) *gw = Matrix(dt, ds);
    if (gb) gb->assign(dt, 0.0);
    for (std::size_t i : idx) {
      const auto r = distill_loss(s_feats[i], t_feats[i], run.adapter_weight, run.adapter_bias, false);
      const double norm = static_cast<double>(s_feats[i].rows) * static_cast<double>(idx.size());
      loss += r.loss / norm;
      if (gw) {
        for (std::size_t k = 0; k < gw->size(); ++k) gw->values[k] += r.grad_weight.values[k] / norm;
      }
      if (gb) {
        for (std::size_t k = 0; k < dt; ++k) (*gb)[k] += r.grad_bias[k] / norm;
      }
    }
    return loss;
  };

  const std::size_t n = images.size();
  const std::size_t batch = std::min(config.batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> mw, mb;
  Matrix gw;
  std::vector<double> gb;
  std::size_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      epoch_sum += batch_loss(idx, &gw, &gb) * static_cast<double>(hi - lo);
      const double lr = lr_at(step, total, config);
      lars_step(run.adapter_weight.values, gw.values, lr, config.weight_decay, mw, config.momentum, true);
      lars_step(run.adapter_bias, gb, lr, 0.0, mb, config.momentum, true);
      ++step;
    }
    run.epoch_loss.push_back(epoch_sum / static_cast<double>(n));
  }
  run.steps = step;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  run.final_loss = batch_loss(all, nullptr, nullptr);
  return run;
}

}  // namespace ec
