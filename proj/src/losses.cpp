// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ec {

LossWeights LossWeights::for_task(Task task) {
  LossWeights w;
  switch (task) {
    case Task::detect: w.cls = 1, w.l1 = 5, w.giou = 2, w.ddf = 1.5, w.fgl = 0.15; break;
    case Task::pose: w.cls = 2, w.kpt = 10, w.oks = 4; break;
    case Task::insseg: w.cls = 2, w.l1 = 1, w.giou = 1, w.ddf = 1.5, w.fgl = 0.15, w.mask = 5, w.dice = 5; break;
  }
  return w;
}

void LossWeights::validate() const {
  for (double v : {cls, l1, giou, ddf, fgl, kpt, oks, mask, dice}) {
    if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"cls", cls}, {"l1", l1},   {"giou", giou}, {"ddf", ddf},  {"fgl", fgl},
          {"kpt", kpt}, {"oks", oks}, {"mask", mask}, {"dice", dice}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j, LossWeights w) {
  for (const auto& [key, value] : j.items()) {
    double* slot = key == "cls"    ? &w.cls
                   : key == "l1"   ? &w.l1
                   : key == "giou" ? &w.giou
                   : key == "ddf"  ? &w.ddf
                   : key == "fgl"  ? &w.fgl
                   : key == "kpt"  ? &w.kpt
                   : key == "oks"  ? &w.oks
                   : key == "mask" ? &w.mask
                   : key == "dice" ? &w.dice
                                   : nullptr;
    if (!slot) throw ConfigError("unknown loss weight '" + key + "'");
    if (!value.is_number()) throw ConfigError("loss weight '" + key + "' must be a number");
    *slot = value.get<double>();
  }
  w.validate();
  return w;
}

void GroundTruthSet::validate(Task task) const {
  const std::size_t g = size();
  if (classes.size() != g) throw InputError("ground truth classes/boxes count mismatch");
  for (const auto& b : boxes) {
    for (double v : b) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw InputError("ground truth box outside [0,1]");
    }
  }
  if (task == Task::pose) {
    if (keypoints.size() != g || visibility.size() != g || scale.size() != g) {
      throw ContractError("pose ground truth needs keypoints, visibility and scale per instance");
    }
    for (std::size_t i = 0; i < g; ++i) {
      if (visibility[i].size() != keypoints[i].size()) throw InputError("visibility/keypoint count mismatch");
      for (int v : visibility[i]) {
        if (v != 0 && v != 1) throw InputError("visibility must be 0 or 1");
      }
    }
  }
  if (task == Task::insseg) {
    if (masks.size() != g) throw ContractError("insseg ground truth needs one mask per instance");
    for (const auto& m : masks) {
      for (double v : m.values) {
        if (v != 0.0 && v != 1.0) throw InputError("masks must be binary");
      }
    }
  }
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Box4 cxcywh_to_xyxy(const Box4& b) {
  return {b[0] - 0.5 * b[2], b[1] - 0.5 * b[3], b[0] + 0.5 * b[2], b[1] + 0.5 * b[3]};
}

namespace {

void require_valid(const Box4& b) {
  for (double v : b) {
    if (!std::isfinite(v)) throw InputError("box has a non-finite coordinate");
  }
  if (b[2] < b[0] || b[3] < b[1]) throw InputError("inverted box");
}

struct GiouParts {
  double inter, uni, hull;
  double iw, ih, cw, ch;
};

GiouParts giou_parts(const Box4& a, const Box4& b) {
  require_valid(a);
  require_valid(b);
  GiouParts p{};
  p.iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  p.ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  p.inter = p.iw * p.ih;
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  p.uni = area_a + area_b - p.inter;
  p.cw = std::max(a[2], b[2]) - std::min(a[0], b[0]);
  p.ch = std::max(a[3], b[3]) - std::min(a[1], b[1]);
  p.hull = p.cw * p.ch;
  return p;
}

}  // namespace

double iou(const Box4& a, const Box4& b) {
  const GiouParts p = giou_parts(a, b);
  return p.uni > 0 ? p.inter / p.uni : 0.0;
}

double giou(const Box4& a, const Box4& b) {
  const GiouParts p = giou_parts(a, b);
  const double i = p.uni > 0 ? p.inter / p.uni : 0.0;
  return p.hull > 0 ? i - (p.hull - p.uni) / p.hull : i;
}

BoxLossGrad giou_loss_grad(const Box4& a, const Box4& b) {
  const GiouParts p = giou_parts(a, b);
  BoxLossGrad r;
  if (p.uni <= 0 || p.hull <= 0) {
    r.loss = 1.0 - giou(a, b);
    return r;
  }
  // loss = 2 - I/U - U/C
  r.loss = 2.0 - p.inter / p.uni - p.uni / p.hull;
  const double aw = a[2] - a[0], ah = a[3] - a[1];
  const Box4 d_area = {-ah, -aw, ah, aw};
  Box4 d_iw{}, d_ih{}, d_cw{}, d_ch{};
  if (p.iw > 0 && p.ih > 0) {
    d_iw = {a[0] > b[0] ? -1.0 : 0.0, 0.0, a[2] < b[2] ? 1.0 : 0.0, 0.0};
    d_ih = {0.0, a[1] > b[1] ? -1.0 : 0.0, 0.0, a[3] < b[3] ? 1.0 : 0.0};
  }
  d_cw = {a[0] < b[0] ? -1.0 : 0.0, 0.0, a[2] > b[2] ? 1.0 : 0.0, 0.0};
  d_ch = {0.0, a[1] < b[1] ? -1.0 : 0.0, 0.0, a[3] > b[3] ? 1.0 : 0.0};
  for (int k = 0; k < 4; ++k) {
    const double d_inter = p.ih * d_iw[k] + p.iw * d_ih[k];
    const double d_uni = d_area[k] - d_inter;
    const double d_hull = p.ch * d_cw[k] + p.cw * d_ch[k];
    r.grad[k] = -d_inter / p.uni + p.inter * d_uni / (p.uni * p.uni) - d_uni / p.hull +
                p.uni * d_hull / (p.hull * p.hull);
  }
  return r;
}

BoxLossGrad giou_loss_grad_cxcywh(const Box4& a, const Box4& b) {
  const BoxLossGrad g = giou_loss_grad(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b));
  BoxLossGrad r;
  r.loss = g.loss;
  r.grad = {g.grad[0] + g.grad[2], g.grad[1] + g.grad[3], 0.5 * (g.grad[2] - g.grad[0]),
            0.5 * (g.grad[3] - g.grad[1])};
  return r;
}

BoxLossGrad l1_box_loss(const Box4& pred, const Box4& gt) {
  BoxLossGrad r;
  for (int k = 0; k < 4; ++k) {
    const double d = pred[k] - gt[k];
    r.loss += std::abs(d);
    r.grad[k] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  }
  return r;
}

const std::array<double, 17>& coco_keypoint_sigmas() {
  static const std::array<double, 17> sigmas = {.026, .025, .025, .035, .035, .079, .079, .072, .072,
                                                .062, .062, .107, .107, .087, .087, .089, .089};
  return sigmas;
}

std::vector<double> coco_kappas() {
  std::vector<double> k;
  for (double s : coco_keypoint_sigmas()) k.push_back(2.0 * s);
  return k;
}

namespace {

void check_oks_args(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible,
                    double scale, std::span<const double> kappa) {
  if (pred.size() != gt.size() || visible.size() != gt.size() || kappa.size() != gt.size()) {
    throw DimensionError("oks: keypoint counts differ");
  }
  if (!(scale > 0) || !std::isfinite(scale)) throw InputError("oks: scale must be positive");
  std::size_t nvis = 0;
  for (int v : visible) nvis += v != 0;
  if (nvis == 0) throw InputError("oks undefined: no visible keypoint");
}

}  // namespace

double oks(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible, double scale,
           std::span<const double> kappa) {
  check_oks_args(pred, gt, visible, scale, kappa);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!visible[k]) continue;
    const double dx = pred[k][0] - gt[k][0], dy = pred[k][1] - gt[k][1];
    num += std::exp(-(dx * dx + dy * dy) / (2.0 * scale * scale * kappa[k] * kappa[k]));
    den += 1.0;
  }
  return num / den;
}

PointLossGrad oks_loss_grad(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible,
                            double scale, std::span<const double> kappa) {
  check_oks_args(pred, gt, visible, scale, kappa);
  PointLossGrad r;
  r.grad.assign(gt.size(), Point2{0.0, 0.0});
  double vis = 0.0;
  for (int v : visible) vis += v != 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!visible[k]) continue;
    const double dx = pred[k][0] - gt[k][0], dy = pred[k][1] - gt[k][1];
    const double denom = scale * scale * kappa[k] * kappa[k];
    const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * denom));
    sum += e;
    r.grad[k] = {e * dx / (denom * vis), e * dy / (denom * vis)};
  }
  r.loss = 1.0 - sum / vis;
  return r;
}

PointLossGrad kpt_l1_loss(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible) {
  if (pred.size() != gt.size() || visible.size() != gt.size()) throw DimensionError("kpt_l1: keypoint counts differ");
  PointLossGrad r;
  r.grad.assign(gt.size(), Point2{0.0, 0.0});
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!visible[k]) continue;
    for (int a = 0; a < 2; ++a) {
      const double d = pred[k][a] - gt[k][a];
      r.loss += std::abs(d);
      r.grad[k][a] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  }
  return r;
}

MatrixLossGrad vfl_cls_loss(const Matrix& logits, std::span<const VflTarget> targets, double alpha, double gamma) {
  if (targets.size() != logits.rows) throw DimensionError("vfl: one target per query required");
  std::size_t matched = 0;
  for (const auto& t : targets) {
    if (t.class_index >= 0) {
      if (static_cast<std::size_t>(t.class_index) >= logits.cols) throw InputError("vfl: class index out of range");
      if (!(t.quality >= 0.0 && t.quality <= 1.0)) throw InputError("vfl: quality outside [0,1]");
      ++matched;
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, matched));
  MatrixLossGrad r;
  r.grad = Matrix(logits.rows, logits.cols);
  for (std::size_t n = 0; n < logits.rows; ++n) {
    for (std::size_t c = 0; c < logits.cols; ++c) {
      const double z = logits(n, c);
      const double p = sigmoid_d(z);
      const bool positive = targets[n].class_index == static_cast<int>(c) && targets[n].quality > 0.0;
      double loss, grad;
      if (positive) {
        const double q = targets[n].quality;
        loss = q * (q * softplus(-z) + (1.0 - q) * softplus(z));
        grad = q * (p - q);
      } else {
        const double pg = std::pow(p, gamma);
        const double sp = softplus(z);
        loss = alpha * pg * sp;
        grad = alpha * pg * (p + gamma * (1.0 - p) * sp);
      }
      r.loss += loss;
      r.grad(n, c) = grad / norm;
    }
  }
  r.loss /= norm;
  return r;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) throw DimensionError(std::string(what) + ": shape mismatch");
  if (a.size() == 0) throw DimensionError(std::string(what) + ": empty mask");
}

}  // namespace

MatrixLossGrad bce_mask_loss(const Matrix& logits, const Matrix& gt) {
  require_same_shape(logits, gt, "bce_mask_loss");
  const double n = static_cast<double>(logits.size());
  MatrixLossGrad r;
  r.grad = Matrix(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.values[i], g = gt.values[i];
    r.loss += softplus(z) - g * z;
    r.grad.values[i] = (sigmoid_d(z) - g) / n;
  }
  r.loss /= n;
  return r;
}

MatrixLossGrad dice_loss(const Matrix& probs, const Matrix& gt) {
  require_same_shape(probs, gt, "dice_loss");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs.values[i] * gt.values[i];
    sp += probs.values[i];
    sg += gt.values[i];
  }
  const double a = 2.0 * inter + 1.0, b = sp + sg + 1.0;
  MatrixLossGrad r;
  r.loss = 1.0 - a / b;
  r.grad = Matrix(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.size(); ++i) r.grad.values[i] = -(2.0 * gt.values[i] * b - a) / (b * b);
  return r;
}

DistillLossGrad distill_loss(const Matrix& student, const std::vector<Matrix>& teachers, const Matrix& weight,
                             std::span<const double> bias, bool student_grad) {
  const std::size_t n = student.rows, ds = student.cols, dt = weight.rows;
  if (teachers.empty()) throw ConfigError("distill_loss needs at least one teacher feature");
  if (weight.cols != ds || bias.size() != dt) throw DimensionError("distill adapter shape does not match features");
  for (const auto& t : teachers) {
    if (t.rows != n) throw DimensionError("distill: token counts differ");
    if (t.cols != dt) throw DimensionError("distill: teacher width does not match adapter");
  }
  // Row-times-matrix products are written as axpy loops over contiguous rows.
  Matrix wt(ds, dt);
  for (std::size_t o = 0; o < dt; ++o) {
    for (std::size_t c = 0; c < ds; ++c) wt(c, o) = weight(o, c);
  }
  // Tokens go in groups of four so each adapter row is loaded once per group.
  Matrix y(n, dt);
  for (std::size_t i = 0; i < n; ++i) std::copy(bias.begin(), bias.end(), y.values.begin() + i * dt);
  std::size_t i0 = 0;
  for (; i0 + 4 <= n; i0 += 4) {
    double* y0 = &y.values[i0 * dt];
    double *y1 = y0 + dt, *y2 = y1 + dt, *y3 = y2 + dt;
    for (std::size_t c = 0; c < ds; ++c) {
      const double s0 = student(i0, c), s1 = student(i0 + 1, c), s2 = student(i0 + 2, c), s3 = student(i0 + 3, c);
      const double* wr = &wt.values[c * dt];
      for (std::size_t o = 0; o < dt; ++o) {
        y0[o] += s0 * wr[o];
        y1[o] += s1 * wr[o];
        y2[o] += s2 * wr[o];
        y3[o] += s3 * wr[o];
      }
    }
  }
  for (; i0 < n; ++i0) {
    double* yr = &y.values[i0 * dt];
    for (std::size_t c = 0; c < ds; ++c) {
      const double s = student(i0, c);
      const double* wr = &wt.values[c * dt];
      for (std::size_t o = 0; o < dt; ++o) yr[o] += s * wr[o];
    }
  }
  DistillLossGrad r;
  Matrix gy(n, dt);
  for (const auto& t : teachers) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = y.values[i] - t.values[i];
      r.loss += d * d;
      gy.values[i] += 2.0 * d;
    }
  }
  r.grad_weight = Matrix(dt, ds);
  r.grad_bias.assign(dt, 0.0);
  if (student_grad) r.grad_student = Matrix(n, ds);
  std::size_t j0 = 0;
  for (; j0 + 4 <= n; j0 += 4) {
    const double* s0 = &student.values[j0 * ds];
    const double *s1 = s0 + ds, *s2 = s1 + ds, *s3 = s2 + ds;
    for (std::size_t o = 0; o < dt; ++o) {
      const double g0 = gy(j0, o), g1 = gy(j0 + 1, o), g2 = gy(j0 + 2, o), g3 = gy(j0 + 3, o);
      r.grad_bias[o] += g0 + g1 + g2 + g3;
      double* gw = &r.grad_weight.values[o * ds];
      for (std::size_t c = 0; c < ds; ++c) gw[c] += g0 * s0[c] + g1 * s1[c] + g2 * s2[c] + g3 * s3[c];
    }
  }
  for (; j0 < n; ++j0) {
    const double* sr = &student.values[j0 * ds];
    for (std::size_t o = 0; o < dt; ++o) {
      const double g = gy(j0, o);
      r.grad_bias[o] += g;
      double* gw = &r.grad_weight.values[o * ds];
      for (std::size_t c = 0; c < ds; ++c) gw[c] += g * sr[c];
    }
  }
  if (!student_grad) return r;
  for (std::size_t i = 0; i < n; ++i) {
    double* gs = &r.grad_student.values[i * ds];
    for (std::size_t o = 0; o < dt; ++o) {
      const double g = gy(i, o);
      const double* wr = &weight.values[o * ds];
      for (std::size_t c = 0; c < ds; ++c) gs[c] += g * wr[c];
    }
  }
  return r;
}

}  // namespace ec
