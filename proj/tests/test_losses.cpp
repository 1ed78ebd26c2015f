// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "edgecrafter/losses.hpp"
#include "edgecrafter/tensor.hpp"

using namespace ec;

namespace {

Box4 random_xyxy(Rng& rng) {
  const double x0 = rng.uniform(0.0, 0.7), y0 = rng.uniform(0.0, 0.7);
  return {x0, y0, x0 + rng.uniform(0.05, 0.3), y0 + rng.uniform(0.05, 0.3)};
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("GIoU closed-form values") {
  // Overlap 1, union 7, hull 9.
  CHECK(giou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-12));
  // Disjoint: union 2, hull 9.
  CHECK(giou({0, 0, 1, 1}, {2, 2, 3, 3}) == doctest::Approx(-7.0 / 9.0).epsilon(1e-12));
  CHECK(giou({0.1, 0.2, 0.4, 0.6}, {0.1, 0.2, 0.4, 0.6}) == doctest::Approx(1.0));
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  const Box4 c = cxcywh_to_xyxy({0.5, 0.4, 0.2, 0.4});
  CHECK(c[0] == doctest::Approx(0.4));
  CHECK(c[1] == doctest::Approx(0.2));
  CHECK(c[2] == doctest::Approx(0.6));
  CHECK(c[3] == doctest::Approx(0.6));
}

TEST_CASE("GIoU is symmetric, bounded and invariant to translation and uniform scale") {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const Box4 a = random_xyxy(rng), b = random_xyxy(rng);
    const double g = giou(a, b);
    CHECK(g == doctest::Approx(giou(b, a)).epsilon(1e-12));
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
    CHECK(g <= iou(a, b) + 1e-15);
    const double dx = rng.uniform(-2, 2), dy = rng.uniform(-2, 2), s = rng.uniform(0.2, 5);
    const Box4 at{a[0] + dx, a[1] + dy, a[2] + dx, a[3] + dy}, bt{b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy};
    const Box4 as{a[0] * s, a[1] * s, a[2] * s, a[3] * s}, bs{b[0] * s, b[1] * s, b[2] * s, b[3] * s};
    CHECK(giou(at, bt) == doctest::Approx(g).epsilon(1e-9));
    CHECK(giou(as, bs) == doctest::Approx(g).epsilon(1e-9));
  }
}

TEST_CASE("GIoU loss gradients match central differences") {
  Rng rng(22);
  const double h = 1e-4;
  for (int t = 0; t < 50; ++t) {
    const Box4 a = random_xyxy(rng), b = random_xyxy(rng);
    const BoxLossGrad r = giou_loss_grad(a, b);
    CHECK(r.loss == doctest::Approx(1.0 - giou(a, b)));
    for (std::size_t i = 0; i < 4; ++i) {
      Box4 p = a, m = a;
      p[i] += h;
      m[i] -= h;
      const double fd = (giou_loss_grad(p, b).loss - giou_loss_grad(m, b).loss) / (2 * h);
      CHECK(r.grad[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
    const Box4 ac{0.5 * (a[0] + a[2]), 0.5 * (a[1] + a[3]), a[2] - a[0], a[3] - a[1]};
    const Box4 bc{0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]), b[2] - b[0], b[3] - b[1]};
    const BoxLossGrad rc = giou_loss_grad_cxcywh(ac, bc);
    for (std::size_t i = 0; i < 4; ++i) {
      Box4 p = ac, m = ac;
      p[i] += h;
      m[i] -= h;
      const double fd = (giou_loss_grad_cxcywh(p, bc).loss - giou_loss_grad_cxcywh(m, bc).loss) / (2 * h);
      CHECK(rc.grad[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("box L1 sums absolute differences") {
  const BoxLossGrad r = l1_box_loss({0.5, 0.5, 0.2, 0.2}, {0.4, 0.6, 0.2, 0.5});
  CHECK(r.loss == doctest::Approx(0.1 + 0.1 + 0.0 + 0.3));
  CHECK(r.grad[0] == 1.0);
  CHECK(r.grad[1] == -1.0);
  CHECK(r.grad[3] == -1.0);
  CHECK(l1_box_loss({0.3, 0.3, 0.1, 0.1}, {0.3, 0.3, 0.1, 0.1}).loss == 0.0);
}

TEST_CASE("OKS of a single keypoint at the falloff distance") {
  // d^2 = s^2 k^2 gives exp(-1/2).
  const double s = 0.3, k = 0.05;
  const std::vector<Point2> gt{{0.5, 0.5}}, pred{{0.5 + s * k, 0.5}};
  const std::vector<int> vis{1};
  const std::vector<double> kappa{k};
  CHECK(oks(pred, gt, vis, s, kappa) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(oks(gt, gt, vis, s, kappa) == doctest::Approx(1.0));
}

TEST_CASE("OKS ignores invisible keypoints, is scale invariant and decreases with distance") {
  const auto kappa = coco_kappas();
  REQUIRE(kappa.size() == 17);
  CHECK(kappa[0] == doctest::Approx(2 * coco_keypoint_sigmas()[0]));
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    std::vector<Point2> gt(17), pred(17);
    std::vector<int> vis(17);
    for (std::size_t k = 0; k < 17; ++k) {
      gt[k] = {rng.uniform(), rng.uniform()};
      pred[k] = {gt[k][0] + 0.02 * rng.normal(), gt[k][1] + 0.02 * rng.normal()};
      vis[k] = k % 3 ? 1 : 0;
    }
    const double s = rng.uniform(0.1, 0.5);
    const double base = oks(pred, gt, vis, s, kappa);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    // Moving an invisible keypoint changes nothing.
    auto moved = pred;
    moved[0] = {9.0, 9.0};
    CHECK(oks(moved, gt, vis, s, kappa) == doctest::Approx(base).epsilon(1e-12));
    // Scaling coordinates and scale together.
    const double a = rng.uniform(0.5, 3.0);
    auto ps = pred, gs = gt;
    for (auto& p : ps) p = {p[0] * a, p[1] * a};
    for (auto& p : gs) p = {p[0] * a, p[1] * a};
    CHECK(oks(ps, gs, vis, s * a, kappa) == doctest::Approx(base).epsilon(1e-9));
    // Pushing every visible keypoint further away lowers OKS.
    auto far = pred;
    for (std::size_t k = 0; k < 17; ++k) far[k] = {gt[k][0] + 2 * (pred[k][0] - gt[k][0]), gt[k][1] + 2 * (pred[k][1] - gt[k][1])};
    CHECK(oks(far, gt, vis, s, kappa) <= base);
  }
}

TEST_CASE("OKS loss gradient matches central differences") {
  const auto kappa = coco_kappas();
  Rng rng(24);
  std::vector<Point2> gt(17), pred(17);
  std::vector<int> vis(17, 1);
  for (std::size_t k = 0; k < 17; ++k) {
    gt[k] = {rng.uniform(), rng.uniform()};
    pred[k] = {gt[k][0] + 0.01 * rng.normal(), gt[k][1] + 0.01 * rng.normal()};
  }
  const double s = 0.4, h = 1e-7;
  const PointLossGrad r = oks_loss_grad(pred, gt, vis, s, kappa);
  CHECK(r.loss == doctest::Approx(1.0 - oks(pred, gt, vis, s, kappa)));
  for (std::size_t k = 0; k < 17; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      auto p = pred, m = pred;
      p[k][c] += h;
      m[k][c] -= h;
      const double fd = (oks_loss_grad(p, gt, vis, s, kappa).loss - oks_loss_grad(m, gt, vis, s, kappa).loss) / (2 * h);
      CHECK(r.grad[k][c] == doctest::Approx(fd).epsilon(1e-4).scale(1e-3));
    }
  }
}

TEST_CASE("keypoint L1 counts visible keypoints only") {
  const std::vector<Point2> gt{{0.5, 0.5}, {0.2, 0.2}, {0.0, 0.0}};
  const std::vector<Point2> pred{{0.6, 0.4}, {0.3, 0.2}, {1.0, 1.0}};
  const std::vector<int> vis{1, 1, 0};
  const PointLossGrad r = kpt_l1_loss(pred, gt, vis);
  CHECK(r.loss == doctest::Approx(0.3));
  CHECK(r.grad[2][0] == 0.0);
  CHECK(r.grad[0][0] == 1.0);
  CHECK(r.grad[0][1] == -1.0);
}

TEST_CASE("varifocal loss matches a scalar recomputation") {
  Matrix logits(3, 2);
  logits.values = {0.0, 1.2, -0.7, 0.4, 2.0, -3.0};
  const std::vector<VflTarget> targets{{0, 0.5}, {-1, 0.0}, {1, 0.8}};
  const double a = 0.75, g = 2.0;
  double want = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      const double p = sig(logits(n, c));
      if (targets[n].class_index == static_cast<int>(c)) {
        const double q = targets[n].quality;
        want += q * (-q * std::log(p) - (1 - q) * std::log(1 - p));
      } else {
        want += a * std::pow(p, g) * -std::log(1 - p);
      }
    }
  }
  want /= 2.0;  // two matched queries
  const MatrixLossGrad r = vfl_cls_loss(logits, targets);
  CHECK(r.loss == doctest::Approx(want).epsilon(1e-12));
  // q = p = 0.5 for the first entry: q * BCE(0.5, 0.5) = 0.5 ln 2.
  const std::vector<VflTarget> one{{0, 0.5}};
  Matrix z(1, 1, 0.0);
  CHECK(vfl_cls_loss(z, one).loss == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
  // No matches normalizes by one.
  const std::vector<VflTarget> none{{-1, 0.0}};
  CHECK(vfl_cls_loss(z, none).loss == doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-12));

  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Matrix p = logits, m = logits;
    p.values[i] += h;
    m.values[i] -= h;
    const double fd = (vfl_cls_loss(p, targets).loss - vfl_cls_loss(m, targets).loss) / (2 * h);
    CHECK(r.grad.values[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
  }
  CHECK_THROWS_AS(vfl_cls_loss(logits, std::vector<VflTarget>{{0, 0.5}}), DimensionError);
  CHECK_THROWS_AS(vfl_cls_loss(z, std::vector<VflTarget>{{3, 0.5}}), InputError);
  CHECK_THROWS_AS(vfl_cls_loss(z, std::vector<VflTarget>{{0, 1.5}}), InputError);
}

TEST_CASE("mask BCE and dice") {
  Matrix gt(2, 3);
  gt.values = {1, 0, 1, 0, 0, 1};
  Matrix logits(2, 3);
  logits.values = {0.3, -1.0, 2.0, 0.5, -0.2, 1.1};
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double p = sig(logits.values[i]);
    want -= gt.values[i] * std::log(p) + (1 - gt.values[i]) * std::log(1 - p);
  }
  CHECK(bce_mask_loss(logits, gt).loss == doctest::Approx(want / 6).epsilon(1e-12));

  Matrix probs(2, 3);
  for (std::size_t i = 0; i < 6; ++i) probs.values[i] = sig(logits.values[i]);
  const double inter = probs.values[0] + probs.values[2] + probs.values[5];
  const double sp = probs.values[0] + probs.values[1] + probs.values[2] + probs.values[3] + probs.values[4] + probs.values[5];
  const MatrixLossGrad d = dice_loss(probs, gt);
  CHECK(d.loss == doctest::Approx(1.0 - (2 * inter + 1) / (sp + 3 + 1)).epsilon(1e-12));
  CHECK(dice_loss(gt, gt).loss == doctest::Approx(0.0));
  CHECK(d.loss >= 0.0);
  CHECK(d.loss <= 1.0);

  // Same pixel permutation on both maps leaves dice unchanged.
  Matrix pp(2, 3), gp(2, 3);
  const std::size_t perm[6] = {4, 2, 0, 5, 1, 3};
  for (std::size_t i = 0; i < 6; ++i) {
    pp.values[i] = probs.values[perm[i]];
    gp.values[i] = gt.values[perm[i]];
  }
  CHECK(dice_loss(pp, gp).loss == doctest::Approx(d.loss).epsilon(1e-12));

  const double h = 1e-6;
  for (std::size_t i = 0; i < 6; ++i) {
    Matrix p = probs, m = probs;
    p.values[i] += h;
    m.values[i] -= h;
    CHECK(d.grad.values[i] == doctest::Approx((dice_loss(p, gt).loss - dice_loss(m, gt).loss) / (2 * h)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(dice_loss(Matrix(2, 2), gt), DimensionError);
}

TEST_CASE("distillation loss is zero at the target and minimized by least squares") {
  Rng rng(25);
  Matrix s(6, 3), w(2, 3);
  for (auto& v : s.values) v = 1 * rng.normal();
  for (auto& v : w.values) v = 1 * rng.normal();
  const std::vector<double> b{0.1, -0.2};
  Matrix t(6, 2);
  for (std::size_t n = 0; n < 6; ++n) {
    for (std::size_t d = 0; d < 2; ++d) {
      double acc = b[d];
      for (std::size_t k = 0; k < 3; ++k) acc += s(n, k) * w(d, k);
      t(n, d) = acc;
    }
  }
  const DistillLossGrad z = distill_loss(s, {t, t}, w, b);
  CHECK(z.loss == doctest::Approx(0.0).scale(1.0));
  for (double v : z.grad_weight.values) CHECK(v == doctest::Approx(0.0).scale(1.0));

  // Two teachers: the optimum targets their mean, so the loss there equals
  // the spread term sum ||T_l - mean||^2.
  Matrix t2 = t;
  for (auto& v : t2.values) v += 1.0;
  const std::vector<double> mid{b[0] + 0.5, b[1] + 0.5};
  const DistillLossGrad at_mid = distill_loss(s, {t, t2}, w, mid);
  CHECK(at_mid.loss == doctest::Approx(2 * 6 * 2 * 0.25).epsilon(1e-10));
  for (double v : at_mid.grad_bias) CHECK(v == doctest::Approx(0.0).scale(1.0));
  CHECK(distill_loss(s, {t, t2}, w, b).loss > at_mid.loss);

  // Gradient in the adapter weight.
  const double h = 1e-6;
  const DistillLossGrad r = distill_loss(s, {t2}, w, b);
  for (std::size_t i = 0; i < w.size(); ++i) {
    Matrix p = w, m = w;
    p.values[i] += h;
    m.values[i] -= h;
    const double fd = (distill_loss(s, {t2}, p, b, false).loss - distill_loss(s, {t2}, m, b, false).loss) / (2 * h);
    CHECK(r.grad_weight.values[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(distill_loss(s, {t2}, w, b, false).grad_student.size() == 0);
}

TEST_CASE("task loss weights") {
  const LossWeights d = LossWeights::for_task(Task::detect);
  CHECK(d.cls == 1.0);
  CHECK(d.l1 == 5.0);
  CHECK(d.giou == 2.0);
  CHECK(d.ddf == 1.5);
  CHECK(d.fgl == 0.15);
  const LossWeights p = LossWeights::for_task(Task::pose);
  CHECK(p.cls == 2.0);
  CHECK(p.kpt == 10.0);
  CHECK(p.oks == 4.0);
  const LossWeights s = LossWeights::for_task(Task::insseg);
  CHECK(s.cls == 2.0);
  CHECK(s.l1 == 1.0);
  CHECK(s.giou == 1.0);
  CHECK(s.mask == 5.0);
  CHECK(s.dice == 5.0);

  const LossWeights j = LossWeights::from_json(nlohmann::json{{"giou", 4.0}}, d);
  CHECK(j.giou == 4.0);
  CHECK(j.l1 == 5.0);
  CHECK_THROWS_AS(LossWeights::from_json(nlohmann::json{{"nope", 1.0}}, d), ConfigError);
  LossWeights neg = d;
  neg.l1 = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}
