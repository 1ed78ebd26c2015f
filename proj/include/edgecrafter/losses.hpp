// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <vector>

#include <json.hpp>

#include "edgecrafter/decoder.hpp"
#include "edgecrafter/matrix.hpp"

namespace ec {

struct LossWeights {
  double cls = 0, l1 = 0, giou = 0, ddf = 0, fgl = 0, kpt = 0, oks = 0, mask = 0, dice = 0;

  static LossWeights for_task(Task task);
  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j, LossWeights base);
};

using Box4 = std::array<double, 4>;
using Point2 = std::array<double, 2>;

/// Annotations of one image. Boxes are normalized cxcywh.
struct GroundTruthSet {
  std::vector<Box4> boxes;
  std::vector<int> classes;
  std::vector<std::vector<Point2>> keypoints;  // [G][K], pose only
  std::vector<std::vector<int>> visibility;    // [G][K] in {0,1}, pose only
  std::vector<Matrix> masks;                   // [G] binary [Hm, Wm], insseg only
  std::vector<double> scale;                   // [G] person scale, sqrt of box area

  std::size_t size() const { return boxes.size(); }
  void validate(Task task) const;
};

Box4 cxcywh_to_xyxy(const Box4& b);

/// Generalized IoU of two xyxy boxes.
double giou(const Box4& a, const Box4& b);
double iou(const Box4& a, const Box4& b);

struct BoxLossGrad {
  double loss = 0;
  Box4 grad{};
};

/// 1 - GIoU and its gradient with respect to `a` (xyxy).
BoxLossGrad giou_loss_grad(const Box4& a, const Box4& b);
/// Same on cxcywh boxes; the gradient is with respect to a's cxcywh.
BoxLossGrad giou_loss_grad_cxcywh(const Box4& a, const Box4& b);

/// Sum of absolute coordinate differences, with its (sub)gradient in `pred`.
BoxLossGrad l1_box_loss(const Box4& pred, const Box4& gt);

/// Per-keypoint sigmas of the 17 COCO keypoints.
const std::array<double, 17>& coco_keypoint_sigmas();
/// Falloff constants used by OKS, twice the sigmas.
std::vector<double> coco_kappas();

double oks(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible, double scale,
           std::span<const double> kappa);

struct PointLossGrad {
  double loss = 0;
  std::vector<Point2> grad;
};

/// 1 - OKS with its gradient in `pred`.
PointLossGrad oks_loss_grad(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible,
                            double scale, std::span<const double> kappa);

/// Visibility-weighted L1 over keypoints, with its (sub)gradient in `pred`.
PointLossGrad kpt_l1_loss(std::span<const Point2> pred, std::span<const Point2> gt, std::span<const int> visible);

/// Per-query classification target. class_index < 0 marks an unmatched query.
struct VflTarget {
  int class_index = -1;
  double quality = 0.0;
};

inline constexpr double kVflAlpha = 0.75;
inline constexpr double kVflGamma = 2.0;

struct MatrixLossGrad {
  double loss = 0;
  Matrix grad;
};

/// Varifocal-style loss over [N, classes] logits, normalized by the number of
/// matched queries (at least one).
MatrixLossGrad vfl_cls_loss(const Matrix& logits, std::span<const VflTarget> targets, double alpha = kVflAlpha,
                            double gamma = kVflGamma);

/// Mean per-pixel binary cross-entropy on logits, gradient in the logits.
MatrixLossGrad bce_mask_loss(const Matrix& logits, const Matrix& gt);
/// 1 - (2 sum(p g) + 1) / (sum p + sum g + 1), gradient in the probabilities.
MatrixLossGrad dice_loss(const Matrix& probs, const Matrix& gt);

struct DistillLossGrad {
  double loss = 0;
  Matrix grad_weight;   // [Dt, Ds]
  std::vector<double> grad_bias;  // [Dt]
  Matrix grad_student;  // [n, Ds]
};

/// sum over teachers of ||S W^T + b - T_l||_F^2 for student tokens S [n, Ds],
/// adapter W [Dt, Ds] and b [Dt]. grad_student is left empty unless requested.
DistillLossGrad distill_loss(const Matrix& student, const std::vector<Matrix>& teachers, const Matrix& weight,
                             std::span<const double> bias, bool student_grad = true);

double softplus(double x);
double sigmoid_d(double x);

}  // namespace ec
