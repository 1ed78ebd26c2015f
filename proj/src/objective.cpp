// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/objective.hpp"

#include <algorithm>
#include <map>

namespace ec {

const LossItem& LossReport::item(const std::string& name) const {
  for (const auto& i : items) {
    if (i.name == name) return i;
  }
  throw ContractError("loss report has no term '" + name + "'");
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& i : items) terms[i.name] = {{"raw", i.raw}, {"weight", i.weight}, {"weighted", i.weighted}};
  return {{"terms", terms}, {"total", total}};
}

std::vector<MatchAssignment> match_layers(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                                          const LossWeights& weights, Task task) {
  std::vector<MatchAssignment> out;
  for (const auto& p : layers) {
    const Task t = task == Task::insseg && p.mask_logits.empty() ? Task::detect : task;
    out.push_back(hungarian(build_cost_matrix(p, gt, weights, t)));
  }
  return out;
}

namespace {

Matrix logits_of(const PredictionSet& p) { return Matrix::from_tensor(p.class_logits); }

double gt_norm(const GroundTruthSet& gt) { return static_cast<double>(std::max<std::size_t>(1, gt.size())); }

struct Accumulator {
  std::vector<std::string> order;
  std::map<std::string, double> sum;
  std::map<std::string, std::size_t> count;

  void add(const std::string& name, double v) {
    if (!sum.count(name)) order.push_back(name);
    sum[name] += v;
    ++count[name];
  }
  void declare(const std::string& name) {
    if (!sum.count(name)) {
      order.push_back(name);
      sum[name] = 0.0;
      count[name] = 0;
    }
  }

  LossReport report(const std::map<std::string, double>& weights) const {
    LossReport r;
    for (const auto& name : order) {
      LossItem item;
      item.name = name;
      item.raw = count.at(name) ? sum.at(name) / static_cast<double>(count.at(name)) : 0.0;
      item.weight = weights.at(name);
      item.weighted = item.weight * item.raw;
      r.total += item.weighted;
      r.items.push_back(item);
    }
    return r;
  }
};

void check_layers(const std::vector<PredictionSet>& layers, const std::vector<MatchAssignment>& matches,
                  const GroundTruthSet& gt) {
  if (layers.empty()) throw ContractError("no decoder layers to supervise");
  if (layers.size() != matches.size()) throw ContractError("one matching per decoder layer required");
  for (const auto& m : matches) {
    if (m.pairs.size() != gt.size()) throw ContractError("matching does not cover every ground truth");
  }
}

void add_box_terms(Accumulator& acc, const PredictionSet& p, const GroundTruthSet& gt, const MatchAssignment& m,
                   const LossHooks& hooks) {
  std::vector<VflTarget> targets(p.class_logits.dim(0));
  double l1 = 0.0, gl = 0.0;
  for (const auto& [g, q] : m.pairs) {
    const Box4 pb = predicted_box(p, q);
    targets[q] = {gt.classes[g], iou(cxcywh_to_xyxy(pb), cxcywh_to_xyxy(gt.boxes[g]))};
    l1 += l1_box_loss(pb, gt.boxes[g]).loss;
    gl += 1.0 - giou(cxcywh_to_xyxy(pb), cxcywh_to_xyxy(gt.boxes[g]));
  }
  acc.add("cls", vfl_cls_loss(logits_of(p), targets).loss);
  acc.add("l1", l1 / gt_norm(gt));
  acc.add("giou", gl / gt_norm(gt));
  acc.add("ddf", hooks.ddf ? hooks.ddf(p, gt, m) : 0.0);
  acc.add("fgl", hooks.fgl ? hooks.fgl(p, gt, m) : 0.0);
}

void add_mask_terms(Accumulator& acc, const PredictionSet& p, const GroundTruthSet& gt, const MatchAssignment& m) {
  if (p.mask_logits.empty()) return;
  double bce = 0.0, dice = 0.0;
  for (const auto& [g, q] : m.pairs) {
    const Matrix z = predicted_mask_logits(p, q);
    Matrix probs(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) probs.values[i] = sigmoid_d(z.values[i]);
    bce += bce_mask_loss(z, gt.masks[g]).loss;
    dice += dice_loss(probs, gt.masks[g]).loss;
  }
  acc.add("mask", bce / gt_norm(gt));
  acc.add("dice", dice / gt_norm(gt));
}

}  // namespace

LossReport total_det_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                          const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                          const LossHooks& hooks) {
  gt.validate(Task::detect);
  check_layers(layers, matches, gt);
  Accumulator acc;
  for (std::size_t l = 0; l < layers.size(); ++l) add_box_terms(acc, layers[l], gt, matches[l], hooks);
  return acc.report({{"cls", weights.cls}, {"l1", weights.l1}, {"giou", weights.giou}, {"ddf", weights.ddf},
                     {"fgl", weights.fgl}});
}

LossReport total_pose_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                           const std::vector<MatchAssignment>& matches, const LossWeights& weights) {
  gt.validate(Task::pose);
  check_layers(layers, matches, gt);
  const std::vector<double> kappa = coco_kappas();
  Accumulator acc;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const PredictionSet& p = layers[l];
    if (p.keypoints.empty()) throw ContractError("pose loss needs predicted keypoints");
    std::vector<VflTarget> targets(p.class_logits.dim(0));
    double kpt = 0.0, oks_term = 0.0;
    for (const auto& [g, q] : matches[l].pairs) {
      const auto pk = predicted_keypoints(p, q);
      const auto& vis = gt.visibility[g];
      kpt += kpt_l1_loss(pk, gt.keypoints[g], vis).loss;
      const bool any = std::any_of(vis.begin(), vis.end(), [](int v) { return v != 0; });
      double o = 0.0;
      if (any) {
        o = oks(pk, gt.keypoints[g], vis, gt.scale[g], std::span<const double>(kappa.data(), pk.size()));
        oks_term += 1.0 - o;
      }
      targets[q] = {0, o};
    }
    acc.add("cls", vfl_cls_loss(logits_of(p), targets).loss);
    acc.add("kpt", kpt / gt_norm(gt));
    acc.add("oks", oks_term / gt_norm(gt));
  }
  return acc.report({{"cls", weights.cls}, {"kpt", weights.kpt}, {"oks", weights.oks}});
}

LossReport total_insseg_loss(const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                             const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                             const LossHooks& hooks) {
  gt.validate(Task::insseg);
  check_layers(layers, matches, gt);
  Accumulator acc;
  acc.declare("cls");
  acc.declare("l1");
  acc.declare("giou");
  acc.declare("ddf");
  acc.declare("fgl");
  acc.declare("mask");
  acc.declare("dice");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    add_box_terms(acc, layers[l], gt, matches[l], hooks);
    add_mask_terms(acc, layers[l], gt, matches[l]);
  }
  return acc.report({{"cls", weights.cls},
                     {"l1", weights.l1},
                     {"giou", weights.giou},
                     {"ddf", weights.ddf},
                     {"fgl", weights.fgl},
                     {"mask", weights.mask},
                     {"dice", weights.dice}});
}

LossReport total_loss(Task task, const std::vector<PredictionSet>& layers, const GroundTruthSet& gt,
                      const std::vector<MatchAssignment>& matches, const LossWeights& weights,
                      const LossHooks& hooks) {
  switch (task) {
    case Task::detect: return total_det_loss(layers, gt, matches, weights, hooks);
    case Task::pose: return total_pose_loss(layers, gt, matches, weights);
    case Task::insseg: return total_insseg_loss(layers, gt, matches, weights, hooks);
  }
  throw ContractError("unknown task");
}

}  // namespace ec
