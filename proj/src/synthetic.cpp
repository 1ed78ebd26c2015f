// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace ec {

namespace {

constexpr float kConfidentLogit = 40.0f;

// Kept out of line: g++ 11 at -O3 -march=native folds the inlined double-float-double
// round trip in a vectorized initializer into the identity.
[[gnu::noinline]] double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Matrix rasterize_box(const Box4& b, std::size_t h, std::size_t w) {
  Matrix m(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const double y0 = static_cast<double>(y) / h, y1 = static_cast<double>(y + 1) / h;
    const double cover_y = std::max(0.0, std::min(y1, b[3]) - std::max(y0, b[1])) * h;
    for (std::size_t x = 0; x < w; ++x) {
      const double x0 = static_cast<double>(x) / w, x1 = static_cast<double>(x + 1) / w;
      const double cover_x = std::max(0.0, std::min(x1, b[2]) - std::max(x0, b[0])) * w;
      m(y, x) = cover_x * cover_y >= 0.5 ? 1.0 : 0.0;
    }
  }
  return m;
}

GroundTruthSet random_scene(Task task, const SceneOptions& o, Rng& rng) {
  if (o.num_classes <= 0) throw InputError("scene needs at least one class");
  if (task == Task::insseg && (o.mask_h == 0 || o.mask_w == 0)) throw InputError("insseg scene needs a mask size");
  GroundTruthSet gt;
  for (std::size_t g = 0; g < o.objects; ++g) {
    double x0 = rng.uniform(), x1 = rng.uniform(), y0 = rng.uniform(), y1 = rng.uniform();
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    // Widen to the minimum side, shifting back inside the image.
    auto widen = [&](double& lo, double& hi) {
      if (hi - lo >= o.min_side) return;
      const double c = std::clamp(0.5 * (lo + hi), 0.5 * o.min_side, 1.0 - 0.5 * o.min_side);
      lo = c - 0.5 * o.min_side;
      hi = c + 0.5 * o.min_side;
    };
    widen(x0, x1);
    widen(y0, y1);
    // Annotations are float32-representable so float predictions can match them exactly.
    const Box4 box{to_f32(0.5 * (x0 + x1)), to_f32(0.5 * (y0 + y1)), to_f32(x1 - x0), to_f32(y1 - y0)};
    const Box4 xyxy = cxcywh_to_xyxy(box);
    gt.boxes.push_back(box);
    gt.classes.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(o.num_classes))));
    gt.scale.push_back(std::sqrt(box[2] * box[3]));
    if (task == Task::pose) {
      std::vector<Point2> pts(o.keypoints);
      std::vector<int> vis(o.keypoints);
      bool any = false;
      for (std::size_t k = 0; k < o.keypoints; ++k) {
        pts[k] = {to_f32(rng.uniform(xyxy[0], xyxy[2])), to_f32(rng.uniform(xyxy[1], xyxy[3]))};
        vis[k] = rng.bernoulli(o.visibility) ? 1 : 0;
        any = any || vis[k];
      }
      if (!any && !vis.empty()) vis[rng.index(vis.size())] = 1;
      gt.keypoints.push_back(std::move(pts));
      gt.visibility.push_back(std::move(vis));
    }
    if (task == Task::insseg) gt.masks.push_back(rasterize_box(xyxy, o.mask_h, o.mask_w));
  }
  return gt;
}

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor img({3, h, w});
  for (float& v : img.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return img;
}

PredictionSet perfect_predictions(const GroundTruthSet& gt, Task task, std::size_t queries, int num_classes) {
  const std::size_t g = gt.size();
  if (g > queries) throw InputError("more ground truths than queries");
  const auto nc = static_cast<std::size_t>(num_classes);
  PredictionSet p;
  p.class_logits = Tensor::filled({queries, nc}, -kConfidentLogit);
  p.boxes = Tensor::filled({queries, 4}, 0.5f);
  for (std::size_t i = 0; i < g; ++i) {
    p.class_logits[i * nc + static_cast<std::size_t>(gt.classes[i])] = kConfidentLogit;
    for (std::size_t c = 0; c < 4; ++c) p.boxes[i * 4 + c] = static_cast<float>(gt.boxes[i][c]);
  }
  if (task == Task::pose) {
    const std::size_t k = g ? gt.keypoints[0].size() : 17;
    p.keypoints = Tensor::filled({queries, k, 3}, 0.5f);
    for (std::size_t i = 0; i < g; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        p.keypoints[(i * k + j) * 3] = static_cast<float>(gt.keypoints[i][j][0]);
        p.keypoints[(i * k + j) * 3 + 1] = static_cast<float>(gt.keypoints[i][j][1]);
        p.keypoints[(i * k + j) * 3 + 2] = gt.visibility[i][j] ? 1.0f : 0.0f;
      }
    }
  }
  if (task == Task::insseg) {
    if (g == 0) throw InputError("perfect insseg predictions need a mask size");
    const std::size_t h = gt.masks[0].rows, w = gt.masks[0].cols;
    p.mask_logits = Tensor::filled({queries, h, w}, -kConfidentLogit);
    for (std::size_t i = 0; i < g; ++i) {
      for (std::size_t j = 0; j < h * w; ++j) {
        p.mask_logits[i * h * w + j] = gt.masks[i].values[j] > 0.5 ? kConfidentLogit : -kConfidentLogit;
      }
    }
  }
  return p;
}

PredictionSet random_predictions(Task task, std::size_t queries, int num_classes, std::size_t keypoints,
                                 std::size_t mask_h, std::size_t mask_w, Rng& rng) {
  PredictionSet p;
  p.class_logits = normal_tensor({queries, static_cast<std::size_t>(num_classes)}, 2.0, rng);
  p.boxes = Tensor({queries, 4});
  for (std::size_t q = 0; q < queries; ++q) {
    const double cx = rng.uniform(0.1, 0.9), cy = rng.uniform(0.1, 0.9);
    const double w = rng.uniform(0.02, 2 * std::min(cx, 1 - cx)), h = rng.uniform(0.02, 2 * std::min(cy, 1 - cy));
    const double box[4] = {cx, cy, w, h};
    for (std::size_t c = 0; c < 4; ++c) p.boxes[q * 4 + c] = static_cast<float>(box[c]);
  }
  if (task == Task::pose) {
    p.keypoints = Tensor({queries, keypoints, 3});
    for (float& v : p.keypoints.values()) v = static_cast<float>(rng.uniform());
  }
  if (task == Task::insseg) p.mask_logits = normal_tensor({queries, mask_h, mask_w}, 3.0, rng);
  return p;
}

}  // namespace ec
