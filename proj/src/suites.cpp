// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/suites.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "edgecrafter/synthetic.hpp"

namespace ec {

namespace {

using Fn = std::function<double(const std::vector<double>&)>;

// 1e-4 leaves O(h^2) truncation near 1e-4 on tight OKS Gaussians; rounding at 1e-6 stays below 1e-8.
constexpr double kStep = 1e-6;

std::vector<double> numeric_grad(const Fn& f, std::vector<double> x) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + kStep;
    const double up = f(x);
    x[i] = x0 - kStep;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * kStep);
  }
  return g;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

// Coordinates closer than this to a kink of min/max/abs are resampled.
constexpr double kKinkMargin = 1e-3;

bool separated(std::initializer_list<double> v) {
  std::vector<double> s(v);
  std::sort(s.begin(), s.end());
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] - s[i - 1] < kKinkMargin) return false;
  }
  return true;
}

Box4 random_xyxy(Rng& rng) {
  const double x0 = rng.uniform(0.0, 0.7), y0 = rng.uniform(0.0, 0.7);
  return {x0, y0, x0 + rng.uniform(0.05, 0.3), y0 + rng.uniform(0.05, 0.3)};
}

std::pair<Box4, Box4> nondegenerate_pair(Rng& rng) {
  for (;;) {
    const Box4 a = random_xyxy(rng), b = random_xyxy(rng);
    if (separated({a[0], a[2], b[0], b[2]}) && separated({a[1], a[3], b[1], b[3]})) return {a, b};
  }
}

Box4 to_box(const std::vector<double>& x) { return {x[0], x[1], x[2], x[3]}; }
std::vector<double> to_vec(const Box4& b) { return {b.begin(), b.end()}; }

std::vector<Point2> to_points(const std::vector<double>& x) {
  std::vector<Point2> p(x.size() / 2);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = {x[2 * i], x[2 * i + 1]};
  return p;
}

std::vector<double> flatten(const std::vector<Point2>& p) {
  std::vector<double> x;
  for (const auto& q : p) x.insert(x.end(), q.begin(), q.end());
  return x;
}

Matrix random_matrix(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.values) v = scale * rng.normal();
  return m;
}

Matrix random_binary(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.values) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

Matrix with_values(const Matrix& shape, const std::vector<double>& x) {
  Matrix m(shape.rows, shape.cols);
  m.values = x;
  return m;
}

using Check = std::function<double(Rng&)>;

struct Case {
  const char* name;
  double tolerance;
  Check check;
};

std::vector<Case> gradcheck_cases() {
  std::vector<Case> cases;
  cases.push_back({"giou_xyxy", 1e-4, [](Rng& rng) {
                     const auto [a, b] = nondegenerate_pair(rng);
                     const Fn f = [&](const std::vector<double>& x) { return giou_loss_grad(to_box(x), b).loss; };
                     return rel_error(to_vec(giou_loss_grad(a, b).grad), numeric_grad(f, to_vec(a)));
                   }});
  cases.push_back({"giou_cxcywh", 1e-4, [](Rng& rng) {
                     const auto [ax, bx] = nondegenerate_pair(rng);
                     const Box4 a{0.5 * (ax[0] + ax[2]), 0.5 * (ax[1] + ax[3]), ax[2] - ax[0], ax[3] - ax[1]};
                     const Box4 b{0.5 * (bx[0] + bx[2]), 0.5 * (bx[1] + bx[3]), bx[2] - bx[0], bx[3] - bx[1]};
                     const Fn f = [&](const std::vector<double>& x) {
                       return giou_loss_grad_cxcywh(to_box(x), b).loss;
                     };
                     return rel_error(to_vec(giou_loss_grad_cxcywh(a, b).grad), numeric_grad(f, to_vec(a)));
                   }});
  cases.push_back({"l1_box", 1e-4, [](Rng& rng) {
                     Box4 a{}, b{};
                     auto apart = [&] {
                       for (int i = 0; i < 4; ++i) {
                         if (std::abs(a[i] - b[i]) < kKinkMargin) return false;
                       }
                       return true;
                     };
                     do {
                       a = random_xyxy(rng);
                       b = random_xyxy(rng);
                     } while (!apart());
                     const Fn f = [&](const std::vector<double>& x) { return l1_box_loss(to_box(x), b).loss; };
                     return rel_error(to_vec(l1_box_loss(a, b).grad), numeric_grad(f, to_vec(a)));
                   }});
  cases.push_back({"oks", 1e-4, [](Rng& rng) {
                     const std::size_t k = 17;
                     const double scale = rng.uniform(0.1, 0.5);
                     std::vector<Point2> gt(k), pred(k);
                     std::vector<int> vis(k);
                     for (std::size_t j = 0; j < k; ++j) {
                       gt[j] = {rng.uniform(), rng.uniform()};
                       pred[j] = {gt[j][0] + 0.1 * scale * rng.normal(), gt[j][1] + 0.1 * scale * rng.normal()};
                       vis[j] = rng.bernoulli(0.8);
                     }
                     vis[rng.index(k)] = 1;
                     const auto kappa = coco_kappas();
                     const Fn f = [&](const std::vector<double>& x) {
                       return oks_loss_grad(to_points(x), gt, vis, scale, kappa).loss;
                     };
                     return rel_error(flatten(oks_loss_grad(pred, gt, vis, scale, kappa).grad),
                                      numeric_grad(f, flatten(pred)));
                   }});
  cases.push_back({"kpt_l1", 1e-4, [](Rng& rng) {
                     const std::size_t k = 17;
                     std::vector<Point2> gt(k), pred(k);
                     std::vector<int> vis(k);
                     for (std::size_t j = 0; j < k; ++j) {
                       gt[j] = {rng.uniform(), rng.uniform()};
                       for (int c = 0; c < 2; ++c) {
                         do {
                           pred[j][c] = rng.uniform();
                         } while (std::abs(pred[j][c] - gt[j][c]) < kKinkMargin);
                       }
                       vis[j] = rng.bernoulli(0.8);
                     }
                     vis[rng.index(k)] = 1;
                     const Fn f = [&](const std::vector<double>& x) { return kpt_l1_loss(to_points(x), gt, vis).loss; };
                     return rel_error(flatten(kpt_l1_loss(pred, gt, vis).grad), numeric_grad(f, flatten(pred)));
                   }});
  cases.push_back({"bce_mask", 1e-4, [](Rng& rng) {
                     const Matrix logits = random_matrix(6, 7, 2.0, rng), gt = random_binary(6, 7, rng);
                     const Fn f = [&](const std::vector<double>& x) {
                       return bce_mask_loss(with_values(logits, x), gt).loss;
                     };
                     return rel_error(bce_mask_loss(logits, gt).grad.values, numeric_grad(f, logits.values));
                   }});
  cases.push_back({"dice", 1e-4, [](Rng& rng) {
                     Matrix probs(6, 7);
                     for (auto& v : probs.values) v = rng.uniform(0.05, 0.95);
                     const Matrix gt = random_binary(6, 7, rng);
                     const Fn f = [&](const std::vector<double>& x) { return dice_loss(with_values(probs, x), gt).loss; };
                     return rel_error(dice_loss(probs, gt).grad.values, numeric_grad(f, probs.values));
                   }});
  cases.push_back({"vfl", 1e-4, [](Rng& rng) {
                     const Matrix logits = random_matrix(8, 5, 2.0, rng);
                     std::vector<VflTarget> targets(8);
                     for (auto& t : targets) {
                       if (rng.bernoulli(0.5)) t = {static_cast<int>(rng.index(5)), rng.uniform(0.1, 1.0)};
                     }
                     const Fn f = [&](const std::vector<double>& x) {
                       return vfl_cls_loss(with_values(logits, x), targets).loss;
                     };
                     return rel_error(vfl_cls_loss(logits, targets).grad.values, numeric_grad(f, logits.values));
                   }});
  cases.push_back({"distill", 1e-5, [](Rng& rng) {
                     const std::size_t n = 5, ds = 4, dt = 3;
                     const Matrix s = random_matrix(n, ds, 1.0, rng), w = random_matrix(dt, ds, 1.0, rng);
                     const std::vector<Matrix> t = {random_matrix(n, dt, 1.0, rng), random_matrix(n, dt, 1.0, rng)};
                     std::vector<double> b(dt);
                     for (auto& v : b) v = rng.normal();
                     // One vector holding (W, b, S).
                     std::vector<double> x = w.values;
                     x.insert(x.end(), b.begin(), b.end());
                     x.insert(x.end(), s.values.begin(), s.values.end());
                     const Fn f = [&](const std::vector<double>& v) {
                       Matrix wv(dt, ds), sv(n, ds);
                       std::copy(v.begin(), v.begin() + dt * ds, wv.values.begin());
                       const std::vector<double> bv(v.begin() + dt * ds, v.begin() + dt * ds + dt);
                       std::copy(v.begin() + dt * ds + dt, v.end(), sv.values.begin());
                       return distill_loss(sv, t, wv, bv).loss;
                     };
                     const auto r = distill_loss(s, t, w, b);
                     std::vector<double> a = r.grad_weight.values;
                     a.insert(a.end(), r.grad_bias.begin(), r.grad_bias.end());
                     a.insert(a.end(), r.grad_student.values.begin(), r.grad_student.values.end());
                     return rel_error(a, numeric_grad(f, x));
                   }});
  return cases;
}

}  // namespace

nlohmann::json GradcheckResult::to_json() const {
  return {{"name", name},
          {"instances", instances},
          {"max_rel_error", max_rel_error},
          {"tolerance", tolerance},
          {"pass", pass()}};
}

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, std::size_t instances) {
  const Rng root(seed);
  std::vector<GradcheckResult> out;
  const auto cases = gradcheck_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradcheckResult r{cases[c].name, instances, 0.0, cases[c].tolerance};
    Rng rng = root.split(c);
    for (std::size_t i = 0; i < instances; ++i) r.max_rel_error = std::max(r.max_rel_error, cases[c].check(rng));
    out.push_back(r);
  }
  return out;
}

nlohmann::json MatchTrials::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [g, q] : first.pairs) pairs.push_back({g, q});
  return {{"trials", trials},
          {"agree", agree},
          {"oracle_agreement", std::to_string(agree) + "/" + std::to_string(trials)},
          {"first_assignment", {{"pairs", pairs}, {"total_cost", first.total_cost}}},
          {"disagreements", disagreements}};
}

MatchTrials run_match_trials(std::uint64_t seed, std::size_t gt, std::size_t queries, std::size_t trials,
                             bool tie_heavy) {
  const Rng root(seed);
  MatchTrials out;
  out.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = root.split(t);
    Matrix cost(gt, queries);
    for (auto& v : cost.values) v = tie_heavy ? static_cast<double>(rng.index(4)) : rng.uniform();
    const MatchAssignment h = hungarian(cost), b = brute_force_match(cost);
    if (h.pairs == b.pairs && std::abs(h.total_cost - b.total_cost) <= 1e-9) {
      ++out.agree;
    } else {
      out.disagreements.push_back(t);
    }
    if (t == 0) {
      out.first = h;
      out.first_cost = cost;
    }
  }
  return out;
}

nlohmann::json DistillDemoConfig::to_json() const {
  return {{"teacher", to_string(teacher)},
          {"images", images},
          {"image_size", image_size},
          {"batch", batch},
          {"base_lr", base_lr},
          {"epochs", epochs},
          {"warmup_epochs", warmup_epochs},
          {"student", {{"variant", "T"}, {"patch_embed", to_string(student_embed)}}}};
}

nlohmann::json DistillDemoResult::to_json() const {
  return {{"epoch_loss", run.epoch_loss},
          {"final_loss", run.final_loss},
          {"steps", run.steps},
          {"max_epoch_ratio", max_epoch_ratio},
          {"converged", converged},
          {"monotone", monotone}};
}

DistillDemoResult run_distill_demo(std::uint64_t seed, const DistillDemoConfig& config) {
  Rng rng(seed);
  BackboneConfig student_config = BackboneConfig::for_variant(VitVariant::T);
  student_config.patch_embed = config.student_embed;
  const BackboneParams student = build_backbone(student_config, rng);
  const Teacher teacher = build_teacher(config.teacher, student_config.embed_dim, rng);
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < config.images; ++i) images.push_back(random_image(config.image_size, config.image_size, rng));

  DistillConfig dc = DistillConfig::for_variant(VitVariant::T, config.teacher);
  dc.batch = config.batch;
  dc.base_lr = config.base_lr;
  dc.epochs = config.epochs;
  dc.warmup_epochs = config.warmup_epochs;

  DistillDemoResult r;
  r.run = run_distillation(student_config, student, teacher, images, dc, rng);
  const auto& curve = r.run.epoch_loss;
  for (std::size_t e = 1; e < curve.size(); ++e) r.max_epoch_ratio = std::max(r.max_epoch_ratio, curve[e] / curve[e - 1]);
  r.converged = r.run.final_loss < kDemoLossThreshold;
  r.monotone = r.max_epoch_ratio <= kDemoCurveTolerance;
  return r;
}

}  // namespace ec
