// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace ec {

std::vector<long> MatchAssignment::query_to_gt(std::size_t queries) const {
  std::vector<long> out(queries, -1);
  for (const auto& [g, q] : pairs) out.at(q) = static_cast<long>(g);
  return out;
}

namespace {

void check_cost(const Matrix& cost) {
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw InputError("cost matrix has a non-finite entry");
  }
  if (cost.rows > cost.cols) {
    throw InputError("more ground truths (" + std::to_string(cost.rows) + ") than queries (" +
                     std::to_string(cost.cols) + ")");
  }
}

double tie_tolerance(const Matrix& cost) {
  double scale = 1.0;
  for (double v : cost.values) scale = std::max(scale, std::abs(v));
  return 1e-9 * scale;
}

MatchAssignment finish(const Matrix& cost, const std::vector<std::size_t>& row_to_col) {
  MatchAssignment m;
  for (std::size_t g = 0; g < row_to_col.size(); ++g) {
    m.pairs.emplace_back(g, row_to_col[g]);
    m.total_cost += cost(g, row_to_col[g]);
  }
  return m;
}

// Kuhn augmenting-path matching of `left` vertices over an adjacency list;
// returns the number matched.
std::size_t max_matching(const std::vector<std::vector<std::size_t>>& adj, std::size_t right_count) {
  std::vector<long> match_right(right_count, -1);
  std::vector<char> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t u) {
    for (std::size_t r : adj[u]) {
      if (seen[r]) continue;
      seen[r] = 1;
      if (match_right[r] < 0 || augment(static_cast<std::size_t>(match_right[r]))) {
        match_right[r] = static_cast<long>(u);
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t u = 0; u < adj.size(); ++u) {
    seen.assign(right_count, 0);
    if (augment(u)) ++matched;
  }
  return matched;
}

}  // namespace

MatchAssignment hungarian(const Matrix& cost) {
  check_cost(cost);
  const std::size_t n = cost.rows, m = cost.cols;
  if (n == 0) return {};
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting paths with potentials, 1-based with column 0 as the
  // virtual root. Afterwards u[i] + v[j] <= c(i,j), equality on matched edges,
  // and v[j] < 0 only on matched columns.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  // Optimal assignments are exactly the matchings on tight edges that cover
  // every row and every column with a negative potential. Pick rows in order,
  // each taking its lowest feasible tight column.
  const double tol = tie_tolerance(cost);
  auto tight = [&](std::size_t g, std::size_t q) { return std::abs(cost(g, q) - u[g + 1] - v[q + 1]) <= tol; };
  std::vector<char> required(m, 0), taken(m, 0);
  for (std::size_t q = 0; q < m; ++q) required[q] = v[q + 1] < -tol;

  auto feasible = [&](std::size_t next_row) {
    std::vector<std::vector<std::size_t>> rows_adj;
    for (std::size_t g = next_row; g < n; ++g) {
      auto& a = rows_adj.emplace_back();
      for (std::size_t q = 0; q < m; ++q) {
        if (!taken[q] && tight(g, q)) a.push_back(q);
      }
    }
    if (max_matching(rows_adj, m) != rows_adj.size()) return false;
    std::vector<std::vector<std::size_t>> cols_adj;
    for (std::size_t q = 0; q < m; ++q) {
      if (taken[q] || !required[q]) continue;
      auto& a = cols_adj.emplace_back();
      for (std::size_t g = next_row; g < n; ++g) {
        if (tight(g, q)) a.push_back(g - next_row);
      }
    }
    return max_matching(cols_adj, n - next_row) == cols_adj.size();
  };

  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t g = 0; g < n; ++g) {
    bool placed = false;
    for (std::size_t q = 0; q < m && !placed; ++q) {
      if (taken[q] || !tight(g, q)) continue;
      taken[q] = 1;
      if (feasible(g + 1)) {
        row_to_col[g] = q;
        placed = true;
      } else {
        taken[q] = 0;
      }
    }
    if (!placed) {
      // Only reachable if rounding broke dual feasibility; fall back to the solver's own matching.
      std::vector<std::size_t> solver(n, 0);
      for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) solver[p[j] - 1] = j - 1;
      }
      return finish(cost, solver);
    }
  }
  return finish(cost, row_to_col);
}

MatchAssignment brute_force_match(const Matrix& cost) {
  check_cost(cost);
  const std::size_t n = cost.rows, m = cost.cols;
  if (n > 8) throw SizeError("brute_force_match supports at most 8 ground truths, got " + std::to_string(n));
  double count = 1.0;
  for (std::size_t i = 0; i < n; ++i) count *= static_cast<double>(m - i);
  if (count > 5e7) throw SizeError("brute_force_match: too many assignments to enumerate");
  if (n == 0) return {};

  // Pass 1 finds the minimum; pass 2 returns the first assignment, in
  // lexicographic order, within the tie tolerance of it.
  const double tol = tie_tolerance(cost);
  std::vector<std::size_t> cur(n);
  std::vector<char> used(m, 0);
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<std::size_t> answer;
  std::function<void(std::size_t, bool)> walk = [&](std::size_t row, bool select) {
    if (found) return;
    if (row == n) {
      double total = 0.0;
      for (std::size_t g = 0; g < n; ++g) total += cost(g, cur[g]);
      if (!select) {
        best = std::min(best, total);
      } else if (total <= best + tol) {
        answer = cur;
        found = true;
      }
      return;
    }
    for (std::size_t q = 0; q < m; ++q) {
      if (used[q]) continue;
      used[q] = 1;
      cur[row] = q;
      walk(row + 1, select);
      used[q] = 0;
    }
  };
  walk(0, false);
  walk(0, true);
  return finish(cost, answer);
}

Box4 predicted_box(const PredictionSet& pred, std::size_t q) {
  const float* b = pred.boxes.data() + q * 4;
  return {b[0], b[1], b[2], b[3]};
}

std::vector<Point2> predicted_keypoints(const PredictionSet& pred, std::size_t q) {
  const std::size_t k = pred.keypoints.dim(1);
  std::vector<Point2> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    out[j] = {pred.keypoints[(q * k + j) * 3], pred.keypoints[(q * k + j) * 3 + 1]};
  }
  return out;
}

Matrix predicted_mask_logits(const PredictionSet& pred, std::size_t q) {
  const std::size_t h = pred.mask_logits.dim(1), w = pred.mask_logits.dim(2);
  Matrix m(h, w);
  const float* src = pred.mask_logits.data() + q * h * w;
  for (std::size_t i = 0; i < h * w; ++i) m.values[i] = src[i];
  return m;
}

Matrix build_cost_matrix(const PredictionSet& pred, const GroundTruthSet& gt, const LossWeights& weights, Task task) {
  gt.validate(task);
  if (pred.class_logits.empty() || pred.boxes.empty()) throw ContractError("predictions lack class logits or boxes");
  if (task == Task::pose && pred.keypoints.empty()) throw ContractError("pose matching needs predicted keypoints");
  if (task == Task::insseg && pred.mask_logits.empty()) throw ContractError("insseg matching needs mask logits");
  const std::size_t g_count = gt.size(), n = pred.class_logits.dim(0), classes = pred.class_logits.dim(1);
  Matrix cost(g_count, n);
  const std::vector<double> kappa = coco_kappas();

  for (std::size_t g = 0; g < g_count; ++g) {
    const std::size_t cls = task == Task::pose ? 0 : static_cast<std::size_t>(gt.classes[g]);
    if (cls >= classes) throw InputError("ground truth class out of range");
    const Box4 gxy = cxcywh_to_xyxy(gt.boxes[g]);
    for (std::size_t q = 0; q < n; ++q) {
      double c = -weights.cls * sigmoid_d(pred.class_logits[q * classes + cls]);
      if (task == Task::pose) {
        const auto& vis = gt.visibility[g];
        const bool any = std::any_of(vis.begin(), vis.end(), [](int v) { return v != 0; });
        const double o = any ? oks(predicted_keypoints(pred, q), gt.keypoints[g], vis, gt.scale[g],
                                   std::span<const double>(kappa.data(), gt.keypoints[g].size()))
                             : 0.0;
        c += weights.oks * (1.0 - o);
      } else {
        const Box4 pb = predicted_box(pred, q);
        c += weights.l1 * l1_box_loss(pb, gt.boxes[g]).loss;
        c += weights.giou * (1.0 - giou(cxcywh_to_xyxy(pb), gxy));
      }
      cost(g, q) = c;
    }
  }

  if (task == Task::insseg) {
    const std::size_t h = pred.mask_logits.dim(1), w = pred.mask_logits.dim(2), pixels = h * w;
    for (const auto& m : gt.masks) {
      if (m.rows != h || m.cols != w) throw DimensionError("gt mask grid differs from predicted mask grid");
    }
    std::vector<double> sp_sum(n, 0.0), p_sum(n, 0.0);
    std::vector<double> probs(n * pixels);
    for (std::size_t q = 0; q < n; ++q) {
      const float* z = pred.mask_logits.data() + q * pixels;
      for (std::size_t i = 0; i < pixels; ++i) {
        sp_sum[q] += softplus(z[i]);
        probs[q * pixels + i] = sigmoid_d(z[i]);
        p_sum[q] += probs[q * pixels + i];
      }
    }
    for (std::size_t g = 0; g < g_count; ++g) {
      const auto& gm = gt.masks[g].values;
      double g_sum = 0.0;
      for (double v : gm) g_sum += v;
      for (std::size_t q = 0; q < n; ++q) {
        const float* z = pred.mask_logits.data() + q * pixels;
        const double* pq = probs.data() + q * pixels;
        double zg = 0.0, pg = 0.0;
        for (std::size_t i = 0; i < pixels; ++i) {
          if (gm[i] != 0.0) {
            zg += z[i];
            pg += pq[i];
          }
        }
        const double bce = (sp_sum[q] - zg) / static_cast<double>(pixels);
        const double dice = 1.0 - (2.0 * pg + 1.0) / (p_sum[q] + g_sum + 1.0);
        cost(g, q) += weights.mask * bce + weights.dice * dice;
      }
    }
  }
  return cost;
}

}  // namespace ec
