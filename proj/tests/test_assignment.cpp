// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "edgecrafter/assignment.hpp"
#include "edgecrafter/suites.hpp"

using namespace ec;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    for (double v : r) m.values[i++] = v;
  }
  return m;
}

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

Matrix random_cost(std::size_t g, std::size_t n, bool ties, Rng& rng) {
  Matrix m(g, n);
  for (auto& v : m.values) v = ties ? static_cast<double>(rng.index(3)) : rng.uniform();
  return m;
}

void check_valid(const MatchAssignment& a, const Matrix& c) {
  REQUIRE(a.pairs.size() == c.rows);
  std::vector<bool> used(c.cols, false);
  double total = 0;
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    const auto [g, q] = a.pairs[i];
    CHECK(g == i);
    REQUIRE(q < c.cols);
    CHECK_FALSE(used[q]);
    used[q] = true;
    total += c(g, q);
  }
  CHECK(a.total_cost == doctest::Approx(total).epsilon(1e-12));
}

// Independent scalar GIoU on xyxy boxes.
double scalar_giou(double ax0, double ay0, double ax1, double ay1, double bx0, double by0, double bx1, double by1) {
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  const double hull = (std::max(ax1, bx1) - std::min(ax0, bx0)) * (std::max(ay1, by1) - std::min(ay0, by0));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace

TEST_CASE("documented small instances") {
  const auto a = hungarian(from_rows({{1, 2}, {3, 0}}));
  CHECK(a.pairs == Pairs{{0, 0}, {1, 1}});
  CHECK(a.total_cost == 1.0);

  const auto z = hungarian(Matrix(3, 5, 0.0));
  CHECK(z.pairs == Pairs{{0, 0}, {1, 1}, {2, 2}});
  CHECK(z.total_cost == 0.0);

  Matrix diag(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 0.0;
  CHECK(hungarian(diag).total_cost == 0.0);
  CHECK(hungarian(diag).pairs == Pairs{{0, 0}, {1, 1}, {2, 2}, {3, 3}});

  CHECK(brute_force_match(from_rows({{2.5}})).total_cost == 2.5);
}

TEST_CASE("tie-break prefers the lexicographically smallest query sequence") {
  // Both (0->1, 1->0) and (0->0, 1->1) cost 2; the latter wins.
  const Matrix c = from_rows({{1, 1, 9}, {1, 1, 9}});
  CHECK(hungarian(c).pairs == Pairs{{0, 0}, {1, 1}});
  CHECK(brute_force_match(c).pairs == Pairs{{0, 0}, {1, 1}});
  // A cheaper later column still wins over the tie-break.
  const Matrix d = from_rows({{1, 0.5, 9}, {1, 1, 9}});
  CHECK(hungarian(d).pairs == Pairs{{0, 1}, {1, 0}});
}

TEST_CASE("hungarian agrees with brute force on random and tie-heavy matrices of many shapes") {
  Rng root(11);
  std::size_t trial = 0;
  for (std::size_t g = 1; g <= 6; ++g) {
    for (std::size_t n = g; n <= g + 3; ++n) {
      for (bool ties : {false, true}) {
        for (int t = 0; t < 30; ++t) {
          Rng rng = root.split(trial++);
          const Matrix c = random_cost(g, n, ties, rng);
          const auto h = hungarian(c), b = brute_force_match(c);
          check_valid(h, c);
          CHECK(h.pairs == b.pairs);
          CHECK(h.total_cost == doctest::Approx(b.total_cost).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("duplicated rows resolve under the tie rule") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    Matrix c = random_cost(4, 6, false, rng);
    for (std::size_t j = 0; j < 6; ++j) c(2, j) = c(0, j);
    CHECK(hungarian(c).pairs == brute_force_match(c).pairs);
  }
}

TEST_CASE("assignment is invariant to positive scaling and constant shifts") {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    const Matrix c = random_cost(5, 7, false, rng);
    const auto base = hungarian(c).pairs;
    Matrix scaled = c, shifted = c;
    const double alpha = rng.uniform(0.1, 10.0), beta = rng.uniform(-5.0, 5.0);
    for (auto& v : scaled.values) v *= alpha;
    for (auto& v : shifted.values) v += beta;
    CHECK(hungarian(scaled).pairs == base);
    CHECK(hungarian(shifted).pairs == base);
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(hungarian(Matrix(3, 2, 0.0)), InputError);
  Matrix bad(2, 3, 0.0);
  bad(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), InputError);
  CHECK_THROWS_AS(brute_force_match(Matrix(9, 9, 0.0)), SizeError);
}

TEST_CASE("the trial suite reports full agreement") {
  const MatchTrials r = run_match_trials(1, 5, 7, 300, false);
  CHECK(r.agree == 300);
  CHECK(r.disagreements.empty());
  CHECK(r.to_json()["oracle_agreement"] == "300/300");
  CHECK(run_match_trials(1, 5, 7, 100, true).agree == 100);
}

TEST_CASE("detection cost matrix matches a scalar recomputation entry by entry") {
  PredictionSet p;
  // Three queries, two classes.
  p.class_logits = Tensor({3, 2}, {0.5f, -1.0f, 2.0f, 0.0f, -0.3f, 1.5f});
  p.boxes = Tensor({3, 4}, {0.30f, 0.40f, 0.20f, 0.30f, 0.60f, 0.55f, 0.25f, 0.15f, 0.50f, 0.50f, 0.40f, 0.40f});
  GroundTruthSet gt;
  gt.boxes = {{0.32, 0.38, 0.22, 0.28}, {0.58, 0.50, 0.20, 0.20}};
  gt.classes = {0, 1};
  const LossWeights w = LossWeights::for_task(Task::detect);
  const Matrix c = build_cost_matrix(p, gt, w, Task::detect);
  REQUIRE(c.rows == 2);
  REQUIRE(c.cols == 3);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t q = 0; q < 3; ++q) {
      const double logit = p.class_logits[q * 2 + gt.classes[g]];
      const double prob = 1.0 / (1.0 + std::exp(-logit));
      const double pc[4] = {p.boxes[q * 4], p.boxes[q * 4 + 1], p.boxes[q * 4 + 2], p.boxes[q * 4 + 3]};
      const auto& b = gt.boxes[g];
      const double l1 = std::abs(pc[0] - b[0]) + std::abs(pc[1] - b[1]) + std::abs(pc[2] - b[2]) + std::abs(pc[3] - b[3]);
      const double gi = scalar_giou(pc[0] - pc[2] / 2, pc[1] - pc[3] / 2, pc[0] + pc[2] / 2, pc[1] + pc[3] / 2,
                                    b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2);
      const double want = -1.0 * prob + 5.0 * l1 + 2.0 * (1.0 - gi);
      CHECK(c(g, q) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("an exact prediction is the row minimum; identical predictions give identical columns") {
  PredictionSet p;
  p.class_logits = Tensor({3, 1}, {30.0f, -2.0f, -2.0f});
  p.boxes = Tensor({3, 4}, {0.5f, 0.5f, 0.25f, 0.25f, 0.2f, 0.3f, 0.1f, 0.1f, 0.2f, 0.3f, 0.1f, 0.1f});
  GroundTruthSet gt;
  gt.boxes = {{0.5, 0.5, 0.25, 0.25}};
  gt.classes = {0};
  const Matrix c = build_cost_matrix(p, gt, LossWeights::for_task(Task::detect), Task::detect);
  CHECK(c(0, 0) < c(0, 1));
  CHECK(c(0, 1) == c(0, 2));
  CHECK(hungarian(c).pairs == Pairs{{0, 0}});
  p.class_logits[0] = -2.0f;
  p.boxes = Tensor({3, 4}, {0.2f, 0.3f, 0.1f, 0.1f, 0.2f, 0.3f, 0.1f, 0.1f, 0.2f, 0.3f, 0.1f, 0.1f});
  CHECK(hungarian(build_cost_matrix(p, gt, LossWeights::for_task(Task::detect), Task::detect)).pairs ==
        Pairs{{0, 0}});
}

TEST_CASE("task fields are required") {
  PredictionSet p;
  p.class_logits = Tensor({2, 1}, {0.0f, 0.0f});
  p.boxes = Tensor::filled({2, 4}, 0.5f);
  GroundTruthSet gt;
  gt.boxes = {{0.5, 0.5, 0.2, 0.2}};
  gt.classes = {0};
  gt.keypoints = {{{0.5, 0.5}}};
  gt.visibility = {{1}};
  gt.scale = {0.2};
  CHECK_THROWS_AS(build_cost_matrix(p, gt, LossWeights::for_task(Task::pose), Task::pose), ContractError);
}
