// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "edgecrafter/ops.hpp"
#include "edgecrafter/params.hpp"

using namespace ec;

namespace {

// Direct-loop convolution used as the oracle for the im2col kernel.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int dil, int groups) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0), k = w.dim(2);
  const std::size_t oh = conv_output_size(h, static_cast<int>(k), stride, pad, dil);
  const std::size_t ow = conv_output_size(wd, static_cast<int>(k), stride, pad, dil);
  const std::size_t cig = ci / groups, cog = co / groups;
  Tensor y({co, oh, ow});
  for (std::size_t o = 0; o < co; ++o) {
    const std::size_t g = o / cog;
    for (std::size_t yy = 0; yy < oh; ++yy) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b[o];
        for (std::size_t c = 0; c < cig; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(yy * stride + ky * dil) - pad;
              const long ix = static_cast<long>(xx * stride + kx * dil) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              acc += double(w.at({o, c, ky, kx})) * x.at({g * cig + c, std::size_t(iy), std::size_t(ix)});
            }
          }
        }
        y.at({o, yy, xx}) = static_cast<float>(acc);
      }
    }
  }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("tensor construction rejects bad shapes and non-finite data") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1.0f}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, {NAN}), InputError);
  CHECK(Tensor().empty());
  const Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({1, 2}) == 5.0f);
  CHECK(t.reshaped({3, 2}).at({2, 1}) == 5.0f);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("gemm matches a triple loop") {
  Rng rng(1);
  const std::size_t m = 7, k = 13, n = 5;
  const Tensor a = uniform_tensor({m, k}, 1.0, rng), b = uniform_tensor({k, n}, 1.0, rng);
  Tensor c({m, n});
  gemm(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += double(a[i * k + p]) * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d matches direct loops across stride, padding, dilation and groups") {
  Rng rng(2);
  struct Case {
    std::size_t ci, co, k;
    int stride, pad, dil, groups;
  };
  for (const Case c : {Case{3, 4, 3, 2, 1, 1, 1}, Case{4, 6, 3, 1, 2, 2, 2}, Case{6, 6, 3, 1, 1, 1, 6},
                       Case{3, 5, 1, 1, 0, 1, 1}, Case{2, 3, 4, 4, 0, 1, 1}}) {
    const Tensor x = uniform_tensor({c.ci, 9, 11}, 1.0, rng);
    const Tensor w = uniform_tensor({c.co, c.ci / c.groups, c.k, c.k}, 1.0, rng);
    const Tensor b = uniform_tensor({c.co}, 1.0, rng);
    const Tensor got = conv2d(x, w, b, c.stride, c.pad, c.dil, c.groups);
    CHECK(max_abs_diff(got, naive_conv(x, w, b, c.stride, c.pad, c.dil, c.groups)) < 1e-5);
  }
}

TEST_CASE("conv2d counts one MAC per weight tap per output pixel") {
  Rng rng(3);
  const Tensor x = uniform_tensor({4, 8, 8}, 1.0, rng);
  const Tensor w = uniform_tensor({6, 2, 3, 3}, 1.0, rng);
  MacTally tally;
  conv2d(x, w, Tensor::filled({6}, 0.0f), 2, 1, 1, 2);
  CHECK(tally.macs() == 6u * 2 * 9 * 4 * 4);
}

TEST_CASE("mac tallies nest") {
  MacTally outer;
  {
    MacTally inner;
    count_macs(5);
    CHECK(inner.macs() == 5);
  }
  count_macs(2);
  CHECK(outer.macs() == 7);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  Rng rng(4);
  const Tensor x = normal_tensor({20, 9}, 50.0, rng);
  const Tensor s = softmax(x);
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(s[r * 9 + c] >= 0.0f);
      sum += s[r * 9 + c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
  Rng rng(5);
  const std::size_t d = 32;
  const Tensor x = normal_tensor({6, d}, 3.0, rng);
  const Tensor y = layer_norm(x, Tensor::filled({d}, 1.0f), Tensor::filled({d}, 0.0f));
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < d; ++c) mean += y[r * d + c];
    mean /= d;
    for (std::size_t c = 0; c < d; ++c) var += (y[r * d + c] - mean) * (y[r * d + c] - mean);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(var / d == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("bilinear sampling at pixel centers reads the pixel; outside taps read zero") {
  Rng rng(6);
  const Tensor m = uniform_tensor({2, 4, 5}, 1.0, rng);
  const Tensor v = sample_point(m, (3 + 0.5) / 5.0, (1 + 0.5) / 4.0);
  CHECK(v[0] == doctest::Approx(m.at({0, 1, 3})));
  CHECK(v[1] == doctest::Approx(m.at({1, 1, 3})));
  // Halfway between two horizontal neighbours.
  const Tensor mid = sample_point(m, 2.0 / 5.0, 0.5 / 4.0);
  CHECK(mid[0] == doctest::Approx(0.5 * (m.at({0, 0, 1}) + m.at({0, 0, 2}))));
  // Corner: three of four taps fall outside.
  const Tensor corner = sample_point(m, 0.0, 0.0);
  CHECK(corner[0] == doctest::Approx(0.25 * m.at({0, 0, 0})));
}

TEST_CASE("bilinear resize to the same size is the identity and 2x upsampling preserves constants") {
  Rng rng(7);
  const Tensor m = uniform_tensor({3, 5, 6}, 1.0, rng);
  CHECK(max_abs_diff(bilinear_resize(m, 5, 6), m) < 1e-6);
  const Tensor c = Tensor::filled({1, 3, 3}, 0.25f);
  const Tensor up = bilinear_resize(c, 6, 6);
  for (float x : up.values()) CHECK(x == doctest::Approx(0.25));
}

TEST_CASE("token and map layouts round trip") {
  Rng rng(8);
  const Tensor m = uniform_tensor({4, 3, 5}, 1.0, rng);
  const Tensor t = map_to_tokens(m);
  CHECK(t.shape() == Shape{15, 4});
  CHECK(t.at({7, 2}) == m.at({2, 1, 2}));
  CHECK(tokens_to_map(t, 3, 5) == m);
  CHECK_THROWS_AS(tokens_to_map(t, 4, 4), DimensionError);
}

TEST_CASE("attention probabilities are row stochastic; grouped attention sees the documented key count") {
  Rng rng(9);
  const AttentionParams p = make_attention(12, rng);
  AttentionProbs probs;
  const Tensor x = normal_tensor({7, 12}, 1.0, rng);
  const Tensor y = multi_head_self_attention(x, 3, p, &probs);
  CHECK(y.shape() == Shape{7, 12});
  CHECK(probs.heads == 3);
  for (std::size_t r = 0; r < probs.heads * probs.n_q; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < probs.n_k; ++c) s += probs.values[r * probs.n_k + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(grouped_keys_per_token(4, 5) == 5 + 3);
  std::vector<double> sums;
  const Tensor g = normal_tensor({4 * 5, 12}, 1.0, rng);
  grouped_cross_type_attention(g, g, g, 3, 5, p, &sums);
  for (double s : sums) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("grouped attention with one group equals full self-attention") {
  Rng rng(10);
  const AttentionParams p = make_attention(8, rng);
  const Tensor x = normal_tensor({5, 8}, 1.0, rng);
  const Tensor full = multi_head_self_attention(x, 2, p);
  const Tensor grouped = grouped_cross_type_attention(x, x, x, 2, 5, p);
  CHECK(max_abs_diff(full, grouped) < 1e-5);
}

TEST_CASE("rng streams are reproducible and split streams differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) CHECK(a.next() == b.next());
  const Rng root(42);
  Rng s0 = root.split(0), s0b = root.split(0), s1 = root.split(1);
  const auto v0 = s0.next();
  CHECK(v0 == s0b.next());
  CHECK(v0 != s1.next());
}
