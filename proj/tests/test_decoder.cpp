// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "edgecrafter/decoder.hpp"
#include "edgecrafter/ops.hpp"

using namespace ec;

namespace {

DecoderConfig small_config(Task task) {
  DecoderConfig c;
  c.hidden_dim = 16;
  c.ffn_dim = 32;
  c.heads = 2;
  c.queries = 12;
  c.task = task;
  c.num_classes = 5;
  c.keypoints = 4;
  return c;
}

EncodedFeatures random_features(std::size_t c, std::size_t s8, Rng& rng) {
  return {uniform_tensor({c, s8, s8}, 1.0, rng), uniform_tensor({c, s8 / 2, s8 / 2}, 1.0, rng),
          uniform_tensor({c, s8 / 4, s8 / 4}, 1.0, rng)};
}

bool in_unit(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
}

LinearParams zero_linear(std::size_t in, std::size_t out) {
  return {Tensor::filled({out, in}, 0.0f), Tensor::filled({out}, 0.0f)};
}

}  // namespace

TEST_CASE("degenerate deformable attention is one bilinear sample") {
  Rng rng(1);
  const std::size_t c = 4;
  const Tensor map = uniform_tensor({c, 6, 9}, 1.0, rng);
  DeformAttnParams p;
  Tensor eye = Tensor::filled({c, c}, 0.0f);
  for (std::size_t i = 0; i < c; ++i) eye[i * c + i] = 1.0f;
  p.value_proj = {eye, Tensor::filled({c}, 0.0f)};
  p.output_proj = p.value_proj;
  p.sampling_offsets = zero_linear(c, 2);
  p.attention_weights = zero_linear(c, 1);
  for (int t = 0; t < 20; ++t) {
    const double x = rng.uniform(), y = rng.uniform();
    const Tensor got = deformable_attention(uniform_tensor({c}, 1.0, rng), x, y, {map}, p, 1, 1);
    const Tensor want = sample_point(map, x, y);
    for (std::size_t i = 0; i < c; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
}

TEST_CASE("deformable attention weights are normalized over levels and points") {
  Rng rng(2);
  const DeformAttnParams p = build_deform_attn(16, 4, 3, 4, rng);
  const auto levels = project_levels({uniform_tensor({16, 8, 8}, 1.0, rng), uniform_tensor({16, 4, 4}, 1.0, rng),
                                      uniform_tensor({16, 2, 2}, 1.0, rng)},
                                     p.value_proj);
  Tensor refs({6, 4});
  for (float& v : refs.values()) v = static_cast<float>(rng.uniform(0.1, 0.9));
  std::vector<double> sums;
  const Tensor out = deformable_attention(normal_tensor({6, 16}, 1.0, rng), refs, levels, p, 4, 4, &sums);
  CHECK(out.shape() == Shape{6, 16});
  REQUIRE(sums.size() == 6 * 4);
  for (double s : sums) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("constant value maps make the output independent of the reference") {
  Rng rng(3);
  const std::size_t c = 8;
  const DeformAttnParams p = build_deform_attn(c, 2, 1, 4, rng);
  const Tensor map = Tensor::filled({c, 64, 64}, 0.7f);
  const Tensor q = normal_tensor({c}, 0.1, rng);
  const Tensor a = deformable_attention(q, 0.4, 0.45, {map}, p, 2, 4);
  const Tensor b = deformable_attention(q, 0.6, 0.55, {map}, p, 2, 4);
  for (std::size_t i = 0; i < c; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
}

TEST_CASE("sine point embedding closed form") {
  const Tensor pts({2, 2}, {0.25f, 0.75f, 0.1f, 0.9f});
  const std::size_t dim = 8, half = 4;
  const Tensor e = sine_point_embedding(pts, dim);
  CHECK(e.shape() == Shape{2, dim});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      for (std::size_t i = 0; i < half; ++i) {
        const double f = 2 * std::numbers::pi / std::pow(10000.0, 2.0 * double(i / 2) / double(half));
        const double v = pts[r * 2 + axis] * f;
        CHECK(e[r * dim + axis * half + i] == doctest::Approx(i % 2 ? std::cos(v) : std::sin(v)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("decoder output shapes per task, boxes and keypoints inside the unit square") {
  for (Task task : {Task::detect, Task::pose, Task::insseg}) {
    CAPTURE(to_string(task));
    const DecoderConfig c = small_config(task);
    Rng rng(4);
    const DecoderParams p = build_decoder(c, rng);
    CHECK(p.mask_head.has_value() == (task == Task::insseg));
    CHECK(p.query_pos_head.layers.empty() == (task == Task::pose));
    const EncodedFeatures enc = random_features(16, 8, rng);
    const auto preds = decoder_forward(initial_query_state(p, c), enc, p, c);
    REQUIRE(preds.size() == 4);
    for (std::size_t l = 0; l < preds.size(); ++l) {
      const PredictionSet& s = preds[l];
      CHECK(s.class_logits.shape() == Shape{12, c.class_outputs()});
      CHECK(s.boxes.shape() == Shape{12, 4});
      CHECK(in_unit(s.boxes));
      if (task == Task::pose) {
        CHECK(s.keypoints.shape() == Shape{12, 4, 3});
        CHECK(in_unit(s.keypoints));
      } else {
        CHECK(s.keypoints.empty());
      }
      // Masks on the final layer only unless auxiliary masks are requested.
      const bool masks = task == Task::insseg && l + 1 == preds.size();
      CHECK(s.mask_logits.empty() == !masks);
      if (masks) CHECK(s.mask_logits.shape() == Shape{12, 16, 16});
    }
    if (task == Task::insseg) {
      DecoderOptions aux;
      aux.aux_masks = true;
      for (const auto& s : decoder_forward(initial_query_state(p, c), enc, p, c, aux)) CHECK(!s.mask_logits.empty());
    }
  }
}

TEST_CASE("pose queries hold one instance token and K keypoint tokens") {
  const DecoderConfig c = small_config(Task::pose);
  Rng rng(5);
  const DecoderParams p = build_decoder(c, rng);
  const QueryState s = initial_query_state(p, c);
  CHECK(c.group_size() == 5);
  CHECK(s.content.shape() == Shape{12 * 5, 16});
  CHECK(s.keypoint_reference.shape() == Shape{12, 4, 2});
  CHECK(in_unit(s.keypoint_reference));
  CHECK(in_unit(s.reference));
  // Keypoint tokens start from the shared keypoint embeddings.
  CHECK(s.content[(3 * 5 + 2) * 16 + 7] == p.keypoint_embed[1 * 16 + 7]);
}

TEST_CASE("with zero box deltas the references pass through every layer") {
  const DecoderConfig c = small_config(Task::detect);
  Rng rng(6);
  DecoderParams p = build_decoder(c, rng);
  for (auto& head : p.heads) head.box.layers.back() = zero_linear(16, 4);
  const QueryState s = initial_query_state(p, c);
  const auto preds = decoder_forward(s, random_features(16, 8, rng), p, c);
  for (const auto& layer : preds) {
    for (std::size_t i = 0; i < s.reference.numel(); ++i) {
      CHECK(layer.boxes[i] == doctest::Approx(s.reference[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("mask logits are dot products of query and pixel embeddings") {
  Rng rng(7);
  const std::size_t c = 8;
  MaskHeadParams p;
  p.depthwise = make_conv(c, c, 3, 1, 1, rng, 1, static_cast<int>(c));
  p.pixel_mlp = build_mlp({c, 4, 4}, rng);
  p.query_mlp = build_mlp({c, c, 4}, rng);
  const Tensor e8 = uniform_tensor({c, 3, 5}, 1.0, rng);
  const Tensor q = normal_tensor({6, c}, 1.0, rng);
  const Tensor logits = mask_head(q, e8, p);
  CHECK(logits.shape() == Shape{6, 6, 10});

  const Tensor pixels = mlp_forward(map_to_tokens(conv2d(bilinear_resize(e8, 6, 10), p.depthwise)), p.pixel_mlp);
  const Tensor qe = mlp_forward(q, p.query_mlp);
  for (std::size_t n = 0; n < 6; ++n) {
    for (std::size_t px = 0; px < 60; ++px) {
      double dot = 0;
      for (std::size_t k = 0; k < 4; ++k) dot += double(qe[n * 4 + k]) * pixels[px * 4 + k];
      CHECK(logits[n * 60 + px] == doctest::Approx(dot).epsilon(1e-5));
    }
  }

  // Pixel embeddings pinned to a unit vector u: queries embedded at u give 1,
  // queries embedded orthogonally give 0.
  p.pixel_mlp.layers.back() = {Tensor::filled({4, 4}, 0.0f), Tensor({4}, {0.6f, 0.8f, 0.0f, 0.0f})};
  p.query_mlp.layers.back() = {Tensor::filled({4, c}, 0.0f), Tensor({4}, {0.6f, 0.8f, 0.0f, 0.0f})};
  const Tensor aligned = mask_head(q, e8, p);
  for (float v : aligned.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  p.query_mlp.layers.back().bias = Tensor({4}, {-0.8f, 0.6f, 0.0f, 0.0f});
  const Tensor orthogonal = mask_head(q, e8, p);
  for (float v : orthogonal.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("decoder config validation") {
  DecoderConfig c = small_config(Task::detect);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_task("det") == Task::detect);
  CHECK(parse_task("insseg") == Task::insseg);
  CHECK_THROWS_AS(parse_task("segm"), ConfigError);
}
