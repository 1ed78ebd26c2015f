// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "edgecrafter/encoder.hpp"

namespace ec {

enum class Task { detect, pose, insseg };

std::string to_string(Task t);
/// Accepts "det"/"detect", "pose", "insseg".
Task parse_task(const std::string& s);

struct DecoderConfig {
  std::size_t hidden_dim = 256;
  std::size_t layers = 4;
  std::size_t queries = 300;
  std::size_t ffn_dim = 1024;
  int heads = 8;
  std::size_t points = 4;
  std::size_t levels = 3;
  Task task = Task::detect;
  std::size_t num_classes = 80;
  std::size_t keypoints = 17;

  /// Mask embedding width.
  std::size_t mask_dim() const { return hidden_dim / 2; }
  /// Tokens per query: one, or one instance token plus K keypoint tokens.
  std::size_t group_size() const { return task == Task::pose ? 1 + keypoints : 1; }
  std::size_t class_outputs() const { return task == Task::pose ? 1 : num_classes; }
  void validate() const;
};

struct DecoderOptions {
  /// Also predict masks at intermediate layers (auxiliary supervision).
  bool aux_masks = false;
};

/// Linear layers with ReLU between them.
struct MlpParams {
  std::vector<LinearParams> layers;
};

struct DeformAttnParams {
  LinearParams value_proj;         // C -> C, applied per level
  LinearParams sampling_offsets;   // C -> heads * levels * points * 2
  LinearParams attention_weights;  // C -> heads * levels * points
  LinearParams output_proj;        // C -> C
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  NormParams norm1;
  DeformAttnParams cross_attn;
  NormParams norm2;
  LinearParams fc1, fc2;
  NormParams norm3;
};

struct LayerHeadParams {
  LinearParams cls;
  MlpParams box;         // C -> C -> C -> 4, predicts logit-space deltas
  LinearParams keypoint; // pose only: C -> 3 (dx, dy, confidence logit)
};

struct MaskHeadParams {
  ConvParams depthwise;  // 3x3, groups = C
  MlpParams pixel_mlp;   // C -> E -> E
  MlpParams query_mlp;   // C -> C -> E
};

struct DecoderParams {
  Tensor query_content;    // [N, C]
  Tensor query_reference;  // [N, 4] box logits
  Tensor keypoint_embed;   // [K, C], pose only
  Tensor keypoint_prior;   // [K, 2] offsets in box units, pose only
  MlpParams query_pos_head;  // 4 -> 2C -> C, absent for pose
  std::vector<DecoderLayerParams> layers;
  std::vector<LayerHeadParams> heads;
  std::optional<MaskHeadParams> mask_head;
};

/// Decoder tokens and their reference geometry. For pose, tokens are grouped
/// per query as [instance, keypoint_0 .. keypoint_{K-1}].
struct QueryState {
  Tensor content;             // [N * group_size, C]
  Tensor reference;           // [N, 4] normalized cxcywh
  Tensor keypoint_reference;  // [N, K, 2], pose only
};

struct PredictionSet {
  Tensor class_logits;  // [N, classes]
  Tensor boxes;         // [N, 4] cxcywh in [0,1]
  Tensor keypoints;     // [N, K, 3] (x, y, score), pose only
  Tensor mask_logits;   // [N, H/4, W/4], insseg only
};

/// Value tokens of one pyramid level, [h*w, C] row-major.
struct LevelValues {
  Tensor tokens;
  std::size_t h = 0, w = 0;
};

DecoderParams build_decoder(const DecoderConfig& config, Rng& rng);
DeformAttnParams build_deform_attn(std::size_t dim, int heads, std::size_t levels, std::size_t points, Rng& rng);
MlpParams build_mlp(const std::vector<std::size_t>& widths, Rng& rng);

Tensor mlp_forward(const Tensor& x, const MlpParams& p);

/// Sine embedding of normalized points [M, 2] into [M, dim]; half the
/// channels encode x, half y.
Tensor sine_point_embedding(const Tensor& points, std::size_t dim, double temperature = 10000.0);

std::vector<LevelValues> project_levels(const std::vector<Tensor>& maps, const LinearParams& value_proj);

/// Multi-scale deformable attention for M queries. `reference` is [M, 4]
/// (boxes: offsets scale with half the box size over P) or [M, 2] (points:
/// offsets are in level pixels). When asked, `weight_sums` receives the
/// per-(query, head) attention-weight totals.
Tensor deformable_attention(const Tensor& queries, const Tensor& reference, const std::vector<LevelValues>& levels,
                            const DeformAttnParams& p, int heads, std::size_t points,
                            std::vector<double>* weight_sums = nullptr);

/// Single query [C] at point reference (x, y) over [C,H,W] maps.
Tensor deformable_attention(const Tensor& query, double ref_x, double ref_y, const std::vector<Tensor>& maps,
                            const DeformAttnParams& p, int heads, std::size_t points);

QueryState initial_query_state(const DecoderParams& params, const DecoderConfig& config);

/// Mask logits [N, 2h, 2w] from final query content and the stride-8 map.
Tensor mask_head(const Tensor& queries, const Tensor& e8, const MaskHeadParams& params);

/// One PredictionSet per decoder layer; the last is the model output.
std::vector<PredictionSet> decoder_forward(const QueryState& queries, const EncodedFeatures& enc,
                                           const DecoderParams& params, const DecoderConfig& config,
                                           const DecoderOptions& options = {});

void visit(MlpParams& p, const std::string& name, const ParamVisitor& f);
void visit(DeformAttnParams& p, const std::string& name, const ParamVisitor& f);
void visit(DecoderParams& p, const std::string& name, const ParamVisitor& f);

}  // namespace ec
