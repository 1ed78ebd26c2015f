// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "edgecrafter/decoder.hpp"

namespace ec {

struct ModelConfig {
  std::string name = "S";
  Task task = Task::detect;
  BackboneConfig backbone;
  FusionStrategy fusion = FusionStrategy::mean;
  LayerRange fusion_range;
  EncoderConfig encoder;
  DecoderConfig decoder;

  std::size_t fused_dim() const { return fused_channels(backbone.embed_dim, fusion, fusion_range); }
  /// Checks every sub-config and their mutual consistency.
  void validate() const;
};

struct ModelParams {
  BackboneParams backbone;
  PyramidParams pyramid;
  EncoderParams encoder;
  DecoderParams decoder;
};

struct ModelOutput {
  BackboneOutput backbone;
  Tensor fused;
  FeaturePyramid pyramid;
  EncodedFeatures encoded;
  std::vector<PredictionSet> predictions;  // one per decoder layer

  const PredictionSet& final() const { return predictions.back(); }
};

ModelParams build_model(const ModelConfig& config, Rng& rng);
ModelOutput model_forward(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                          const DecoderOptions& options = {});

/// Top-level names are backbone, pyramid, encoder and decoder.
void visit(ModelParams& p, const ParamVisitor& f);

}  // namespace ec
