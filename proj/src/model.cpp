// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/model.hpp"

namespace ec {

void ModelConfig::validate() const {
  backbone.validate();
  encoder.validate();
  decoder.validate();
  if (fusion_range.size() == 0) throw ConfigError("empty fusion range");
  if (fusion_range.last >= backbone.depth) {
    throw ConfigError("fusion range ends at block " + std::to_string(fusion_range.last) + " but depth is " +
                      std::to_string(backbone.depth));
  }
  if (decoder.hidden_dim != encoder.hidden_dim) throw ConfigError("decoder and encoder hidden dims differ");
  if (decoder.task != task) throw ConfigError("decoder task does not match model task");
}

ModelParams build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.backbone = build_backbone(config.backbone, rng);
  p.pyramid = build_pyramid(config.fused_dim(), config.encoder.hidden_dim, rng);
  p.encoder = build_encoder(config.encoder, rng);
  p.decoder = build_decoder(config.decoder, rng);
  return p;
}

ModelOutput model_forward(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                          const DecoderOptions& options) {
  require_rank(image, 3, "image");
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw DimensionError("input " + shape_str(image.shape()) + " must be divisible by 32");
  }
  ModelOutput out;
  out.backbone = backbone_forward(image, params.backbone, config.backbone);
  out.fused = fuse_layers(out.backbone, config.fusion, config.fusion_range);
  out.pyramid = make_pyramid(out.fused, params.pyramid);
  out.encoded = encoder_forward(out.pyramid, params.encoder, config.encoder);
  out.predictions = decoder_forward(initial_query_state(params.decoder, config.decoder), out.encoded, params.decoder,
                                    config.decoder, options);
  return out;
}

void visit(ModelParams& p, const ParamVisitor& f) {
  visit(p.backbone, "backbone", f);
  visit(p.pyramid, "pyramid", f);
  visit(p.encoder, "encoder", f);
  visit(p.decoder, "decoder", f);
}

}  // namespace ec
