// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edgecrafter/model.hpp"

namespace ec {

/// Ordered (module, value) pairs; modules are backbone, pyramid, encoder, decoder.
using ModuleCounts = std::vector<std::pair<std::string, std::uint64_t>>;

struct BudgetReport {
  std::uint64_t params_total = 0;
  ModuleCounts params_by_module;
  std::uint64_t macs_total = 0;
  ModuleCounts macs_by_module;
  std::uint64_t flops_1x = 0;  // one FLOP per MAC
  std::uint64_t flops_2x = 0;  // two FLOPs per MAC
  std::size_t input_h = 0, input_w = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Learnable scalars by walking the constructed parameter tree.
ModuleCounts count_params(ModelParams& params);
/// Closed-form count from the configuration alone.
ModuleCounts analytic_params(const ModelConfig& config);

/// Multiply-accumulates of one forward pass at H x W. Convs, linears,
/// attention products, deformable weighted sums and mask dot products count;
/// softmax, norms, activations and resizes do not.
ModuleCounts estimate_macs(const ModelConfig& config, std::size_t h, std::size_t w,
                           const DecoderOptions& options = {});

std::uint64_t total_of(const ModuleCounts& counts);

BudgetReport budget_report(const ModelConfig& config, std::size_t h, std::size_t w,
                           const DecoderOptions& options = {});

}  // namespace ec
