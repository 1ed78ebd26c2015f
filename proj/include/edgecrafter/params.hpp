// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgecrafter/ops.hpp"

namespace ec {

/// Deterministic random source. The engine's output sequence is fixed by the
/// standard and the float conversions below are explicit, so a seed produces
/// the same values on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent stream for sub-task `index` (per-trial seed splitting).
  Rng split(std::uint64_t index) const;

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_base_ = engine_();
};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng);
ConvParams make_conv(std::size_t c_in, std::size_t c_out, int kernel, int stride, int padding, Rng& rng,
                     int dilation = 1, int groups = 1);
NormParams make_norm(std::size_t d);
AttentionParams make_attention(std::size_t d, Rng& rng);

/// Every learnable tensor is reported to a visitor as (dotted name, tensor).
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

void visit(LinearParams& p, const std::string& name, const ParamVisitor& f);
void visit(ConvParams& p, const std::string& name, const ParamVisitor& f);
void visit(NormParams& p, const std::string& name, const ParamVisitor& f);
void visit(AttentionParams& p, const std::string& name, const ParamVisitor& f);

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // in float32 elements from the start of the blob
  std::size_t numel = 0;
};

/// Walks a parameter tree (given as a visit function) into an ordered manifest.
std::vector<ManifestEntry> collect_manifest(const std::function<void(const ParamVisitor&)>& walk);
std::size_t manifest_total(const std::vector<ManifestEntry>& manifest);
nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& manifest);

/// Writes a flat little-endian float32 blob plus its JSON shape manifest.
void save_params(const std::function<void(const ParamVisitor&)>& walk, const std::string& blob_path,
                 const std::string& manifest_path);
/// Reads back into an already-constructed tree; names and shapes must match.
void load_params(const std::function<void(const ParamVisitor&)>& walk, const std::string& blob_path,
                 const std::string& manifest_path);

}  // namespace ec
