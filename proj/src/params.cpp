// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/params.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

namespace ec {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

Rng Rng::split(std::uint64_t index) const {
  // splitmix64 of (base, index) keeps sibling streams decorrelated.
  std::uint64_t z = seed_base_ + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {uniform_tensor({out, in}, bound, rng), Tensor({out})};
}

ConvParams make_conv(std::size_t c_in, std::size_t c_out, int kernel, int stride, int padding, Rng& rng, int dilation,
                     int groups) {
  const auto k = static_cast<std::size_t>(kernel);
  const std::size_t fan_in = c_in / static_cast<std::size_t>(groups) * k * k;
  ConvParams p;
  p.weight = uniform_tensor({c_out, c_in / static_cast<std::size_t>(groups), k, k},
                            1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  p.bias = Tensor({c_out});
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  p.groups = groups;
  return p;
}

NormParams make_norm(std::size_t d) { return {Tensor::filled({d}, 1.0f), Tensor({d})}; }

AttentionParams make_attention(std::size_t d, Rng& rng) {
  AttentionParams p;
  p.q = make_linear(d, d, rng);
  p.k = make_linear(d, d, rng);
  p.v = make_linear(d, d, rng);
  p.o = make_linear(d, d, rng);
  return p;
}

void visit(LinearParams& p, const std::string& name, const ParamVisitor& f) {
  f(name + ".weight", p.weight);
  if (!p.bias.empty()) f(name + ".bias", p.bias);
}

void visit(ConvParams& p, const std::string& name, const ParamVisitor& f) {
  f(name + ".weight", p.weight);
  if (!p.bias.empty()) f(name + ".bias", p.bias);
}

void visit(NormParams& p, const std::string& name, const ParamVisitor& f) {
  f(name + ".gamma", p.gamma);
  f(name + ".beta", p.beta);
}

void visit(AttentionParams& p, const std::string& name, const ParamVisitor& f) {
  visit(p.q, name + ".q", f);
  visit(p.k, name + ".k", f);
  visit(p.v, name + ".v", f);
  visit(p.o, name + ".o", f);
}

std::vector<ManifestEntry> collect_manifest(const std::function<void(const ParamVisitor&)>& walk) {
  std::vector<ManifestEntry> out;
  std::size_t offset = 0;
  walk([&](const std::string& name, Tensor& t) {
    out.push_back({name, t.shape(), offset, t.numel()});
    offset += t.numel();
  });
  return out;
}

std::size_t manifest_total(const std::vector<ManifestEntry>& manifest) {
  std::size_t n = 0;
  for (const auto& e : manifest) n += e.numel;
  return n;
}

nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& manifest) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : manifest) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"numel", e.numel}});
  }
  return {{"dtype", "float32"},
          {"byte_order", "little"},
          {"total", manifest_total(manifest)},
          {"tensors", std::move(tensors)}};
}

namespace {

static_assert(std::endian::native == std::endian::little, "blob format assumes a little-endian host");

}  // namespace

void save_params(const std::function<void(const ParamVisitor&)>& walk, const std::string& blob_path,
                 const std::string& manifest_path) {
  const auto manifest = collect_manifest(walk);
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw InputError("cannot open " + blob_path + " for writing");
  walk([&](const std::string&, Tensor& t) {
    blob.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  });
  std::ofstream js(manifest_path);
  if (!js) throw InputError("cannot open " + manifest_path + " for writing");
  js << manifest_to_json(manifest).dump(2) << '\n';
}

void load_params(const std::function<void(const ParamVisitor&)>& walk, const std::string& blob_path,
                 const std::string& manifest_path) {
  std::ifstream js(manifest_path);
  if (!js) throw InputError("cannot open " + manifest_path);
  const auto doc = nlohmann::json::parse(js);
  std::map<std::string, ManifestEntry> by_name;
  for (const auto& e : doc.at("tensors")) {
    ManifestEntry entry{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                        e.at("numel").get<std::size_t>()};
    by_name.emplace(entry.name, std::move(entry));
  }
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw InputError("cannot open " + blob_path);
  walk([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("manifest has no tensor named " + name);
    if (it->second.shape != t.shape()) {
      throw DimensionError("tensor " + name + " has shape " + shape_str(it->second.shape) + " in manifest, expected " +
                           shape_str(t.shape()));
    }
    std::vector<float> values(t.numel());
    blob.seekg(static_cast<std::streamoff>(it->second.offset * sizeof(float)));
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!blob) throw InputError("blob too short for tensor " + name);
    t = Tensor(t.shape(), std::move(values));
  });
}

}  // namespace ec
