// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "edgecrafter/tensor.hpp"

namespace ec {

/// Weight [out, in] and bias [out] of a dense layer.
struct LinearParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

/// Weight [C_out, C_in/groups, k, k] and bias [C_out] of a 2D convolution.
struct ConvParams {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
};

struct AttentionParams {
  LinearParams q, k, v, o;
};

// ---------------------------------------------------------------------------
// MAC accounting. A MacTally opened on the current thread receives the
// multiply-accumulate count of every kernel below until it is destroyed; nested
// tallies forward their totals to the enclosing one.

class MacTally {
 public:
  MacTally();
  ~MacTally();
  MacTally(const MacTally&) = delete;
  MacTally& operator=(const MacTally&) = delete;

  std::uint64_t macs() const { return macs_; }

 private:
  friend void count_macs(std::uint64_t n);
  std::uint64_t macs_ = 0;
  MacTally* parent_ = nullptr;
};

void count_macs(std::uint64_t n);

// ---------------------------------------------------------------------------
// Kernels.

/// C[m,n] = A[m,k] * B[k,n] (+ C when accumulate). All row-major.
void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false);

std::size_t conv_output_size(std::size_t in, int kernel, int stride, int padding, int dilation);

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding, int dilation,
              int groups);
Tensor conv2d(const Tensor& input, const ConvParams& p);

/// y = x W^T + b over the trailing dimension.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor linear(const Tensor& input, const LinearParams& p);

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);
Tensor layer_norm(const Tensor& input, const NormParams& p, float eps = 1e-6f);

/// Normalizes a [C,H,W] map across channels independently at every pixel.
Tensor channel_norm(const Tensor& input, const NormParams& p, float eps = 1e-6f);

/// Softmax over the trailing dimension, max-subtracted.
Tensor softmax(const Tensor& input);
void softmax_inplace(std::span<float> row);

void gelu_inplace(Tensor& t);
void silu_inplace(Tensor& t);
void relu_inplace(Tensor& t);
void sigmoid_inplace(Tensor& t);
float sigmoid(float x);
float inverse_sigmoid(float p, float eps = 1e-5f);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

/// [rows, cols] -> [cols, rows].
Tensor transpose2d(const Tensor& t);
/// [C,H,W] -> [H*W, C] token layout and back.
Tensor map_to_tokens(const Tensor& map);
Tensor tokens_to_map(const Tensor& tokens, std::size_t h, std::size_t w);
/// Concatenates [C_i,H,W] maps along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Rows [begin, end) of a [n, D] tensor.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Per-head attention probabilities, heads x [n_q, n_k] row-major.
struct AttentionProbs {
  std::size_t heads = 0, n_q = 0, n_k = 0;
  std::vector<float> values;
};

/// Scaled dot-product attention with `heads` heads. Queries, keys and values
/// are projected from the three inputs; the concatenated head outputs go
/// through the output projection.
Tensor multi_head_attention(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in, int heads,
                            const AttentionParams& p, AttentionProbs* probs = nullptr);

Tensor multi_head_self_attention(const Tensor& tokens, int heads, const AttentionParams& p,
                                 AttentionProbs* probs = nullptr);

/// Attention over tokens laid out as [groups, group_size] (group-major) where a
/// token attends only to tokens of its own group or to tokens at the same
/// position in other groups. Returns, when asked, the per-token probability
/// row sums (for validation) rather than the sparse matrix.
Tensor grouped_cross_type_attention(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in, int heads,
                                    std::size_t group_size, const AttentionParams& p,
                                    std::vector<double>* row_sums = nullptr);

/// Number of keys each token sees under grouped_cross_type_attention.
std::size_t grouped_keys_per_token(std::size_t groups, std::size_t group_size);

/// Bilinear resize with half-pixel centers, source coordinates clamped to the
/// border.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Bilinear read at normalized (x, y) with half-pixel centers; taps outside
/// the map read as zero.
Tensor sample_point(const Tensor& input, double x, double y);

}  // namespace ec
