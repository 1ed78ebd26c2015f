// SPDX-License-Identifier: Apache-2.0
#include "edgecrafter/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace ec {

namespace {
thread_local MacTally* t_current_tally = nullptr;
}

MacTally::MacTally() : parent_(t_current_tally) { t_current_tally = this; }

MacTally::~MacTally() {
  t_current_tally = parent_;
  if (parent_) parent_->macs_ += macs_;
}

void count_macs(std::uint64_t n) {
  if (t_current_tally) t_current_tally->macs_ += n;
}

// ---------------------------------------------------------------------------

namespace {

// Blocked GEMM: B is packed into KC x NR column panels, A into MR x KC row
// panels, and an MR x NR register tile accumulates one panel pair.
constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 16;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 96;
constexpr std::size_t kNC = 2048;

void pack_b(const float* b, std::size_t n, std::size_t kc, std::size_t nc, float* out) {
  for (std::size_t j0 = 0; j0 < nc; j0 += kNR) {
    const std::size_t w = std::min(kNR, nc - j0);
    for (std::size_t p = 0; p < kc; ++p) {
      const float* src = b + p * n + j0;
      std::size_t j = 0;
      for (; j < w; ++j) out[j] = src[j];
      for (; j < kNR; ++j) out[j] = 0.0f;
      out += kNR;
    }
  }
}

void pack_a(const float* a, std::size_t lda, std::size_t mc, std::size_t kc, float* out) {
  for (std::size_t i0 = 0; i0 < mc; i0 += kMR) {
    const std::size_t h = std::min(kMR, mc - i0);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t r = 0;
      for (; r < h; ++r) out[r] = a[(i0 + r) * lda + p];
      for (; r < kMR; ++r) out[r] = 0.0f;
      out += kMR;
    }
  }
}

#if defined(__AVX2__) && defined(__FMA__)
void micro_kernel(std::size_t kc, const float* pa, const float* pb, float* c, std::size_t ldc, bool accumulate) {
  __m256 acc[kMR][2];
  for (std::size_t r = 0; r < kMR; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_ps(c + r * ldc);
      acc[r][1] = _mm256_loadu_ps(c + r * ldc + 8);
    } else {
      acc[r][0] = _mm256_setzero_ps();
      acc[r][1] = _mm256_setzero_ps();
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(pb);
    const __m256 b1 = _mm256_loadu_ps(pb + 8);
    for (std::size_t r = 0; r < kMR; ++r) {
      const __m256 av = _mm256_broadcast_ss(pa + r);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
    pa += kMR;
    pb += kNR;
  }
  for (std::size_t r = 0; r < kMR; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc[r][0]);
    _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
  }
}
#else
void micro_kernel(std::size_t kc, const float* pa, const float* pb, float* c, std::size_t ldc, bool accumulate) {
  float acc[kMR][kNR];
  for (std::size_t r = 0; r < kMR; ++r) {
    for (std::size_t j = 0; j < kNR; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : 0.0f;
  }
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t r = 0; r < kMR; ++r) {
      for (std::size_t j = 0; j < kNR; ++j) acc[r][j] += pa[r] * pb[j];
    }
    pa += kMR;
    pb += kNR;
  }
  for (std::size_t r = 0; r < kMR; ++r) {
    for (std::size_t j = 0; j < kNR; ++j) c[r * ldc + j] = acc[r][j];
  }
}
#endif

}  // namespace

void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  count_macs(static_cast<std::uint64_t>(m) * k * n);
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0f);
    return;
  }
  thread_local std::vector<float> packed_b, packed_a;
  packed_b.resize(kKC * (kNC + kNR));
  packed_a.resize(kKC * (kMC + kMR));
  float edge[kMR * kNR];

  for (std::size_t jc = 0; jc < n; jc += kNC) {
    const std::size_t nc = std::min(kNC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKC) {
      const std::size_t kc = std::min(kKC, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(b + pc * n + jc, n, kc, nc, packed_b.data());
      for (std::size_t ic = 0; ic < m; ic += kMC) {
        const std::size_t mc = std::min(kMC, m - ic);
        pack_a(a + ic * k + pc, k, mc, kc, packed_a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNR) {
          const std::size_t w = std::min(kNR, nc - jr);
          const float* pb = packed_b.data() + (jr / kNR) * kc * kNR;
          for (std::size_t ir = 0; ir < mc; ir += kMR) {
            const std::size_t h = std::min(kMR, mc - ir);
            const float* pa = packed_a.data() + (ir / kMR) * kc * kMR;
            float* ct = c + (ic + ir) * n + jc + jr;
            if (h == kMR && w == kNR) {
              micro_kernel(kc, pa, pb, ct, n, acc);
              continue;
            }
            for (std::size_t r = 0; r < h; ++r) {
              for (std::size_t j = 0; j < w; ++j) edge[r * kNR + j] = acc ? ct[r * n + j] : 0.0f;
            }
            micro_kernel(kc, pa, pb, edge, kNR, true);
            for (std::size_t r = 0; r < h; ++r) {
              for (std::size_t j = 0; j < w; ++j) ct[r * n + j] = edge[r * kNR + j];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t conv_output_size(std::size_t in, int kernel, int stride, int padding, int dilation) {
  const long span = static_cast<long>(dilation) * (kernel - 1) + 1;
  const long padded = static_cast<long>(in) + 2L * padding;
  if (padded < span) throw DimensionError("convolution window larger than padded input");
  return static_cast<std::size_t>((padded - span) / stride + 1);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding, int dilation,
              int groups) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1 || dilation < 1 || groups < 1 || padding < 0) {
    throw ConfigError("conv2d: stride, dilation and groups must be >= 1 and padding >= 0");
  }
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  const auto g = static_cast<std::size_t>(groups);
  if (weight.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
  if (c_in % g != 0 || c_out % g != 0) throw DimensionError("conv2d: channels not divisible by groups");
  const std::size_t cin_g = c_in / g, cout_g = c_out / g;
  if (weight.dim(1) != cin_g) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1) * g) + " input channels, got " +
                         std::to_string(c_in));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != c_out)) throw DimensionError("conv2d: bias shape");

  const int kk = static_cast<int>(k);
  const std::size_t ho = conv_output_size(h, kk, stride, padding, dilation);
  const std::size_t wo = conv_output_size(w, kk, stride, padding, dilation);
  const std::size_t plane = ho * wo;
  Tensor out({c_out, ho, wo});
  const float* in = input.data();
  const float* wt = weight.data();
  float* o = out.data();

  if (cin_g == 1 && cout_g == 1) {
    // Depthwise: direct loop.
    count_macs(static_cast<std::uint64_t>(c_out) * plane * k * k);
    for (std::size_t c = 0; c < c_out; ++c) {
      const float* src = in + c * h * w;
      const float* kw = wt + c * k * k;
      float* dst = o + c * plane;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          float acc = 0.0f;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy * stride) - padding + static_cast<long>(ky) * dilation;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(ox * stride) - padding + static_cast<long>(kx) * dilation;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              acc += kw[ky * k + kx] * src[iy * static_cast<long>(w) + ix];
            }
          }
          dst[oy * wo + ox] = acc;
        }
      }
    }
  } else {
    const std::size_t rows = cin_g * k * k;
    const bool pointwise = k == 1 && stride == 1 && padding == 0;
    std::vector<float> col;
    if (!pointwise) col.resize(rows * plane);
    for (std::size_t gi = 0; gi < g; ++gi) {
      const float* src = in + gi * cin_g * h * w;
      const float* cols = src;
      if (!pointwise) {
        for (std::size_t c = 0; c < cin_g; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              float* dst = col.data() + ((c * k + ky) * k + kx) * plane;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const long iy = static_cast<long>(oy * stride) - padding + static_cast<long>(ky) * dilation;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const long ix = static_cast<long>(ox * stride) - padding + static_cast<long>(kx) * dilation;
                  const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w);
                  dst[oy * wo + ox] = inside ? src[(c * h + iy) * w + ix] : 0.0f;
                }
              }
            }
          }
        }
        cols = col.data();
      }
      gemm(wt + gi * cout_g * rows, cols, o + gi * cout_g * plane, cout_g, rows, plane);
    }
  }
  if (!bias.empty()) {
    for (std::size_t c = 0; c < c_out; ++c) {
      const float b = bias[c];
      float* dst = o + c * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += b;
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  return conv2d(input, p.weight, p.bias, p.stride, p.padding, p.dilation, p.groups);
}

// ---------------------------------------------------------------------------

Tensor transpose2d(const Tensor& t) {
  require_rank(t, 2, "transpose2d");
  const std::size_t r = t.dim(0), c = t.dim(1);
  Tensor out({c, r});
  const float* src = t.data();
  float* dst = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
  if (input.empty() || input.shape().back() != d_in) {
    throw DimensionError("linear: trailing dimension " + shape_str(input.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != d_out)) throw DimensionError("linear: bias shape");
  const std::size_t rows = input.numel() / d_in;
  Shape shape = input.shape();
  shape.back() = d_out;
  Tensor out(shape);
  const Tensor wt = transpose2d(weight);
  gemm(input.data(), wt.data(), out.data(), rows, d_in, d_out);
  if (!bias.empty()) {
    float* o = out.data();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < d_out; ++j) o[i * d_out + j] += bias[j];
    }
  }
  return out;
}

Tensor linear(const Tensor& input, const LinearParams& p) { return linear(input, p.weight, p.bias); }

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
  if (input.empty()) throw DimensionError("layer_norm: empty input");
  const std::size_t d = input.shape().back();
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine parameters must have D entries");
  Tensor out(input.shape());
  const std::size_t rows = input.numel() / d;
  const float* x = input.data();
  float* y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * d;
    float mean = 0.0f;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
      const float t = xr[i] - mean;
      var += t * t;
    }
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    float* yr = y + r * d;
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

Tensor layer_norm(const Tensor& input, const NormParams& p, float eps) {
  return layer_norm(input, p.gamma, p.beta, eps);
}

Tensor channel_norm(const Tensor& input, const NormParams& p, float eps) {
  require_rank(input, 3, "channel_norm");
  const std::size_t c = input.dim(0), plane = input.dim(1) * input.dim(2);
  if (p.gamma.numel() != c || p.beta.numel() != c) throw DimensionError("channel_norm: affine parameters");
  Tensor out(input.shape());
  const float* x = input.data();
  float* y = out.data();
  std::vector<float> mean(plane, 0.0f), var(plane, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) mean[i] += x[ch * plane + i];
  }
  for (auto& m : mean) m /= static_cast<float>(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float t = x[ch * plane + i] - mean[i];
      var[i] += t * t;
    }
  }
  for (auto& v : var) v = 1.0f / std::sqrt(v / static_cast<float>(c) + eps);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float g = p.gamma[ch], b = p.beta[ch];
    for (std::size_t i = 0; i < plane; ++i) y[ch * plane + i] = (x[ch * plane + i] - mean[i]) * var[i] * g + b;
  }
  return out;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  // Denominator accumulates in double so long rows still sum to one tightly.
  double sum = 0.0;
  for (auto& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (auto& v : row) v = static_cast<float>(v * inv);
}

Tensor softmax(const Tensor& input) {
  if (input.empty()) throw DimensionError("softmax: empty input");
  Tensor out = input;
  const std::size_t n = input.shape().back();
  auto values = out.values();
  for (std::size_t r = 0; r < out.numel() / n; ++r) softmax_inplace(values.subspan(r * n, n));
  return out;
}

void gelu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = 0.5f * v * (1.0f + std::erf(v * static_cast<float>(std::numbers::sqrt2 / 2.0)));
}

void silu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = v / (1.0f + std::exp(-v));
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = v > 0.0f ? v : 0.0f;
}

float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

void sigmoid_inplace(Tensor& t) {
  for (auto& v : t.values()) v = sigmoid(v);
}

float inverse_sigmoid(float p, float eps) {
  const float x = std::clamp(p, 0.0f, 1.0f);
  const float x1 = std::max(x, eps);
  const float x2 = std::max(1.0f - x, eps);
  return std::log(x1 / x2);
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  float* x = a.data();
  const float* y = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) x[i] += y[i];
}

Tensor scale(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

Tensor map_to_tokens(const Tensor& map) {
  require_rank(map, 3, "map_to_tokens");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  return transpose2d(map.reshaped({c, hw}));
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t h, std::size_t w) {
  require_rank(tokens, 2, "tokens_to_map");
  if (tokens.dim(0) != h * w) {
    throw DimensionError("tokens_to_map: " + std::to_string(tokens.dim(0)) + " tokens cannot fill a " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  const std::size_t c = tokens.dim(1);
  return transpose2d(tokens).reshaped({c, h, w});
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) throw DimensionError("concat_channels: spatial mismatch");
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<long>(a.numel()));
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  require_rank(t, 2, "slice_rows");
  if (begin >= end || end > t.dim(0)) throw DimensionError("slice_rows: bad range");
  const std::size_t d = t.dim(1);
  Tensor out({end - begin, d});
  std::copy(t.data() + begin * d, t.data() + end * d, out.data());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t head_dim_of(std::size_t d, int heads) {
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
    throw ConfigError("attention: embedding dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  return d / static_cast<std::size_t>(heads);
}

}  // namespace

Tensor multi_head_attention(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in, int heads,
                            const AttentionParams& p, AttentionProbs* probs) {
  require_rank(query_in, 2, "attention query");
  require_rank(key_in, 2, "attention key");
  require_rank(value_in, 2, "attention value");
  if (key_in.dim(0) != value_in.dim(0)) throw DimensionError("attention: key/value token counts differ");
  const std::size_t d = p.q.out_features();
  const std::size_t dh = head_dim_of(d, heads);
  const Tensor q = linear(query_in, p.q);
  const Tensor k = linear(key_in, p.k);
  const Tensor v = linear(value_in, p.v);
  const std::size_t nq = q.dim(0), nk = k.dim(0);
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(dh));

  if (probs) {
    probs->heads = static_cast<std::size_t>(heads);
    probs->n_q = nq;
    probs->n_k = nk;
    probs->values.assign(probs->heads * nq * nk, 0.0f);
  }
  Tensor merged({nq, d});
  std::vector<float> qh(nq * dh), kt(dh * nk), vh(nk * dh), scores(nq * nk), oh(nq * dh);
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t c = 0; c < dh; ++c) qh[i * dh + c] = q[i * d + h * dh + c] * scale_factor;
    }
    for (std::size_t j = 0; j < nk; ++j) {
      for (std::size_t c = 0; c < dh; ++c) {
        kt[c * nk + j] = k[j * d + h * dh + c];
        vh[j * dh + c] = v[j * d + h * dh + c];
      }
    }
    gemm(qh.data(), kt.data(), scores.data(), nq, dh, nk);
    for (std::size_t i = 0; i < nq; ++i) softmax_inplace(std::span<float>(scores.data() + i * nk, nk));
    if (probs) std::copy(scores.begin(), scores.end(), probs->values.begin() + static_cast<long>(h * nq * nk));
    gemm(scores.data(), vh.data(), oh.data(), nq, nk, dh);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t c = 0; c < dh; ++c) merged[i * d + h * dh + c] = oh[i * dh + c];
    }
  }
  return linear(merged, p.o);
}

Tensor multi_head_self_attention(const Tensor& tokens, int heads, const AttentionParams& p, AttentionProbs* probs) {
  return multi_head_attention(tokens, tokens, tokens, heads, p, probs);
}

std::size_t grouped_keys_per_token(std::size_t groups, std::size_t group_size) { return group_size + groups - 1; }

Tensor grouped_cross_type_attention(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in, int heads,
                                    std::size_t group_size, const AttentionParams& p, std::vector<double>* row_sums) {
  require_rank(query_in, 2, "grouped attention");
  const std::size_t total = query_in.dim(0);
  if (group_size == 0 || total % group_size != 0) throw DimensionError("grouped attention: token count");
  if (key_in.dim(0) != total || value_in.dim(0) != total) throw DimensionError("grouped attention: token count");
  const std::size_t groups = total / group_size;
  const std::size_t d = p.q.out_features();
  const std::size_t dh = head_dim_of(d, heads);
  const Tensor q = linear(query_in, p.q);
  const Tensor k = linear(key_in, p.k);
  const Tensor v = linear(value_in, p.v);
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(dh));
  const std::size_t keys = grouped_keys_per_token(groups, group_size);
  count_macs(2ULL * total * keys * d);

  if (row_sums) row_sums->assign(total * static_cast<std::size_t>(heads), 0.0);
  Tensor merged({total, d});
  std::vector<std::size_t> key_index(keys);
  std::vector<float> scores(keys);
  for (std::size_t t = 0; t < total; ++t) {
    const std::size_t g = t / group_size, s = t % group_size;
    std::size_t n = 0;
    for (std::size_t s2 = 0; s2 < group_size; ++s2) key_index[n++] = g * group_size + s2;
    for (std::size_t g2 = 0; g2 < groups; ++g2) {
      if (g2 != g) key_index[n++] = g2 * group_size + s;
    }
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
      const float* qv = q.data() + t * d + h * dh;
      for (std::size_t j = 0; j < keys; ++j) {
        const float* kv = k.data() + key_index[j] * d + h * dh;
        float acc = 0.0f;
        for (std::size_t c = 0; c < dh; ++c) acc += qv[c] * kv[c];
        scores[j] = acc * scale_factor;
      }
      softmax_inplace(scores);
      float* out = merged.data() + t * d + h * dh;
      double sum = 0.0;
      for (std::size_t j = 0; j < keys; ++j) {
        const float* vv = v.data() + key_index[j] * d + h * dh;
        const float a = scores[j];
        sum += a;
        for (std::size_t c = 0; c < dh; ++c) out[c] += a * vv[c];
      }
      if (row_sums) (*row_sums)[t * static_cast<std::size_t>(heads) + h] = sum;
    }
  }
  return linear(merged, p.o);
}

// ---------------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

Tap resize_tap(std::size_t i, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output size must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h == out_h && w == out_w) return input;
  std::vector<Tap> ys(out_h), xs(out_w);
  for (std::size_t i = 0; i < out_h; ++i) ys[i] = resize_tap(i, h, out_h);
  for (std::size_t j = 0; j < out_w; ++j) xs[j] = resize_tap(j, w, out_w);
  Tensor out({c, out_h, out_w});
  const float* src = input.data();
  float* dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = src + ch * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& ty = ys[i];
      const float* r0 = plane + ty.lo * w;
      const float* r1 = plane + ty.hi * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& tx = xs[j];
        const double top = r0[tx.lo] + (r0[tx.hi] - static_cast<double>(r0[tx.lo])) * tx.frac;
        const double bot = r1[tx.lo] + (r1[tx.hi] - static_cast<double>(r1[tx.lo])) * tx.frac;
        dst[(ch * out_h + i) * out_w + j] = static_cast<float>(top + (bot - top) * ty.frac);
      }
    }
  }
  return out;
}

Tensor sample_point(const Tensor& input, double x, double y) {
  require_rank(input, 3, "sample_point");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  double px = x * static_cast<double>(w) - 0.5;
  double py = y * static_cast<double>(h) - 0.5;
  // Snap coordinates that are a rounding error away from a pixel center.
  if (std::abs(px - std::round(px)) < 1e-9) px = std::round(px);
  if (std::abs(py - std::round(py)) < 1e-9) py = std::round(py);
  const double fx = std::floor(px), fy = std::floor(py);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = px - fx, ay = py - fy;
  Tensor out({c});
  auto tap = [&](long yy, long xx, std::size_t ch) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
    return input[(ch * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    double v = 0.0;
    if (ax == 0.0 && ay == 0.0) {
      v = tap(y0, x0, ch);
    } else {
      v = tap(y0, x0, ch) * (1 - ax) * (1 - ay) + tap(y0, x0 + 1, ch) * ax * (1 - ay) +
          tap(y0 + 1, x0, ch) * (1 - ax) * ay + tap(y0 + 1, x0 + 1, ch) * ax * ay;
    }
    out[ch] = static_cast<float>(v);
  }
  return out;
}

}  // namespace ec
