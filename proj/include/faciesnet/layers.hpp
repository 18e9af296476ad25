#pragma once

// Forward and backward kernels for every layer type the network uses.
//
// Forward functions return the output together with the cache their backward
// counterpart needs. All kernels are pure: they read their arguments and the
// explicit Rng, and touch no shared state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/random.hpp"
#include "faciesnet/tensor.hpp"

namespace faciesnet {

enum class Padding { same, valid };

inline const char* to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, Padding padding) {
  return padding == Padding::same ? length : length - kernel + 1;
}

// valid: ceil mode, the last window may be clipped at the end of the input.
// same: windows centred on every stride-th sample, edges replicated.
inline std::size_t pool_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                      Padding padding) {
  if (padding == Padding::same) return (length + stride - 1) / stride;
  return (length - kernel + stride - 1) / stride + 1;
}

// ---------------------------------------------------------------------------
// Caches

template <class T>
struct ConvCache {
  Tensor<T> input;
  const Tensor<T>* kernels = nullptr;
  Padding padding = Padding::same;
  Shape output_shape;
};

template <class T>
struct PoolCache {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <class T>
struct DenseCache {
  Tensor<T> input;
  const Tensor<T>* weights = nullptr;
};

template <class T>
struct ReluCache {
  Tensor<T> pre_activation;
};

template <class T>
struct DropoutCache {
  Tensor<T> mask;  // 0 or 1/(1-rate); all ones in inference mode
};

template <class T>
using LayerCache = std::variant<ConvCache<T>, PoolCache<T>, DenseCache<T>, ReluCache<T>, DropoutCache<T>>;

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias;
};

template <class T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

// ---------------------------------------------------------------------------
// Convolution along depth

namespace detail {

inline constexpr std::size_t kTile = 8;

inline std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

template <class T>
struct LaneOf {
  typedef T type __attribute__((vector_size(sizeof(T) * kTile)));
};

template <class T, class V = typename LaneOf<T>::type>
[[gnu::always_inline]] inline V load_lane(const T* p) {
  V v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T, class V>
[[gnu::always_inline]] inline void add_lane(T* p, const V& v) {
  V cur = load_lane<T, V>(p);
  cur += v;
  std::memcpy(p, &cur, sizeof cur);
}

// C[m x n] += A[m x k] * B[k x n]. A(i, p) is a[i * ars + p * acs], so a
// transposed A costs nothing; B and C are row-major and n is a multiple of
// kTile. Summation order depends only on the shapes.
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t ars, std::size_t acs, const T* b,
              std::size_t ldb, T* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * ars;
    for (std::size_t j = 0; j < n; j += kTile) {
      typename LaneOf<T>::type c0{}, c1{}, c2{}, c3{};
      for (std::size_t p = 0; p < k; ++p) {
        const auto bv = load_lane(b + p * ldb + j);
        const T* ap = a0 + p * acs;
        c0 += ap[0] * bv;
        c1 += ap[ars] * bv;
        c2 += ap[2 * ars] * bv;
        c3 += ap[3 * ars] * bv;
      }
      add_lane(c + i * ldc + j, c0);
      add_lane(c + (i + 1) * ldc + j, c1);
      add_lane(c + (i + 2) * ldc + j, c2);
      add_lane(c + (i + 3) * ldc + j, c3);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; j += kTile) {
      typename LaneOf<T>::type c0{};
      for (std::size_t p = 0; p < k; ++p) c0 += a[i * ars + p * acs] * load_lane(b + p * ldb + j);
      add_lane(c + i * ldc + j, c0);
    }
  }
}

template <class T, class V>
T lane_sum(const V& v) {
  T total{};
  for (std::size_t l = 0; l < kTile; ++l) total += v[l];
  return total;
}

// C[m x n] = A[m x k] * B[n x k]^T, all row-major; k must be a multiple of
// kTile (pad rows with zeros).
template <class T>
void gemm_abt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
              T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      typename LaneOf<T>::type c0{}, c1{}, c2{}, c3{};
      const T* b0 = b + j * ldb;
      for (std::size_t p = 0; p < k; p += kTile) {
        const auto av = load_lane(ai + p);
        c0 += av * load_lane(b0 + p);
        c1 += av * load_lane(b0 + ldb + p);
        c2 += av * load_lane(b0 + 2 * ldb + p);
        c3 += av * load_lane(b0 + 3 * ldb + p);
      }
      c[i * ldc + j] = lane_sum<T>(c0);
      c[i * ldc + j + 1] = lane_sum<T>(c1);
      c[i * ldc + j + 2] = lane_sum<T>(c2);
      c[i * ldc + j + 3] = lane_sum<T>(c3);
    }
    for (; j < n; ++j) {
      typename LaneOf<T>::type c0{};
      for (std::size_t p = 0; p < k; p += kTile) c0 += load_lane(ai + p) * load_lane(b + j * ldb + p);
      c[i * ldc + j] = lane_sum<T>(c0);
    }
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  typename LaneOf<T>::type acc{};
  std::size_t i = 0;
  for (; i + kTile <= n; i += kTile) acc += load_lane(a + i) * load_lane(b + i);
  T total = lane_sum<T>(acc);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

// Output positions t whose input sample t + j - pad lies inside [0, length).
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t j, std::size_t pad, std::size_t length,
                                                     std::size_t out_len) {
  const std::size_t lo = pad > j ? pad - j : 0;
  const std::size_t hi = std::min(out_len, length + pad > j ? length + pad - j : 0);
  return {lo, std::max(lo, hi)};
}

// Column matrix for a same/valid convolution: row c*k + j holds input channel
// c shifted by j - pad, zero outside the input; rows are `ld` wide.
template <class T>
std::vector<T> im2col(const Tensor<T>& input, std::size_t k, std::size_t pad, std::size_t out_len, std::size_t ld) {
  const std::size_t c_in = input.dim(0), length = input.dim(1);
  std::vector<T> cols(c_in * k * ld, T{});
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* src = &input(c, 0);
    for (std::size_t j = 0; j < k; ++j) {
      T* row = cols.data() + (c * k + j) * ld;
      const auto [lo, hi] = tap_range(j, pad, length, out_len);
      for (std::size_t t = lo; t < hi; ++t) row[t] = src[t + j - pad];
    }
  }
  return cols;
}

}  // namespace detail

template <class T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 Padding padding) {
  if (input.rank() != 2 || kernels.rank() != 3 || bias.rank() != 1) {
    throw DimensionError("conv1d expects input CxL, kernels OxCxK, bias O");
  }
  const std::size_t c_in = input.dim(0), length = input.dim(1);
  const std::size_t c_out = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv1d: input has " + std::to_string(c_in) + " channels, kernels expect " +
                         std::to_string(kernels.dim(1)));
  }
  if (bias.dim(0) != c_out) throw DimensionError("conv1d: bias length differs from output channels");
  if (k % 2 == 0) throw DimensionError("conv1d: kernel length must be odd");
  if (padding == Padding::valid && k > length) throw DimensionError("conv1d: kernel longer than input");
  check_finite(input, "conv1d input");

  const std::size_t out_len = conv_output_length(length, k, padding);
  const std::size_t pad = padding == Padding::same ? k / 2 : 0;
  const std::size_t ld = detail::round_up(out_len, detail::kTile);
  const auto cols = detail::im2col(input, k, pad, out_len, ld);
  std::vector<T> acc(c_out * ld);
  for (std::size_t o = 0; o < c_out; ++o) std::fill_n(acc.data() + o * ld, ld, bias[o]);
  detail::gemm_acc(c_out, ld, c_in * k, kernels.raw(), c_in * k, 1, cols.data(), ld, acc.data(), ld);
  Tensor<T> out({c_out, out_len});
  for (std::size_t o = 0; o < c_out; ++o) std::copy_n(acc.data() + o * ld, out_len, &out(o, 0));
  return out;
}

template <class T>
ConvGrads<T> conv1d_backward(const Tensor<T>& input, const Tensor<T>& kernels, Padding padding,
                             const Tensor<T>& upstream) {
  const std::size_t c_in = input.dim(0), length = input.dim(1);
  const std::size_t c_out = kernels.dim(0), k = kernels.dim(2);
  const std::size_t out_len = conv_output_length(length, k, padding);
  if (upstream.shape() != Shape{c_out, out_len}) {
    throw DimensionError("conv1d_backward: upstream " + to_string(upstream.shape()) + ", expected " +
                         to_string(Shape{c_out, out_len}));
  }
  const std::size_t pad = padding == Padding::same ? k / 2 : 0;
  const std::size_t rows = c_in * k;
  ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()), Tensor<T>({c_out})};
  for (std::size_t o = 0; o < c_out; ++o) {
    T acc{};
    for (std::size_t t = 0; t < out_len; ++t) acc += upstream(o, t);
    g.bias[o] = acc;
  }

  const std::size_t ld = detail::round_up(out_len, detail::kTile);
  const auto cols = detail::im2col(input, k, pad, out_len, ld);
  std::vector<T> up(c_out * ld, T{}), dcols(rows * ld, T{});
  for (std::size_t o = 0; o < c_out; ++o) std::copy_n(&upstream(o, 0), out_len, up.data() + o * ld);

  // kernel gradient: up [c_out x L'] times cols^T
  detail::gemm_abt(c_out, rows, ld, up.data(), ld, cols.data(), ld, g.kernels.raw(), rows);

  // input gradient: kernels^T [rows x c_out] times up [c_out x L'], then col2im
  detail::gemm_acc(rows, ld, c_out, kernels.raw(), 1, rows, up.data(), ld, dcols.data(), ld);
  for (std::size_t c = 0; c < c_in; ++c) {
    T* din = &g.input(c, 0);
    for (std::size_t j = 0; j < k; ++j) {
      const T* row = dcols.data() + (c * k + j) * ld;
      const auto [lo, hi] = detail::tap_range(j, pad, length, out_len);
      for (std::size_t t = lo; t < hi; ++t) din[t + j - pad] += row[t];
    }
  }
  return g;
}

template <class T>
std::pair<Tensor<T>, ConvCache<T>> conv1d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                                                 const Tensor<T>& bias, Padding padding) {
  Tensor<T> out = conv1d(input, kernels, bias, padding);
  ConvCache<T> cache{input, &kernels, padding, out.shape()};
  return {std::move(out), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Max pooling along depth

template <class T>
std::pair<Tensor<T>, PoolCache<T>> pool1d(const Tensor<T>& input, std::size_t kernel,
                                         std::size_t stride, Padding padding = Padding::valid) {
  if (input.rank() != 2) throw DimensionError("pool1d expects a CxL input");
  if (kernel < 1 || stride < 1) throw ConfigError("pool1d: kernel and stride must be >= 1");
  const std::size_t channels = input.dim(0), length = input.dim(1);
  if (length < kernel) {
    throw DimensionError("pool1d: input length " + std::to_string(length) + " < kernel " +
                         std::to_string(kernel));
  }
  const std::size_t out_len = pool_output_length(length, kernel, stride, padding);
  Tensor<T> out({channels, out_len});
  PoolCache<T> cache{input.shape(), out.shape(), std::vector<std::size_t>(channels * out_len)};
  const std::ptrdiff_t left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  const auto last = static_cast<std::ptrdiff_t>(length) - 1;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = &input(c, 0);
    for (std::size_t i = 0; i < out_len; ++i) {
      std::ptrdiff_t begin, end;
      if (padding == Padding::same) {
        begin = static_cast<std::ptrdiff_t>(i * stride) - left;
        end = begin + static_cast<std::ptrdiff_t>(kernel);
      } else {
        begin = static_cast<std::ptrdiff_t>(i * stride);
        end = std::min<std::ptrdiff_t>(begin + static_cast<std::ptrdiff_t>(kernel), last + 1);
      }
      std::size_t best = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(begin, 0, last));
      for (std::ptrdiff_t p = begin + 1; p < end; ++p) {
        const auto idx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(p, 0, last));
        if (src[idx] > src[best]) best = idx;
      }
      out(c, i) = src[best];
      cache.argmax[c * out_len + i] = c * length + best;
    }
  }
  return {std::move(out), std::move(cache)};
}

template <class T>
Tensor<T> pool1d_backward(const PoolCache<T>& cache, const Tensor<T>& upstream) {
  if (upstream.shape() != cache.output_shape) {
    throw DimensionError("pool1d_backward: upstream " + to_string(upstream.shape()) +
                         " does not match cached output " + to_string(cache.output_shape));
  }
  Tensor<T> grad(cache.input_shape);
  for (std::size_t i = 0; i < upstream.size(); ++i) grad[cache.argmax[i]] += upstream[i];
  return grad;
}

// ---------------------------------------------------------------------------
// Fully connected

template <class T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() != 1 || weights.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("dense expects input N, weights MxN, bias M");
  }
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.dim(0) != n) {
    throw DimensionError("dense: input length " + std::to_string(input.dim(0)) +
                         " but weights have " + std::to_string(n) + " columns");
  }
  if (bias.dim(0) != m) throw DimensionError("dense: bias length differs from weight rows");
  check_finite(input, "dense input");
  Tensor<T> out({m});
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = bias[i] + detail::dot(&weights(i, 0), input.raw(), n);
  }
  return out;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream) {
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (upstream.shape() != Shape{m}) {
    throw DimensionError("dense_backward: upstream " + to_string(upstream.shape()) + ", expected [" +
                         std::to_string(m) + "]");
  }
  DenseGrads<T> g{Tensor<T>({n}), Tensor<T>(weights.shape()), upstream};
  for (std::size_t i = 0; i < m; ++i) {
    const T u = upstream[i];
    const T* w = &weights(i, 0);
    T* dw = &g.weights(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      dw[j] = u * input[j];
      g.input[j] += u * w[j];
    }
  }
  return g;
}

template <class T>
std::pair<Tensor<T>, DenseCache<T>> dense_forward(const Tensor<T>& input, const Tensor<T>& weights,
                                                 const Tensor<T>& bias) {
  Tensor<T> out = dense(input, weights, bias);
  return {std::move(out), DenseCache<T>{input, &weights}};
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Tensor<T> relu(Tensor<T> x) {
  for (auto& v : x.data()) v = v > T{0} ? v : T{0};
  return x;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& pre_activation, const Tensor<T>& upstream) {
  pre_activation.require_same_shape(upstream, "relu_backward");
  Tensor<T> g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(pre_activation[i] > T{0})) g[i] = T{0};
  }
  return g;
}

// Numerically stable softmax of a logit vector.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1) throw DimensionError("softmax expects a vector");
  if (!logits.all_finite()) throw NumericError("softmax: non-finite logit");
  const T peak = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor<T> p(logits.shape());
  T sum{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    sum += p[i];
  }
  for (auto& v : p.data()) v /= sum;
  return p;
}

// Row-wise softmax of a BxF logit matrix.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows expects BxF logits");
  Tensor<T> out(logits.shape());
  const std::size_t f = logits.dim(1);
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    Tensor<T> row({f}, std::vector<T>(logits.row(b).begin(), logits.row(b).end()));
    const Tensor<T> p = softmax(row);
    std::copy(p.data().begin(), p.data().end(), out.row(b).begin());
  }
  return out;
}

// d(-log softmax(z)_label)/dz = p - onehot(label); label is 0-based here.
template <class T>
Tensor<T> softmax_cross_entropy_grad(const Tensor<T>& logits, std::size_t label) {
  if (label >= logits.size()) throw DimensionError("softmax_cross_entropy_grad: label out of range");
  Tensor<T> g = softmax(logits);
  g[label] -= T{1};
  return g;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
  const std::size_t length = inputs[0].dim(1);
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    if (t.rank() != 2) throw DimensionError("concat_channels expects CxL inputs");
    if (t.dim(1) != length) {
      throw DimensionError("concat_channels: length " + std::to_string(t.dim(1)) + " vs " +
                           std::to_string(length));
    }
    channels += t.dim(0);
  }
  std::vector<T> data;
  data.reserve(channels * length);
  for (const auto& t : inputs) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor<T>({channels, length}, std::move(data));
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& input, std::size_t first, std::size_t count) {
  if (input.rank() != 2 || first + count > input.dim(0) || count == 0) {
    throw DimensionError("slice_channels: range outside " + to_string(input.shape()));
  }
  const std::size_t length = input.dim(1);
  const auto begin = input.data().begin() + static_cast<std::ptrdiff_t>(first * length);
  return Tensor<T>({count, length},
                   std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(count * length)));
}

// ---------------------------------------------------------------------------
// Inverted dropout

template <class T>
std::pair<Tensor<T>, DropoutCache<T>> dropout(const Tensor<T>& input, double rate, Rng& rng,
                                             bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  DropoutCache<T> cache{Tensor<T>(input.shape(), T{1})};
  if (!training || rate == 0.0) return {input, std::move(cache)};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = rng.uniform() < rate ? T{0} : keep_scale;
    cache.mask[i] = m;
    out[i] *= m;
  }
  return {std::move(out), std::move(cache)};
}

template <class T>
Tensor<T> dropout_backward(const DropoutCache<T>& cache, const Tensor<T>& upstream) {
  cache.mask.require_same_shape(upstream, "dropout_backward");
  Tensor<T> g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cache.mask[i];
  return g;
}

// ---------------------------------------------------------------------------
// Generic backward dispatch

template <class T>
struct LayerGrads {
  Tensor<T> input;
  std::vector<Tensor<T>> params;  // {weights, bias} for conv and dense, empty otherwise
};

template <class T>
LayerGrads<T> layer_backward(const LayerCache<T>& cache, const Tensor<T>& upstream) {
  return std::visit(
      [&](const auto& c) -> LayerGrads<T> {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ConvCache<T>>) {
          if (c.kernels == nullptr) throw DimensionError("conv cache has no kernels");
          if (upstream.shape() != c.output_shape) {
            throw DimensionError("conv backward: upstream shape does not match cache");
          }
          auto g = conv1d_backward(c.input, *c.kernels, c.padding, upstream);
          return {std::move(g.input), {std::move(g.kernels), std::move(g.bias)}};
        } else if constexpr (std::is_same_v<C, PoolCache<T>>) {
          return {pool1d_backward(c, upstream), {}};
        } else if constexpr (std::is_same_v<C, DenseCache<T>>) {
          if (c.weights == nullptr) throw DimensionError("dense cache has no weights");
          auto g = dense_backward(c.input, *c.weights, upstream);
          return {std::move(g.input), {std::move(g.weights), std::move(g.bias)}};
        } else if constexpr (std::is_same_v<C, ReluCache<T>>) {
          return {relu_backward(c.pre_activation, upstream), {}};
        } else {
          return {dropout_backward(c, upstream), {}};
        }
      },
      cache);
}

}  // namespace faciesnet
