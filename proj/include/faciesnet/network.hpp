#pragma once

// The inception ConvNet: declarative topology, parameter store, and the
// forward/backward passes over a batch of log windows.
//
//   input (7 x W)
//   -> [stem conv + ReLU]
//   -> { inception module -> max-pool k=2 s=2 } x stages
//   -> flatten -> { fc + ReLU + dropout } x hidden -> fc (logits)

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/layers.hpp"
#include "faciesnet/parallel.hpp"
#include "faciesnet/random.hpp"
#include "faciesnet/tensor.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

/// Four parallel paths whose outputs are concatenated along channels:
/// 1x1 conv | 1x1 reduce -> small conv | 1x1 reduce -> large conv |
/// same-padded max-pool (k=3, s=1) -> 1x1 conv. Every conv is followed by
/// ReLU and uses same padding, so the module preserves depth resolution.
struct InceptionSpec {
  std::size_t branch_1x1 = 8;
  std::size_t reduce_small = 8;
  std::size_t small_kernel = 3;
  std::size_t small_channels = 16;
  std::size_t reduce_large = 8;
  std::size_t large_kernel = 7;
  std::size_t large_channels = 16;
  std::size_t pool_proj = 8;

  static constexpr std::size_t kPoolKernel = 3;

  std::size_t out_channels() const { return branch_1x1 + small_channels + large_channels + pool_proj; }

  void validate() const {
    if (small_kernel % 2 == 0 || large_kernel % 2 == 0) throw ConfigError("inception kernels must be odd");
    if (!(small_kernel < large_kernel)) throw ConfigError("inception small kernel must be < large kernel");
    for (auto c : {branch_1x1, reduce_small, small_channels, reduce_large, large_channels, pool_proj}) {
      if (c < 1) throw ConfigError("inception channel counts must be >= 1");
    }
  }

  friend bool operator==(const InceptionSpec&, const InceptionSpec&) = default;
};

struct StemSpec {
  std::size_t kernel = 5;
  std::size_t channels = 16;
  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

struct ModelSpec {
  std::size_t in_channels = kNumChannels;
  std::size_t window = 31;
  std::optional<StemSpec> stem = StemSpec{};
  std::vector<InceptionSpec> stages = {InceptionSpec{}, InceptionSpec{}};
  std::size_t pool_kernel = 2;
  std::size_t pool_stride = 2;
  std::vector<std::size_t> fc_hidden = {64};
  double dropout = 0.5;
  std::size_t classes = kNumFacies;

  // 1 inception stage on 9-sample windows; small enough for exhaustive
  // finite-difference checks.
  static ModelSpec tiny() {
    ModelSpec s;
    s.window = 9;
    s.stem = StemSpec{3, 4};
    s.stages = {InceptionSpec{2, 2, 3, 3, 2, 5, 3, 2}};
    s.fc_hidden = {8};
    s.dropout = 0.25;
    return s;
  }

  // Depth length entering each stage, plus the final length (size stages+1).
  std::vector<std::size_t> stage_lengths() const {
    std::vector<std::size_t> lengths{window};
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::size_t l = lengths.back();
      if (l < InceptionSpec::kPoolKernel || l < pool_kernel) {
        throw ConfigError("window " + std::to_string(window) + " too short for " + std::to_string(stages.size()) +
                          " stages (stage " + std::to_string(i) + " sees length " + std::to_string(l) + ")");
      }
      lengths.push_back(pool_output_length(l, pool_kernel, pool_stride, Padding::valid));
    }
    return lengths;
  }

  std::size_t feature_channels() const {
    if (!stages.empty()) return stages.back().out_channels();
    return stem ? stem->channels : in_channels;
  }

  std::size_t flatten_size() const { return feature_channels() * stage_lengths().back(); }

  void validate() const {
    if (in_channels < 1) throw ConfigError("model needs at least one input channel");
    if (window < 1 || window % 2 == 0) throw ConfigError("window must be odd and >= 1");
    if (stem) {
      if (stem->kernel % 2 == 0) throw ConfigError("stem kernel must be odd");
      if (stem->channels < 1) throw ConfigError("stem channels must be >= 1");
    }
    for (const auto& s : stages) s.validate();
    if (pool_kernel < 1 || pool_stride < 1) throw ConfigError("pool kernel/stride must be >= 1");
    for (auto h : fc_hidden) {
      if (h < 1) throw ConfigError("fc layer sizes must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (classes != kNumFacies) throw ConfigError("classes must equal the number of facies (9)");
    (void)stage_lengths();
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
};

/// Stable, ordered list of every parameter tensor the spec implies.
inline std::vector<ParamEntry> param_layout(const ModelSpec& spec) {
  std::vector<ParamEntry> out;
  auto conv = [&](const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k) {
    out.push_back({name + ".w", {c_out, c_in, k}, c_in * k});
    out.push_back({name + ".b", {c_out}, 0});
  };
  auto fc = [&](const std::string& name, std::size_t m, std::size_t n) {
    out.push_back({name + ".w", {m, n}, n});
    out.push_back({name + ".b", {m}, 0});
  };
  std::size_t channels = spec.in_channels;
  if (spec.stem) {
    conv("stem", spec.stem->channels, channels, spec.stem->kernel);
    channels = spec.stem->channels;
  }
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& s = spec.stages[i];
    const std::string p = "stage" + std::to_string(i);
    conv(p + ".b1", s.branch_1x1, channels, 1);
    conv(p + ".b2_reduce", s.reduce_small, channels, 1);
    conv(p + ".b2", s.small_channels, s.reduce_small, s.small_kernel);
    conv(p + ".b3_reduce", s.reduce_large, channels, 1);
    conv(p + ".b3", s.large_channels, s.reduce_large, s.large_kernel);
    conv(p + ".b4", s.pool_proj, channels, 1);
    channels = s.out_channels();
  }
  std::size_t features = spec.flatten_size();
  for (std::size_t j = 0; j < spec.fc_hidden.size(); ++j) {
    fc("fc" + std::to_string(j), spec.fc_hidden[j], features);
    features = spec.fc_hidden[j];
  }
  fc("out", spec.classes, features);
  return out;
}

template <class T>
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  const Tensor<T>& operator[](std::size_t i) const { return tensors[i]; }
  Tensor<T>& operator[](std::size_t i) { return tensors[i]; }

  const Tensor<T>& at(const std::string& name) const { return tensors.at(index_of(name)); }
  Tensor<T>& at(const std::string& name) { return tensors.at(index_of(name)); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw ConfigError("no parameter named " + name);
  }

  static ModelParams zeros(const ModelSpec& spec) {
    ModelParams p;
    for (const auto& e : param_layout(spec)) {
      p.names.push_back(e.name);
      p.tensors.emplace_back(e.shape);
    }
    return p;
  }

  ModelParams zeros_like() const {
    ModelParams p;
    p.names = names;
    for (const auto& t : tensors) p.tensors.emplace_back(t.shape());
    return p;
  }

  ModelParams& operator+=(const ModelParams& other) {
    for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
    return *this;
  }

  ModelParams& operator*=(T scale) {
    for (auto& t : tensors) t *= scale;
    return *this;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> p;
    p.names = names;
    for (const auto& t : tensors) p.tensors.push_back(t.template cast<U>());
    return p;
  }

  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

  // Shapes and names must match `spec` exactly.
  void check_against(const ModelSpec& spec) const {
    const auto layout = param_layout(spec);
    if (layout.size() != tensors.size() || names.size() != tensors.size()) {
      throw DimensionError("parameter count " + std::to_string(tensors.size()) + " does not match spec (" +
                           std::to_string(layout.size()) + ")");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout[i].name != names[i] || layout[i].shape != tensors[i].shape()) {
        throw DimensionError("parameter " + names[i] + " " + to_string(tensors[i].shape()) + " does not match spec " +
                             layout[i].name + " " + to_string(layout[i].shape));
      }
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Stream id base for per-layer initialization draws.
inline constexpr std::uint64_t kInitStreamBase = 1000;

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Parameter i draws
/// from its own stream `Rng(seed, kInitStreamBase + i)`.
template <class T>
ModelParams<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams<T> p;
  const auto layout = param_layout(spec);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = layout[i];
    Tensor<T> t(e.shape);
    if (e.fan_in > 0) {
      Rng rng(seed, kInitStreamBase + i);
      const double sd = std::sqrt(2.0 / static_cast<double>(e.fan_in));
      for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
    }
    p.names.push_back(e.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

// Resolves parameter indices once per pass.
struct ParamIndex {
  struct Conv {
    std::size_t w, b;
  };
  struct Stage {
    Conv b1, b2_reduce, b2, b3_reduce, b3, b4;
  };
  std::optional<Conv> stem;
  std::vector<Stage> stages;
  std::vector<Conv> fc;
  Conv out{};

  explicit ParamIndex(const ModelSpec& spec) {
    std::size_t i = 0;
    auto next = [&] {
      Conv c{i, i + 1};
      i += 2;
      return c;
    };
    if (spec.stem) stem = next();
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
      Stage st;
      st.b1 = next();
      st.b2_reduce = next();
      st.b2 = next();
      st.b3_reduce = next();
      st.b3 = next();
      st.b4 = next();
      stages.push_back(st);
    }
    for (std::size_t j = 0; j < spec.fc_hidden.size(); ++j) fc.push_back(next());
    out = next();
  }
};

}  // namespace detail

template <class T>
struct ConvReluCache {
  ConvCache<T> conv;
  Tensor<T> pre_activation;
};

template <class T>
struct InceptionCache {
  ConvReluCache<T> b1, b2_reduce, b2, b3_reduce, b3, b4;
  PoolCache<T> pool;
  std::size_t input_channels = 0;
};

template <class T>
struct HiddenCache {
  DenseCache<T> dense;
  Tensor<T> pre_activation;
  DropoutCache<T> dropout;
};

/// Everything the backward pass needs for one example.
template <class T>
struct ExampleCache {
  std::optional<ConvReluCache<T>> stem;
  std::vector<InceptionCache<T>> stages;
  std::vector<PoolCache<T>> downsample;
  Shape feature_shape;
  std::vector<HiddenCache<T>> hidden;
  DenseCache<T> out;
};

template <class T>
struct ForwardResult {
  Tensor<T> logits;  // B x classes
  std::vector<ExampleCache<T>> caches;
  const ModelParams<T>* params = nullptr;
};

namespace detail {

template <class T>
Tensor<T> conv_relu(const Tensor<T>& x, const ModelParams<T>& p, ParamIndex::Conv idx,
                    ConvReluCache<T>* cache) {
  Tensor<T> pre = conv1d(x, p[idx.w], p[idx.b], Padding::same);
  Tensor<T> out = relu(pre);
  if (cache) {
    cache->conv = ConvCache<T>{x, &p[idx.w], Padding::same, pre.shape()};
    cache->pre_activation = std::move(pre);
  }
  return out;
}

template <class T>
Tensor<T> conv_relu_backward(const ConvReluCache<T>& cache, const Tensor<T>& upstream, ModelParams<T>& grads,
                             ParamIndex::Conv idx) {
  const Tensor<T> g = relu_backward(cache.pre_activation, upstream);
  auto cg = conv1d_backward(cache.conv.input, *cache.conv.kernels, cache.conv.padding, g);
  grads[idx.w] += cg.kernels;
  grads[idx.b] += cg.bias;
  return std::move(cg.input);
}

}  // namespace detail

template <class T>
Tensor<T> inception_forward(const ModelParams<T>& params, const detail::ParamIndex::Stage& idx,
                            const Tensor<T>& input, InceptionCache<T>* cache) {
  if (input.rank() != 2 || input.dim(0) != params[idx.b1.w].dim(1)) {
    throw DimensionError("inception: input " + to_string(input.shape()) + " does not match expected channels " +
                         std::to_string(params[idx.b1.w].dim(1)));
  }
  ConvReluCache<T>* c1 = cache ? &cache->b1 : nullptr;
  ConvReluCache<T>* c2r = cache ? &cache->b2_reduce : nullptr;
  ConvReluCache<T>* c2 = cache ? &cache->b2 : nullptr;
  ConvReluCache<T>* c3r = cache ? &cache->b3_reduce : nullptr;
  ConvReluCache<T>* c3 = cache ? &cache->b3 : nullptr;
  ConvReluCache<T>* c4 = cache ? &cache->b4 : nullptr;

  std::vector<Tensor<T>> branches;
  branches.reserve(4);
  branches.push_back(detail::conv_relu(input, params, idx.b1, c1));
  branches.push_back(detail::conv_relu(detail::conv_relu(input, params, idx.b2_reduce, c2r), params, idx.b2, c2));
  branches.push_back(detail::conv_relu(detail::conv_relu(input, params, idx.b3_reduce, c3r), params, idx.b3, c3));
  auto [pooled, pool_cache] = pool1d(input, InceptionSpec::kPoolKernel, 1, Padding::same);
  branches.push_back(detail::conv_relu(pooled, params, idx.b4, c4));
  if (cache) {
    cache->pool = std::move(pool_cache);
    cache->input_channels = input.dim(0);
  }
  return concat_channels<T>(branches);
}

// Runs inception stage `stage` of `model` on an arbitrary-length input.
template <class T>
Tensor<T> inception_forward(const ModelSpec& model, const ModelParams<T>& params, std::size_t stage,
                            const Tensor<T>& input, InceptionCache<T>* cache = nullptr) {
  const detail::ParamIndex index(model);
  return inception_forward(params, index.stages.at(stage), input, cache);
}

template <class T>
Tensor<T> inception_backward(const InceptionSpec& spec, const InceptionCache<T>& cache, const Tensor<T>& upstream,
                             ModelParams<T>& grads, const detail::ParamIndex::Stage& idx) {
  const std::size_t length = upstream.dim(1);
  std::size_t first = 0;
  auto take = [&](std::size_t n) {
    Tensor<T> s = slice_channels(upstream, first, n);
    first += n;
    return s;
  };
  const Tensor<T> g1 = take(spec.branch_1x1);
  const Tensor<T> g2 = take(spec.small_channels);
  const Tensor<T> g3 = take(spec.large_channels);
  const Tensor<T> g4 = take(spec.pool_proj);
  if (first != upstream.dim(0)) throw DimensionError("inception backward: upstream channel count mismatch");

  Tensor<T> dx({cache.input_channels, length});
  dx += detail::conv_relu_backward(cache.b1, g1, grads, idx.b1);
  dx += detail::conv_relu_backward(cache.b2_reduce, detail::conv_relu_backward(cache.b2, g2, grads, idx.b2), grads,
                                   idx.b2_reduce);
  dx += detail::conv_relu_backward(cache.b3_reduce, detail::conv_relu_backward(cache.b3, g3, grads, idx.b3), grads,
                                   idx.b3_reduce);
  dx += pool1d_backward(cache.pool, detail::conv_relu_backward(cache.b4, g4, grads, idx.b4));
  return dx;
}

/// Forward pass for one 7 x W window. Dropout draws from `rng` when training.
template <class T>
Tensor<T> forward_example(const ModelSpec& spec, const ModelParams<T>& params, const detail::ParamIndex& idx,
                          const Tensor<T>& window, bool training, Rng& rng, ExampleCache<T>* cache) {
  if (window.rank() != 2 || window.dim(0) != spec.in_channels || window.dim(1) != spec.window) {
    throw MismatchError("window " + to_string(window.shape()) + " does not match model input [" +
                        std::to_string(spec.in_channels) + "x" + std::to_string(spec.window) + "]");
  }
  Tensor<T> x = window;
  if (spec.stem) {
    if (cache) cache->stem.emplace();
    x = detail::conv_relu(x, params, *idx.stem, cache ? &*cache->stem : nullptr);
  }
  if (cache) {
    cache->stages.resize(spec.stages.size());
    cache->downsample.resize(spec.stages.size());
    cache->hidden.resize(spec.fc_hidden.size());
  }
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    x = inception_forward(params, idx.stages[s], x, cache ? &cache->stages[s] : nullptr);
    auto [pooled, pc] = pool1d(x, spec.pool_kernel, spec.pool_stride, Padding::valid);
    if (cache) cache->downsample[s] = std::move(pc);
    x = std::move(pooled);
  }
  if (cache) cache->feature_shape = x.shape();
  Tensor<T> h = x.reshaped({x.size()});
  for (std::size_t j = 0; j < spec.fc_hidden.size(); ++j) {
    auto [pre, dc] = dense_forward(h, params[idx.fc[j].w], params[idx.fc[j].b]);
    auto [dropped, mask] = dropout(relu(pre), spec.dropout, rng, training);
    if (cache) cache->hidden[j] = HiddenCache<T>{std::move(dc), std::move(pre), std::move(mask)};
    h = std::move(dropped);
  }
  auto [logits, oc] = dense_forward(h, params[idx.out.w], params[idx.out.b]);
  if (cache) cache->out = std::move(oc);
  check_finite(logits, "logits");
  return logits;
}

// Backpropagates one example, accumulating into `grads`.
template <class T>
void backward_example(const ModelSpec& spec, const detail::ParamIndex& idx, const ExampleCache<T>& cache,
                      const Tensor<T>& logit_grad, ModelParams<T>& grads) {
  auto og = dense_backward(cache.out.input, *cache.out.weights, logit_grad);
  grads[idx.out.w] += og.weights;
  grads[idx.out.b] += og.bias;
  Tensor<T> g = std::move(og.input);
  for (std::size_t j = spec.fc_hidden.size(); j-- > 0;) {
    const auto& hc = cache.hidden[j];
    g = relu_backward(hc.pre_activation, dropout_backward(hc.dropout, g));
    auto dg = dense_backward(hc.dense.input, *hc.dense.weights, g);
    grads[idx.fc[j].w] += dg.weights;
    grads[idx.fc[j].b] += dg.bias;
    g = std::move(dg.input);
  }
  g = g.reshaped(cache.feature_shape);
  for (std::size_t s = spec.stages.size(); s-- > 0;) {
    g = pool1d_backward(cache.downsample[s], g);
    g = inception_backward(spec.stages[s], cache.stages[s], g, grads, idx.stages[s]);
  }
  if (spec.stem) detail::conv_relu_backward(*cache.stem, g, grads, *idx.stem);
}

// Per-example dropout stream for example `i` of a batch keyed by `noise_seed`.
inline Rng example_rng(std::uint64_t noise_seed, std::size_t i) { return Rng(noise_seed, i); }

/// Batch forward over a B x 7 x W tensor. Logits are B x classes; softmax is
/// applied downstream. Caches are kept only when `keep_caches` is set.
template <class T>
ForwardResult<T> model_forward(const ModelSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch,
                               bool training, std::uint64_t noise_seed, bool keep_caches = true,
                               std::size_t threads = 1) {
  if (batch.rank() != 3 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.window) {
    throw MismatchError("batch " + to_string(batch.shape()) + " does not match model input [Bx" +
                        std::to_string(spec.in_channels) + "x" + std::to_string(spec.window) + "]");
  }
  const detail::ParamIndex idx(spec);
  const std::size_t n = batch.dim(0);
  ForwardResult<T> result{Tensor<T>({n, spec.classes}), {}, &params};
  if (keep_caches) result.caches.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto row = batch.row(i);
    Tensor<T> window({spec.in_channels, spec.window}, std::vector<T>(row.begin(), row.end()));
    Rng rng = example_rng(noise_seed, i);
    const Tensor<T> logits =
        forward_example(spec, params, idx, window, training, rng, keep_caches ? &result.caches[i] : nullptr);
    std::copy(logits.data().begin(), logits.data().end(), result.logits.row(i).begin());
  });
  return result;
}

// Gradients are summed over this many contiguous example shards, then over
// shards in order, regardless of the thread count.
inline constexpr std::size_t kGradientShards = 8;

/// Parameter gradients for a batch given dLoss/dlogits (B x classes).
template <class T>
ModelParams<T> model_backward(const ModelSpec& spec, const ModelParams<T>& params, const ForwardResult<T>& forward,
                              const Tensor<T>& logit_grads, std::size_t threads = 1) {
  if (forward.params != &params) throw DimensionError("model_backward: caches come from a different parameter set");
  const std::size_t n = forward.caches.size();
  if (n == 0 || forward.logits.shape() != logit_grads.shape() || logit_grads.dim(0) != n) {
    throw DimensionError("model_backward: logit gradient shape does not match forward caches");
  }
  const detail::ParamIndex idx(spec);
  const std::size_t shards = std::min(kGradientShards, n);
  std::vector<ModelParams<T>> partial(shards, params.zeros_like());
  parallel_for(shards, threads, [&](std::size_t s) {
    const std::size_t begin = s * n / shards, end = (s + 1) * n / shards;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = logit_grads.row(i);
      const Tensor<T> g({spec.classes}, std::vector<T>(row.begin(), row.end()));
      backward_example(spec, idx, forward.caches[i], g, partial[s]);
    }
  });
  for (std::size_t s = 1; s < shards; ++s) partial[0] += partial[s];
  return std::move(partial[0]);
}

// Stacks the windows of examples[order[0]], examples[order[1]], ... into B x C x W.
template <class T, class Examples>
Tensor<T> stack_windows(const Examples& examples, std::span<const std::size_t> order) {
  if (order.empty()) throw DimensionError("stack_windows: empty batch");
  const auto& first = examples[order[0]].window;
  const std::size_t c = first.dim(0), w = first.dim(1);
  Tensor<T> batch({order.size(), c, w});
  for (std::size_t b = 0; b < order.size(); ++b) {
    const auto& win = examples[order[b]].window;
    if (win.shape() != first.shape()) throw DimensionError("stack_windows: mixed window shapes");
    std::copy(win.data().begin(), win.data().end(), batch.row(b).begin());
  }
  return batch;
}

}  // namespace faciesnet
