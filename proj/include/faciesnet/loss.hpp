#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/tensor.hpp"

namespace faciesnet {

template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> logit_grads;  // B x F
};

/// Mean weighted cross-entropy of softmax(logits) against 1-based labels.
///
/// loss = (1/B) sum_b -w[y_b] log softmax(z_b)[y_b]
/// dloss/dz_b = w[y_b] (softmax(z_b) - onehot(y_b)) / B
///
/// An empty `class_weights` means all weights are 1.
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                            std::span<const double> class_weights = {}) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects B x F logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw DimensionError("cross_entropy: class weight count differs from class count");
  }
  LossResult<T> result{0.0, Tensor<T>(logits.shape())};
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 1 || static_cast<std::size_t>(label) > classes) {
      throw ConfigError("cross_entropy: label " + std::to_string(label) + " outside 1.." + std::to_string(classes));
    }
    const auto y = static_cast<std::size_t>(label - 1);
    const auto z = logits.row(b);
    double peak = z[0];
    for (auto v : z) {
      if (!std::isfinite(v)) throw NumericError("cross_entropy: non-finite logit");
      peak = std::max<double>(peak, v);
    }
    double sum = 0.0;
    for (auto v : z) sum += std::exp(static_cast<double>(v) - peak);
    const double log_sum = std::log(sum);
    const double w = class_weights.empty() ? 1.0 : class_weights[y];
    result.loss += w * (log_sum - (static_cast<double>(z[y]) - peak)) * inv_batch;
    auto g = result.logit_grads.row(b);
    for (std::size_t f = 0; f < classes; ++f) {
      const double p = std::exp(static_cast<double>(z[f]) - peak) / sum;
      g[f] = static_cast<T>(w * (p - (f == y ? 1.0 : 0.0)) * inv_batch);
    }
  }
  return result;
}

}  // namespace faciesnet
