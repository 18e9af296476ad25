#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/loss.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/random.hpp"

namespace faciesnet {

using GradientFn = std::function<ModelParams<double>(const ModelSpec&, const ModelParams<double>&,
                                                     const Tensor<double>& batch, std::span<const int> labels,
                                                     std::uint64_t noise_seed)>;

// Training-mode loss; dropout masks are fixed by `noise_seed`.
inline double batch_loss(const ModelSpec& spec, const ModelParams<double>& params, const Tensor<double>& batch,
                         std::span<const int> labels, std::uint64_t noise_seed) {
  const auto fwd = model_forward(spec, params, batch, true, noise_seed, false);
  return cross_entropy(fwd.logits, labels).loss;
}

inline ModelParams<double> analytic_gradients(const ModelSpec& spec, const ModelParams<double>& params,
                                              const Tensor<double>& batch, std::span<const int> labels,
                                              std::uint64_t noise_seed) {
  const auto fwd = model_forward(spec, params, batch, true, noise_seed, true);
  const auto loss = cross_entropy(fwd.logits, labels);
  return model_backward(spec, params, fwd, loss.logit_grads);
}

// Relative error with the denominator floored so that gradients that are
// zero on both sides (dead ReLU paths) compare as equal.
inline constexpr double kGradientFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradientFloor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Central differences (L(p+h) - L(p-h)) / 2h for every scalar parameter,
/// compared against `gradient`.
inline GradCheckResult finite_diff_check(const ModelSpec& spec, ModelParams<double> params,
                                         const Tensor<double>& batch, std::span<const int> labels, double h,
                                         std::uint64_t noise_seed = 0,
                                         const GradientFn& gradient = analytic_gradients) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("finite difference step must be > 0");
  const ModelParams<double> analytic = gradient(spec, params, batch, labels, noise_seed);
  params.check_against(spec);
  analytic.check_against(spec);
  GradCheckResult result;
  result.worst_param = params.names.empty() ? std::string{} : params.names.front();
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = batch_loss(spec, params, batch, labels, noise_seed);
      data[i] = saved - h;
      const double down = batch_loss(spec, params, batch, labels, noise_seed);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (err > result.max_relative_error || (t == 0 && i == 0)) {
        result.max_relative_error = err;
        result.worst_param = params.names[t];
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

struct GradCheckProblem {
  ModelParams<double> params;
  Tensor<double> batch;
  std::vector<int> labels;
  std::uint64_t noise_seed = 0;
};

// He-initialized params, small random biases, N(0,1) inputs and uniform random labels.
inline GradCheckProblem make_gradcheck_problem(const ModelSpec& spec, std::uint64_t seed, std::size_t batch = 2) {
  GradCheckProblem p;
  p.params = init_params<double>(spec, seed);
  Rng rng(seed, 7);
  // nonzero biases so bias gradients and ReLU boundaries are exercised
  for (std::size_t i = 0; i < p.params.size(); ++i) {
    if (p.params[i].rank() == 1) {
      for (auto& v : p.params[i].data()) v = 0.1 * rng.normal();
    }
  }
  p.batch = Tensor<double>({batch, spec.in_channels, spec.window});
  for (auto& v : p.batch.data()) v = rng.normal();
  for (std::size_t b = 0; b < batch; ++b) p.labels.push_back(static_cast<int>(rng.below(spec.classes)) + 1);
  p.noise_seed = seed + 1;
  return p;
}

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace faciesnet
