#pragma once

// Minibatch SGD with momentum on the weighted cross-entropy, with
// validation-well model selection and early stopping.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "faciesnet/checkpoint.hpp"
#include "faciesnet/errors.hpp"
#include "faciesnet/evaluation.hpp"
#include "faciesnet/loss.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/random.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

struct TrainConfig {
  std::size_t window = 31;
  std::size_t batch_size = 64;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 20;
  std::size_t epochs = 60;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  bool class_weighting = false;
  std::vector<std::string> validation_wells;
  std::size_t patience = 10;  // 0 disables early stopping
  bool impute_missing_pe = false;
  std::size_t threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (window < 1 || window % 2 == 0) throw ConfigError("window must be odd and >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }

  double learning_rate_at(std::size_t epoch) const {
    if (lr_decay_every == 0) return learning_rate;
    return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
  }
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_macro_f1 = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const EpochRow& a, const EpochRow& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.epoch == b.epoch && same(a.train_loss, b.train_loss) && same(a.train_accuracy, b.train_accuracy) &&
           same(a.val_loss, b.val_loss) && same(a.val_macro_f1, b.val_macro_f1);
  }
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  std::size_t best_epoch = 0;
  double best_val_macro_f1 = std::numeric_limits<double>::quiet_NaN();
  bool stopped_early = false;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainReport& a, const TrainReport& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.epochs == b.epochs && a.best_epoch == b.best_epoch && same(a.best_val_macro_f1, b.best_val_macro_f1) &&
           a.stopped_early == b.stopped_early && a.seed == b.seed;
  }
};

template <class T>
struct TrainResult {
  ModelSpec spec;
  ModelParams<T> params;  // best-validation epoch
  Standardizer standardizer;
  TrainReport report;
};

// ---------------------------------------------------------------------------

/// Inverse-frequency weights total / (K * count_k), rescaled so the weights
/// of observed classes average 1. Classes with no samples get weight 1, which
/// keeps the mean over all K classes at 1.
inline std::vector<double> compute_class_weights(std::span<const std::size_t> counts) {
  std::vector<double> w(counts.size(), 1.0);
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    w[k] = total / (static_cast<double>(counts.size()) * static_cast<double>(counts[k]));
    sum += w[k];
    ++present;
  }
  if (present == 0) return w;
  const double mean = sum / static_cast<double>(present);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] > 0) w[k] /= mean;
  }
  return w;
}

/// v <- momentum * v - lr * g;  p <- p + v.
template <class T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr, double momentum,
              ModelParams<T>& velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: parameter, gradient and velocity sets differ in size");
  }
  const T mu = static_cast<T>(momentum);
  const T eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].require_same_shape(grads[i], "sgd_step");
    params[i].require_same_shape(velocity[i], "sgd_step");
    auto p = params[i].data();
    auto g = grads[i].data();
    auto v = velocity[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mu * v[j] - eta * g[j];
      p[j] += v[j];
    }
  }
}

// Dropout noise key for one minibatch.
inline std::uint64_t step_noise_seed(std::uint64_t seed, std::size_t epoch, std::size_t step) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc909ULL;
  std::uint64_t a = splitmix64(s) ^ (static_cast<std::uint64_t>(epoch) << 32) ^ static_cast<std::uint64_t>(step);
  return splitmix64(a);
}

struct DatasetScore {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<int> predicted;
};

// Inference-mode loss / accuracy / macro-F1 over a window set.
template <class T>
DatasetScore score_windows(const ModelSpec& spec, const ModelParams<T>& params, const WindowSet<T>& windows,
                           std::size_t threads = 1, std::size_t batch_size = 256) {
  DatasetScore score;
  if (windows.empty()) return score;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> truth;
  truth.reserve(windows.size());
  double loss_sum = 0.0;
  for (std::size_t first = 0; first < windows.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - first);
    const auto idx = std::span<const std::size_t>(order).subspan(first, count);
    const auto batch = stack_windows<T>(windows, idx);
    const auto fwd = model_forward(spec, params, batch, false, 0, false, threads);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(windows[i].label);
    loss_sum += cross_entropy(fwd.logits, labels).loss * static_cast<double>(count);
    for (std::size_t b = 0; b < count; ++b) {
      const auto row = fwd.logits.row(b);
      score.predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) + 1);
      truth.push_back(labels[b]);
    }
  }
  const auto m = precision_recall_f1(confusion(truth, score.predicted));
  score.loss = loss_sum / static_cast<double>(windows.size());
  score.accuracy = m.accuracy;
  score.macro_f1 = m.macro_f1;
  return score;
}

/// Trains a model on `train_wells`, selecting the epoch with the best
/// macro-F1 on `validation_wells`. Without validation wells the last epoch is
/// kept. Fully determined by `config.seed` (and independent of
/// `config.threads`).
template <class T = float>
TrainResult<T> train(const TrainConfig& config, ModelSpec spec, const std::vector<Well>& train_wells,
                     const std::vector<Well>& validation_wells, std::ostream* log = nullptr) {
  config.validate();
  if (train_wells.empty()) throw ConfigError("no training wells");
  std::set<std::string> train_names;
  for (const auto& w : train_wells) train_names.insert(w.name);
  for (const auto& w : validation_wells) {
    if (train_names.count(w.name)) throw ConfigError("validation well '" + w.name + "' is also a training well");
  }
  spec.window = config.window;
  spec.dropout = config.dropout;
  spec.validate();

  TrainResult<T> result;
  result.spec = spec;
  result.report.seed = config.seed;

  std::vector<Well> train_set = train_wells, val_set = validation_wells;
  result.standardizer = fit_standardizer(train_set);
  if (config.impute_missing_pe) {
    impute_missing_pe(result.standardizer, train_set);
    impute_missing_pe(result.standardizer, val_set);
  }
  require_complete(train_set);
  require_complete(val_set);
  train_set = apply_standardizer(result.standardizer, std::move(train_set));
  val_set = apply_standardizer(result.standardizer, std::move(val_set));
  const WindowSet<T> train_windows = extract_windows<T>(train_set, spec.window);
  const WindowSet<T> val_windows = extract_windows<T>(val_set, spec.window);
  if (train_windows.empty()) throw ConfigError("training wells contain no samples");

  std::vector<double> weights;
  if (config.class_weighting) {
    const auto counts = facies_counts(train_set);
    weights = compute_class_weights(counts);
  }

  ModelParams<T> params = init_params<T>(spec, config.seed);
  ModelParams<T> velocity = params.zeros_like();
  result.params = params;

  Rng shuffle_rng(config.seed, 1);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    const double lr = config.learning_rate_at(epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t step = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++step) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const auto idx = std::span<const std::size_t>(order).subspan(first, count);
      const auto batch = stack_windows<T>(train_windows, idx);
      std::vector<int> labels;
      labels.reserve(count);
      for (auto i : idx) labels.push_back(train_windows[i].label);
      const auto fwd = model_forward(spec, params, batch, true, step_noise_seed(config.seed, epoch, step), true,
                                     config.threads);
      const auto loss = cross_entropy(fwd.logits, labels, weights);
      const auto grads = model_backward(spec, params, fwd, loss.logit_grads, config.threads);
      sgd_step(params, grads, lr, config.momentum, velocity);
      loss_sum += loss.loss * static_cast<double>(count);
      for (std::size_t b = 0; b < count; ++b) {
        const auto row = fwd.logits.row(b);
        const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) + 1;
        if (pred == labels[b]) ++correct;
      }
    }
    if (!params.all_finite()) throw NumericError("training diverged (non-finite parameters); lower learning_rate");

    EpochRow row;
    row.epoch = epoch + 1;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    bool improved = false;
    if (!val_windows.empty()) {
      const auto val = score_windows(spec, params, val_windows, config.threads);
      row.val_loss = val.loss;
      row.val_macro_f1 = val.macro_f1;
      improved = val.macro_f1 > best;
      if (improved) best = val.macro_f1;
    } else {
      improved = true;
    }
    result.report.epochs.push_back(row);
    if (log) {
      *log << "epoch " << row.epoch << " lr " << lr << " loss " << row.train_loss << " acc " << row.train_accuracy;
      if (!val_windows.empty()) *log << " val_loss " << row.val_loss << " val_macro_f1 " << row.val_macro_f1;
      *log << '\n';
    }
    if (improved) {
      result.params = params;
      result.report.best_epoch = row.epoch;
      result.report.best_val_macro_f1 = row.val_macro_f1;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report serialization

inline void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,train_loss,train_acc,val_loss,val_macro_f1\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.train_accuracy) << ','
        << format_number(r.val_loss) << ',' << format_number(r.val_macro_f1) << '\n';
  }
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"window", c.window},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"lr_decay", c.lr_decay},
          {"lr_decay_every", c.lr_decay_every},
          {"epochs", c.epochs},
          {"dropout", c.dropout},
          {"seed", c.seed},
          {"class_weighting", c.class_weighting},
          {"validation_wells", c.validation_wells},
          {"patience", c.patience},
          {"impute_missing_pe", c.impute_missing_pe}};
}

inline nlohmann::json report_summary_json(const TrainReport& report, const TrainConfig& config) {
  nlohmann::json j{{"best_epoch", report.best_epoch},
                   {"epochs_run", report.epochs.size()},
                   {"stopped_early", report.stopped_early},
                   {"seed", report.seed},
                   {"config", config_to_json(config)}};
  j["best_val_macro_f1"] = std::isnan(report.best_val_macro_f1) ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(report.best_val_macro_f1);
  return j;
}

}  // namespace faciesnet
