#pragma once

// Classification metrics (confusion matrix, precision/recall/F1, adjacent
// facies accuracy), per-depth predictions with confidence, and plot-ready
// CSV/JSON export.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "faciesnet/errors.hpp"
#include "faciesnet/layers.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

/// Rows are true (geologist) facies, columns predicted (machine) facies.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumFacies>, kNumFacies> counts{};

  std::size_t& at(int truth, int predicted) { return counts.at(truth - 1).at(predicted - 1); }
  std::size_t at(int truth, int predicted) const { return counts.at(truth - 1).at(predicted - 1); }

  std::size_t row_total(int truth) const {
    std::size_t s = 0;
    for (auto v : counts.at(truth - 1)) s += v;
    return s;
  }
  std::size_t column_total(int predicted) const {
    std::size_t s = 0;
    for (const auto& row : counts) s += row.at(predicted - 1);
    return s;
  }
  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& row : counts) {
      for (auto v : row) s += v;
    }
    return s;
  }
  std::size_t diagonal() const {
    std::size_t s = 0;
    for (std::size_t f = 0; f < kNumFacies; ++f) s += counts[f][f];
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline void check_label(int label, const char* what) {
  if (label < 1 || label > static_cast<int>(kNumFacies)) {
    throw ConfigError(std::string(what) + " label " + std::to_string(label) + " outside 1..9");
  }
}

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check_label(truth[i], "true");
    check_label(predicted[i], "predicted");
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Set when the ratio was 0/0 and reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct Metrics {
  std::array<ClassMetrics, kNumFacies> per_class{};
  double macro_f1 = 0.0;     // unweighted mean over classes with support > 0
  double weighted_f1 = 0.0;  // support-weighted mean
  double accuracy = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline Metrics precision_recall_f1(const ConfusionMatrix& cm) {
  Metrics m;
  double macro_sum = 0.0, weighted_sum = 0.0;
  std::size_t present = 0, support_sum = 0;
  for (int f = 1; f <= static_cast<int>(kNumFacies); ++f) {
    auto& c = m.per_class[f - 1];
    const std::size_t tp = cm.at(f, f);
    const std::size_t predicted = cm.column_total(f);
    const std::size_t actual = cm.row_total(f);
    c.support = actual;
    if (predicted == 0) {
      c.precision_undefined = true;
    } else {
      c.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    }
    if (actual == 0) {
      c.recall_undefined = true;
    } else {
      c.recall = static_cast<double>(tp) / static_cast<double>(actual);
    }
    if (c.precision + c.recall == 0.0) {
      c.f1_undefined = true;
    } else {
      c.f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
    }
    if (actual > 0) {
      macro_sum += c.f1;
      weighted_sum += c.f1 * static_cast<double>(actual);
      ++present;
      support_sum += actual;
    }
  }
  m.macro_f1 = present ? macro_sum / static_cast<double>(present) : 0.0;
  m.weighted_f1 = support_sum ? weighted_sum / static_cast<double>(support_sum) : 0.0;
  const std::size_t total = cm.total();
  m.accuracy = total ? static_cast<double>(cm.diagonal()) / static_cast<double>(total) : 0.0;
  return m;
}

// Fraction of samples predicted exactly or as a neighbour of the true facies.
inline double adjacent_accuracy(std::span<const int> truth, std::span<const int> predicted,
                                const FaciesTable& table) {
  if (truth.size() != predicted.size()) throw DimensionError("adjacent_accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check_label(truth[i], "true");
    check_label(predicted[i], "predicted");
    if (truth[i] == predicted[i] || table.adjacent(truth[i], predicted[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct EvalReport {
  ConfusionMatrix confusion;
  Metrics metrics;
  double adjacent_accuracy = 0.0;
  FaciesCounts train_counts{};
  FaciesCounts eval_counts{};
};

inline EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted, const FaciesTable& table) {
  EvalReport r;
  r.confusion = confusion(truth, predicted);
  r.metrics = precision_recall_f1(r.confusion);
  r.adjacent_accuracy = adjacent_accuracy(truth, predicted, table);
  for (int t : truth) ++r.eval_counts[static_cast<std::size_t>(t - 1)];
  return r;
}

// ---------------------------------------------------------------------------
// Prediction

enum class ConfidenceBand { low, medium, high };

inline constexpr double kHighConfidence = 0.7;
inline constexpr double kLowConfidence = 0.5;

inline ConfidenceBand confidence_band(double p) {
  if (p >= kHighConfidence) return ConfidenceBand::high;
  if (p >= kLowConfidence) return ConfidenceBand::medium;
  return ConfidenceBand::low;
}

inline const char* to_string(ConfidenceBand b) {
  switch (b) {
    case ConfidenceBand::high: return "high";
    case ConfidenceBand::medium: return "medium";
    default: return "low";
  }
}

struct DepthPrediction {
  std::string well;
  double depth = 0.0;
  int facies = 0;      // predicted, 1..9
  int true_facies = 0; // 0 when the well is unlabeled
  std::array<double, kNumFacies> probabilities{};
  double confidence = 0.0;
  ConfidenceBand band = ConfidenceBand::low;
};

struct PredictOptions {
  bool impute_missing_pe = false;
  std::size_t batch_size = 256;
  std::size_t threads = 1;
};

/// Standardizes `well`, classifies a centred window around every depth
/// sample and reports the softmax distribution with its maximum as
/// confidence.
template <class T>
std::vector<DepthPrediction> predict_with_confidence(const ModelSpec& spec, const ModelParams<T>& params,
                                                     const Well& well, const Standardizer& standardizer,
                                                     const PredictOptions& options = {}) {
  if (spec.in_channels != kNumChannels) {
    throw MismatchError("model expects " + std::to_string(spec.in_channels) + " channels, standardizer has " +
                        std::to_string(kNumChannels));
  }
  std::vector<Well> prepared{well};
  if (options.impute_missing_pe) impute_missing_pe(standardizer, prepared);
  require_complete(prepared);
  prepared = apply_standardizer(standardizer, std::move(prepared));
  const auto windows = extract_all_windows<T>(prepared[0], spec.window);

  std::vector<DepthPrediction> out;
  out.reserve(windows.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t first = 0; first < windows.size(); first += bs) {
    const std::size_t count = std::min(bs, windows.size() - first);
    const auto batch = stack_windows<T>(windows, std::span<const std::size_t>(order).subspan(first, count));
    const auto fwd = model_forward(spec, params, batch, false, 0, false, options.threads);
    const Tensor<T> probs = softmax_rows(fwd.logits);
    for (std::size_t b = 0; b < count; ++b) {
      const auto& ex = windows[first + b];
      DepthPrediction p;
      p.well = well.name;
      p.depth = ex.depth;
      p.true_facies = ex.label;
      std::size_t best = 0;
      for (std::size_t f = 0; f < kNumFacies; ++f) {
        p.probabilities[f] = static_cast<double>(probs(b, f));
        if (p.probabilities[f] > p.probabilities[best]) best = f;
      }
      p.facies = static_cast<int>(best) + 1;
      p.confidence = p.probabilities[best];
      p.band = confidence_band(p.confidence);
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json per_class = json::array();
  for (int f = 1; f <= static_cast<int>(kNumFacies); ++f) {
    const auto& c = r.metrics.per_class[f - 1];
    per_class.push_back({{"facies", f},
                         {"code", std::string(FaciesTable::code(f))},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support},
                         {"precision_undefined", c.precision_undefined},
                         {"recall_undefined", c.recall_undefined},
                         {"f1_undefined", c.f1_undefined}});
  }
  json matrix = json::array();
  for (const auto& row : r.confusion.counts) matrix.push_back(row);
  return {{"samples", r.confusion.total()},
          {"accuracy", r.metrics.accuracy},
          {"adjacent_accuracy", r.adjacent_accuracy},
          {"macro_f1", r.metrics.macro_f1},
          {"weighted_f1", r.metrics.weighted_f1},
          {"per_class", per_class},
          {"confusion", matrix},
          {"train_counts", r.train_counts},
          {"eval_counts", r.eval_counts}};
}

inline void write_confusion_csv(std::ostream& out, const EvalReport& r) {
  out << "true\\predicted";
  for (const auto& f : kFacies) out << ',' << f.code;
  out << ",total,precision,recall,f1\n";
  for (int t = 1; t <= static_cast<int>(kNumFacies); ++t) {
    const auto& c = r.metrics.per_class[t - 1];
    out << FaciesTable::code(t);
    for (int p = 1; p <= static_cast<int>(kNumFacies); ++p) out << ',' << r.confusion.at(t, p);
    out << ',' << r.confusion.row_total(t) << ',' << format_number(c.precision) << ',' << format_number(c.recall)
        << ',' << format_number(c.f1) << '\n';
  }
}

struct ConfusionCsv {
  ConfusionMatrix confusion;
  std::array<double, kNumFacies> precision{}, recall{}, f1{};
};

inline ConfusionCsv read_confusion_csv(std::istream& in) {
  ConfusionCsv out;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("confusion.csv: empty");
  for (int t = 1; t <= static_cast<int>(kNumFacies); ++t) {
    if (!std::getline(in, line)) throw FormatError("confusion.csv: missing row " + std::to_string(t));
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != kNumFacies + 5 || fields[0] != FaciesTable::code(t)) {
      throw FormatError("confusion.csv: malformed row " + std::to_string(t));
    }
    for (int p = 1; p <= static_cast<int>(kNumFacies); ++p) {
      const auto v = parse_number(fields[p]);
      if (!v) throw FormatError("confusion.csv: bad count");
      out.confusion.at(t, p) = static_cast<std::size_t>(*v);
    }
    auto num = [&](std::size_t i) {
      const auto v = parse_number(fields[i]);
      if (!v) throw FormatError("confusion.csv: bad number '" + fields[i] + "'");
      return *v;
    };
    out.precision[t - 1] = num(kNumFacies + 2);
    out.recall[t - 1] = num(kNumFacies + 3);
    out.f1[t - 1] = num(kNumFacies + 4);
  }
  return out;
}

inline void write_facies_counts_csv(std::ostream& out, const FaciesCounts& train, const FaciesCounts& evaluated) {
  out << "facies,code,train,evaluated\n";
  for (int f = 1; f <= static_cast<int>(kNumFacies); ++f) {
    out << f << ',' << FaciesTable::code(f) << ',' << train[f - 1] << ',' << evaluated[f - 1] << '\n';
  }
}

inline std::pair<FaciesCounts, FaciesCounts> read_facies_counts_csv(std::istream& in) {
  std::pair<FaciesCounts, FaciesCounts> out{};
  std::string line;
  std::getline(in, line);
  for (std::size_t f = 0; f < kNumFacies; ++f) {
    if (!std::getline(in, line)) throw FormatError("facies_counts.csv: missing row");
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4) throw FormatError("facies_counts.csv: malformed row");
    out.first[f] = static_cast<std::size_t>(parse_number(fields[2]).value_or(0));
    out.second[f] = static_cast<std::size_t>(parse_number(fields[3]).value_or(0));
  }
  return out;
}

inline void write_facies_column_csv(std::ostream& out, const std::vector<DepthPrediction>& predictions) {
  out << "well,depth,predicted,true,confidence\n";
  for (const auto& p : predictions) {
    out << detail::csv_quote(p.well) << ',' << format_number(p.depth) << ',' << p.facies << ',';
    if (p.true_facies > 0) out << p.true_facies;
    out << ',' << format_number(p.confidence) << '\n';
  }
}

// Per-depth facies, the nine probabilities and the confidence band.
inline void write_predictions_csv(std::ostream& out, const std::vector<DepthPrediction>& predictions) {
  out << "Well Name,Depth,Facies";
  for (const auto& f : kFacies) out << ",P_" << f.code;
  out << ",Confidence,Band\n";
  for (const auto& p : predictions) {
    out << detail::csv_quote(p.well) << ',' << format_number(p.depth) << ',' << p.facies;
    for (double v : p.probabilities) out << ',' << format_number(v);
    out << ',' << format_number(p.confidence) << ',' << to_string(p.band) << '\n';
  }
}

struct PlotFiles {
  std::filesystem::path facies_column, confusion, facies_counts, metrics_json;
};

/// Writes facies_column.csv, confusion.csv, facies_counts.csv and
/// metrics.json into `dir`.
inline PlotFiles export_plot_data(const EvalReport& report, const std::vector<DepthPrediction>& predictions,
                                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  PlotFiles files{dir / "facies_column.csv", dir / "confusion.csv", dir / "facies_counts.csv", dir / "metrics.json"};
  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
  };
  {
    auto f = open(files.facies_column);
    write_facies_column_csv(f, predictions);
  }
  {
    auto f = open(files.confusion);
    write_confusion_csv(f, report);
  }
  {
    auto f = open(files.facies_counts);
    write_facies_counts_csv(f, report.train_counts, report.eval_counts);
  }
  {
    auto f = open(files.metrics_json);
    f << to_json(report).dump(2) << '\n';
  }
  return files;
}

}  // namespace faciesnet
