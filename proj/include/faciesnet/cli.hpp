#pragma once

// Command-line front end: train, predict, evaluate, gradcheck, synth.
//
// Exit codes: 0 success, 1 check failure, 2 config error, 3 data/model
// mismatch, 4 missing labels.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "faciesnet/checkpoint.hpp"
#include "faciesnet/config.hpp"
#include "faciesnet/errors.hpp"
#include "faciesnet/evaluation.hpp"
#include "faciesnet/gradcheck.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/synthgen.hpp"
#include "faciesnet/training.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kMismatch = 3,
  kMissingLabels = 4,
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingLabelsError*>(&e)) return kMissingLabels;
  if (dynamic_cast<const MismatchError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kMismatch;
  }
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const ParseError*>(&e)) {
    return kConfigError;
  }
  return kCheckFailed;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArtifacts {
  std::filesystem::path checkpoint, report_csv, report_json, standardizer;
};

inline void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " path does not exist: " + path);
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

/// Trains on every non-blind well, holding out `validation_wells` (default:
/// the last non-blind well in file order) for model selection.
inline TrainArtifacts cmd_train(const RunConfig& config, const std::string& data_path, std::ostream& out,
                                std::ostream* log = nullptr) {
  require_input(data_path, "data");
  const auto wells = parse_csv(data_path, CsvOptions{config.allow_missing_pe});
  const auto blind_split = split_by_well(wells, config.blind_wells);

  TrainConfig tc = config.train;
  tc.impute_missing_pe = config.allow_missing_pe;
  if (tc.validation_wells.empty() && blind_split.train.size() > 1) {
    tc.validation_wells = {blind_split.train.back().name};
  }
  const auto val_split = split_by_well(blind_split.train, tc.validation_wells);

  out << "resolved config: " << config_to_json(tc).dump() << '\n';
  out << "seed: " << tc.seed << '\n';
  out << "training wells: " << val_split.train.size() << ", validation wells: " << val_split.held_out.size()
      << ", blind wells: " << blind_split.held_out.size() << '\n';

  const auto result = train<float>(tc, config.model_spec(), val_split.train, val_split.held_out, log);

  const auto dir = prepare_out_dir(config.out_dir);
  TrainArtifacts a{dir / "model.fnet", dir / "train_report.csv", dir / "train_report.json", dir / "standardizer.txt"};
  save_checkpoint(a.checkpoint.string(), result.spec, result.params, result.standardizer, tc.seed,
                  facies_counts(blind_split.train));
  {
    std::ofstream f(a.report_csv);
    if (!f) throw IoError("cannot write " + a.report_csv.string());
    write_report_csv(f, result.report);
  }
  {
    std::ofstream f(a.report_json);
    if (!f) throw IoError("cannot write " + a.report_json.string());
    f << report_summary_json(result.report, tc).dump(2) << '\n';
  }
  save_standardizer(a.standardizer.string(), result.standardizer);
  out << "best epoch " << result.report.best_epoch << " of " << result.report.epochs.size();
  if (!std::isnan(result.report.best_val_macro_f1)) {
    out << ", validation macro-F1 " << result.report.best_val_macro_f1;
  }
  out << "\nwrote " << a.checkpoint.string() << '\n';
  return a;
}

inline std::vector<DepthPrediction> predict_wells(const Checkpoint& ck, const std::vector<Well>& wells,
                                                  const RunConfig& config) {
  PredictOptions opts;
  opts.impute_missing_pe = config.allow_missing_pe;
  opts.threads = config.train.threads;
  std::vector<DepthPrediction> all;
  for (const auto& w : wells) {
    auto p = predict_with_confidence(ck.spec, ck.params, w, ck.standardizer, opts);
    all.insert(all.end(), p.begin(), p.end());
  }
  return all;
}

inline std::filesystem::path cmd_predict(const RunConfig& config, const std::string& model_path,
                                         const std::string& data_path, std::ostream& out) {
  require_input(model_path, "model");
  require_input(data_path, "data");
  const auto ck = load_checkpoint(model_path);
  const auto wells = parse_csv(data_path, CsvOptions{config.allow_missing_pe});
  const auto predictions = predict_wells(ck, wells, config);
  const auto path = prepare_out_dir(config.out_dir) / "predictions.csv";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  write_predictions_csv(f, predictions);
  out << "wrote " << predictions.size() << " predictions to " << path.string() << '\n';
  return path;
}

inline EvalReport cmd_evaluate(const RunConfig& config, const std::string& model_path, const std::string& data_path,
                               std::ostream& out) {
  require_input(model_path, "model");
  require_input(data_path, "data");
  const FaciesTable table =
      config.adjacency_path.empty() ? FaciesTable{} : FaciesTable::load_adjacency(config.adjacency_path);
  const auto ck = load_checkpoint(model_path);
  auto wells = parse_csv(data_path, CsvOptions{config.allow_missing_pe});
  if (!config.blind_wells.empty()) wells = split_by_well(wells, config.blind_wells).held_out;
  for (const auto& w : wells) {
    if (!w.labeled()) throw MissingLabelsError("evaluation data has no Facies column (well " + w.name + ")");
  }
  const auto predictions = predict_wells(ck, wells, config);
  std::vector<int> truth, predicted;
  for (const auto& p : predictions) {
    truth.push_back(p.true_facies);
    predicted.push_back(p.facies);
  }
  EvalReport report = evaluate(truth, predicted, table);
  report.train_counts = ck.train_counts;
  export_plot_data(report, predictions, prepare_out_dir(config.out_dir));
  out << std::setprecision(4) << "samples " << report.confusion.total() << "\nmacro-F1 " << report.metrics.macro_f1
      << "\nweighted-F1 " << report.metrics.weighted_f1 << "\naccuracy " << report.metrics.accuracy
      << "\nadjacent accuracy " << report.adjacent_accuracy << '\n';
  return report;
}

struct GradCheckOutcome {
  bool passed = true;
  double worst_error = 0.0;
  std::string worst_param;
  std::uint64_t worst_seed = 0;
};

/// Finite-difference check of the 64-bit model over seeds [0, seeds).
/// `fault` names a parameter whose analytic gradient is deliberately
/// perturbed (used to prove the check can fail).
inline GradCheckOutcome cmd_gradcheck(const ModelSpec& spec, std::size_t seeds, std::ostream& out,
                                      const std::string& fault = {}) {
  GradientFn gradient = analytic_gradients;
  if (!fault.empty()) {
    gradient = [fault](const ModelSpec& s, const ModelParams<double>& p, const Tensor<double>& b,
                       std::span<const int> l, std::uint64_t n) {
      auto g = analytic_gradients(s, p, b, l, n);
      auto& t = g.at(fault);
      for (std::size_t i = 0; i < t.size(); i += 2) t[i] = t[i] * 1.5 + 1e-3;
      return g;
    };
  }
  GradCheckOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto problem = make_gradcheck_problem(spec, seed);
    const auto r = finite_diff_check(spec, problem.params, problem.batch, problem.labels, kGradCheckStep,
                                     problem.noise_seed, gradient);
    out << "seed " << seed << ": max relative error " << std::scientific << std::setprecision(3)
        << r.max_relative_error << " (" << r.worst_param << "[" << r.worst_index << "], " << r.checked
        << " parameters)" << std::defaultfloat << '\n';
    if (seed == 0 || r.max_relative_error > outcome.worst_error) {
      outcome.worst_error = r.max_relative_error;
      outcome.worst_param = r.worst_param;
      outcome.worst_seed = seed;
    }
  }
  outcome.passed = outcome.worst_error < kGradCheckTolerance;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << (outcome.passed ? "PASS" : "FAIL") << ": worst relative error " << std::scientific << outcome.worst_error
      << std::defaultfloat << " at " << outcome.worst_param << " (seed " << outcome.worst_seed << "), tolerance "
      << kGradCheckTolerance << ", " << std::fixed << std::setprecision(2) << secs << " s" << std::defaultfloat
      << '\n';
  return outcome;
}

inline std::vector<Well> cmd_synth(const RunConfig& config, const std::string& path, std::ostream& out) {
  if (path.empty()) throw ConfigError("synth needs --out <file.csv>");
  const auto wells = generate_wells(config.synth, config.synth_wells, config.synth_prefix);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) prepare_out_dir(parent.string());
  write_csv(path, wells);
  out << "wrote " << wells.size() << " wells x " << config.synth.n_samples << " samples to " << path << '\n';
  return wells;
}

// ---------------------------------------------------------------------------
// Argument handling

// Tiny-model defaults for gradcheck, still overridable by [model] keys.
inline RunConfig gradcheck_defaults() {
  RunConfig c;
  const ModelSpec tiny = ModelSpec::tiny();
  c.train.window = tiny.window;
  c.train.dropout = tiny.dropout;
  c.stem_kernel = tiny.stem->kernel;
  c.stem_channels = tiny.stem->channels;
  c.stages = tiny.stages.size();
  c.inception = tiny.stages.front();
  c.fc_hidden = tiny.fc_hidden;
  return c;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"1D inception ConvNet for facies classification from well logs", "faciesnet"};
  app.require_subcommand(1);

  struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> blind_wells;
    std::optional<std::string> adjacency;
    bool allow_missing_pe = false;
    std::optional<std::size_t> threads;
    std::vector<std::string> sets;
    std::string data, model;
    bool verbose = false;
  } opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key = value config file with [sections]");
    sub->add_option("--seed", opt.seed, "random seed");
    sub->add_option("--out", opt.out, "output directory (synth: output CSV file)");
    sub->add_option("--blind-wells", opt.blind_wells, "comma-separated wells withheld from training");
    sub->add_option("--adjacency", opt.adjacency, "facies neighbour map file");
    sub->add_flag("--allow-missing-pe", opt.allow_missing_pe, "impute missing PE with the training mean");
    sub->add_option("--threads", opt.threads, "worker threads");
    sub->add_option("--set", opt.sets, "override a config key: section.key=value");
  };

  auto* train_cmd = app.add_subcommand("train", "train a model and write model.fnet plus reports");
  add_common(train_cmd);
  train_cmd->add_option("--data", opt.data, "labeled well-log CSV");
  train_cmd->add_flag("-v,--verbose", opt.verbose, "log every epoch");

  auto* predict_cmd = app.add_subcommand("predict", "per-depth facies and probabilities");
  add_common(predict_cmd);
  predict_cmd->add_option("--model", opt.model, "checkpoint (.fnet)");
  predict_cmd->add_option("--data", opt.data, "well-log CSV");

  auto* eval_cmd = app.add_subcommand("evaluate", "confusion matrix, F1 and adjacent accuracy");
  add_common(eval_cmd);
  eval_cmd->add_option("--model", opt.model, "checkpoint (.fnet)");
  eval_cmd->add_option("--data", opt.data, "labeled well-log CSV");

  std::size_t gc_seeds = 5;
  std::string fault;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check at 64-bit");
  add_common(grad_cmd);
  grad_cmd->add_option("--seeds", gc_seeds, "check seeds 0..N-1")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--inject-fault", fault, "corrupt the analytic gradient of this parameter")->group("");

  std::optional<std::size_t> synth_n, synth_wells;
  std::optional<double> synth_p, synth_sigma;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic labeled wells");
  add_common(synth_cmd);
  synth_cmd->add_option("--n", synth_n, "samples per well");
  synth_cmd->add_option("--p-stay", synth_p, "facies persistence probability");
  synth_cmd->add_option("--sigma", synth_sigma, "noise standard deviation");
  synth_cmd->add_option("--wells", synth_wells, "number of wells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  const bool is_grad = grad_cmd->parsed();
  RunConfig config = is_grad ? gradcheck_defaults() : RunConfig{};
  std::vector<std::string> problems;
  std::vector<ConfigEntry> entries;
  if (!opt.config_path.empty()) entries = read_config_file(opt.config_path, problems);
  const std::string cl = "command line";
  if (opt.seed) {
    entries.push_back({"train.seed", std::to_string(*opt.seed), cl});
    entries.push_back({"synth.seed", std::to_string(*opt.seed), cl});
  }
  if (opt.out) entries.push_back({"output.dir", *opt.out, cl});
  if (opt.blind_wells) entries.push_back({"data.blind_wells", *opt.blind_wells, cl});
  if (opt.adjacency) entries.push_back({"data.adjacency", *opt.adjacency, cl});
  if (opt.allow_missing_pe) entries.push_back({"data.allow_missing_pe", "true", cl});
  if (opt.threads) entries.push_back({"train.threads", std::to_string(*opt.threads), cl});
  if (synth_n) entries.push_back({"synth.n_samples", std::to_string(*synth_n), cl});
  if (synth_wells) entries.push_back({"synth.wells", std::to_string(*synth_wells), cl});
  if (synth_p) entries.push_back({"synth.p_stay", format_number(*synth_p), cl});
  if (synth_sigma) entries.push_back({"synth.sigma", format_number(*synth_sigma), cl});
  for (const auto& s : opt.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      problems.push_back("--set " + s + ": expected section.key=value");
      continue;
    }
    entries.push_back({detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), "--set"});
  }

  try {
    config.apply(entries, problems);
  } catch (const ConfigErrors& e) {
    err << "configuration errors:\n";
    for (const auto& p : e.problems()) err << "  " << p << '\n';
    return kConfigError;
  }

  try {
    if (train_cmd->parsed()) {
      cmd_train(config, opt.data, out, opt.verbose ? &out : nullptr);
    } else if (predict_cmd->parsed()) {
      cmd_predict(config, opt.model, opt.data, out);
    } else if (eval_cmd->parsed()) {
      cmd_evaluate(config, opt.model, opt.data, out);
    } else if (is_grad) {
      const auto outcome = cmd_gradcheck(config.model_spec(), gc_seeds, out, fault);
      if (!outcome.passed) {
        err << "gradient check failed at " << outcome.worst_param << '\n';
        return kCheckFailed;
      }
    } else if (synth_cmd->parsed()) {
      cmd_synth(config, opt.out.value_or(""), out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace faciesnet::cli
