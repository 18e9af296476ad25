#pragma once

// Run configuration: a flat `key = value` file with `[section]` headers,
// overridable from the command line. Every key is validated; unknown keys
// are errors. All problems are collected and reported together.
//
//   [data]   blind_wells, allow_missing_pe, adjacency
//   [train]  window, batch_size, learning_rate, momentum, lr_decay,
//            lr_decay_every, epochs, seed, class_weighting,
//            validation_wells, patience, threads
//   [model]  stem_kernel, stem_channels (0 = no stem), stages, branch_1x1,
//            reduce_small, small_kernel, small_channels, reduce_large,
//            large_kernel, large_channels, pool_proj, fc_hidden, dropout
//   [synth]  n_samples, p_stay, sigma, seed, wells, prefix
//   [output] dir

#include <cstddef>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/synthgen.hpp"
#include "faciesnet/training.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

struct ConfigEntry {
  std::string key;  // "section.name"
  std::string value;
  std::string origin;  // "file:line" or "command line"
};

/// Multiple problems found while reading a configuration.
class ConfigErrors : public ConfigError {
 public:
  explicit ConfigErrors(std::vector<std::string> problems)
      : ConfigError(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s;
    for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "\n" : "") + p[i];
    return s;
  }
  std::vector<std::string> problems_;
};

inline std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& name,
                                             std::vector<std::string>& problems) {
  std::vector<ConfigEntry> entries;
  std::string section, line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string origin = name + ":" + std::to_string(line_no);
    if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = detail::trim(line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(origin + ": malformed section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(origin + ": expected 'key = value'");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (section.empty()) {
      problems.push_back(origin + ": key '" + key + "' outside any [section]");
      continue;
    }
    entries.push_back({section + "." + key, detail::trim(line.substr(eq + 1)), origin});
  }
  return entries;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (auto t = detail::trim(cur); !t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (auto t = detail::trim(cur); !t.empty()) out.push_back(t);
  return out;
}

struct RunConfig {
  TrainConfig train;
  // model topology; every stage shares `inception`
  std::size_t stem_kernel = 5;
  std::size_t stem_channels = 16;
  std::size_t stages = 2;
  InceptionSpec inception;
  std::vector<std::size_t> fc_hidden = {64};

  std::vector<std::string> blind_wells;
  bool allow_missing_pe = false;
  std::string adjacency_path;
  std::string out_dir = "out";

  SynthConfig synth;
  std::size_t synth_wells = 1;
  std::string synth_prefix = "SYN";

  ModelSpec model_spec() const {
    ModelSpec s;
    s.window = train.window;
    s.dropout = train.dropout;
    if (stem_channels > 0) {
      s.stem = StemSpec{stem_kernel, stem_channels};
    } else {
      s.stem.reset();
    }
    s.stages.assign(stages, inception);
    s.fc_hidden = fc_hidden;
    return s;
  }

  /// Applies entries in order (later wins). Throws ConfigErrors listing every
  /// unknown key, bad value and failed invariant.
  void apply(const std::vector<ConfigEntry>& entries, std::vector<std::string> problems = {}) {
    const auto setters = this->setters();
    for (const auto& e : entries) {
      auto it = setters.find(e.key);
      if (it == setters.end()) {
        problems.push_back(e.origin + ": unknown key '" + e.key + "'");
        continue;
      }
      try {
        it->second(e.value);
      } catch (const Error& ex) {
        problems.push_back(e.origin + ": " + e.key + ": " + ex.what());
      }
    }
    auto check = [&](auto&& fn) {
      try {
        fn();
      } catch (const Error& ex) {
        problems.push_back(ex.what());
      }
    };
    check([&] { train.validate(); });
    check([&] { model_spec().validate(); });
    check([&] { synth.validate(); });
    if (!problems.empty()) throw ConfigErrors(std::move(problems));
  }

  static std::vector<std::string> keys() {
    RunConfig scratch;
    std::vector<std::string> k;
    for (const auto& [key, fn] : scratch.setters()) k.push_back(key);
    return k;
  }

 private:
  using Setter = std::function<void(const std::string&)>;

  static double to_double(const std::string& v) {
    const auto d = parse_number(v);
    if (!d) throw ConfigError("expected a number, got '" + v + "'");
    return *d;
  }
  static std::size_t to_size(const std::string& v) {
    const auto d = parse_number(v);
    if (!d || *d < 0 || *d != std::floor(*d)) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(*d);
  }
  static std::uint64_t to_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto t = detail::trim(v);
    auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
      throw ConfigError("expected an unsigned integer, got '" + v + "'");
    }
    return out;
  }
  static bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("expected true/false, got '" + v + "'");
  }
  static std::vector<std::size_t> to_sizes(const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_size(item));
    return out;
  }

  // Setters capture `this`; the map must not outlive the call that built it.
  std::map<std::string, Setter> setters() {
    RunConfig* self = this;
    std::map<std::string, Setter> s;
    s["data.blind_wells"] = [self](const std::string& v) { self->blind_wells = split_list(v); };
    s["data.allow_missing_pe"] = [self](const std::string& v) { self->allow_missing_pe = to_bool(v); };
    s["data.adjacency"] = [self](const std::string& v) { self->adjacency_path = v; };

    auto& t = self->train;
    s["train.window"] = [&t](const std::string& v) { t.window = to_size(v); };
    s["train.batch_size"] = [&t](const std::string& v) { t.batch_size = to_size(v); };
    s["train.learning_rate"] = [&t](const std::string& v) { t.learning_rate = to_double(v); };
    s["train.momentum"] = [&t](const std::string& v) { t.momentum = to_double(v); };
    s["train.lr_decay"] = [&t](const std::string& v) { t.lr_decay = to_double(v); };
    s["train.lr_decay_every"] = [&t](const std::string& v) { t.lr_decay_every = to_size(v); };
    s["train.epochs"] = [&t](const std::string& v) { t.epochs = to_size(v); };
    s["train.seed"] = [&t](const std::string& v) { t.seed = to_u64(v); };
    s["train.class_weighting"] = [&t](const std::string& v) { t.class_weighting = to_bool(v); };
    s["train.validation_wells"] = [&t](const std::string& v) { t.validation_wells = split_list(v); };
    s["train.patience"] = [&t](const std::string& v) { t.patience = to_size(v); };
    s["train.threads"] = [&t](const std::string& v) { t.threads = std::max<std::size_t>(1, to_size(v)); };

    s["model.stem_kernel"] = [self](const std::string& v) { self->stem_kernel = to_size(v); };
    s["model.stem_channels"] = [self](const std::string& v) { self->stem_channels = to_size(v); };
    s["model.stages"] = [self](const std::string& v) { self->stages = to_size(v); };
    auto& inc = self->inception;
    s["model.branch_1x1"] = [&inc](const std::string& v) { inc.branch_1x1 = to_size(v); };
    s["model.reduce_small"] = [&inc](const std::string& v) { inc.reduce_small = to_size(v); };
    s["model.small_kernel"] = [&inc](const std::string& v) { inc.small_kernel = to_size(v); };
    s["model.small_channels"] = [&inc](const std::string& v) { inc.small_channels = to_size(v); };
    s["model.reduce_large"] = [&inc](const std::string& v) { inc.reduce_large = to_size(v); };
    s["model.large_kernel"] = [&inc](const std::string& v) { inc.large_kernel = to_size(v); };
    s["model.large_channels"] = [&inc](const std::string& v) { inc.large_channels = to_size(v); };
    s["model.pool_proj"] = [&inc](const std::string& v) { inc.pool_proj = to_size(v); };
    s["model.fc_hidden"] = [self](const std::string& v) { self->fc_hidden = to_sizes(v); };
    s["model.dropout"] = [&t](const std::string& v) { t.dropout = to_double(v); };

    auto& sy = self->synth;
    s["synth.n_samples"] = [&sy](const std::string& v) { sy.n_samples = to_size(v); };
    s["synth.p_stay"] = [&sy](const std::string& v) { sy.p_stay = to_double(v); };
    s["synth.sigma"] = [&sy](const std::string& v) { sy.sigma = to_double(v); };
    s["synth.seed"] = [&sy](const std::string& v) { sy.seed = to_u64(v); };
    s["synth.wells"] = [self](const std::string& v) { self->synth_wells = to_size(v); };
    s["synth.prefix"] = [self](const std::string& v) { self->synth_prefix = v; };

    s["output.dir"] = [self](const std::string& v) { self->out_dir = v; };
    return s;
  }
};

inline std::vector<ConfigEntry> read_config_file(const std::string& path, std::vector<std::string>& problems) {
  std::ifstream in(path);
  if (!in) {
    problems.push_back("cannot open config file " + path);
    return {};
  }
  return parse_config(in, path, problems);
}

}  // namespace faciesnet
