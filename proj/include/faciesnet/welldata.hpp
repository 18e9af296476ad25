#pragma once

// Well-log ingestion: CSV parsing, standardization, depth windows and
// well-level splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/tensor.hpp"

namespace faciesnet {

inline constexpr std::size_t kNumChannels = 7;
inline constexpr std::size_t kNumFacies = 9;

inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "GR", "ILD_log10", "DeltaPHI", "PHIND", "PE", "NM_M", "RELPOS"};
inline constexpr std::size_t kPeChannel = 4;

inline std::optional<std::size_t> channel_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumChannels; ++i) {
    if (kChannelNames[i] == name) return i;
  }
  return std::nullopt;
}

using FaciesCounts = std::array<std::size_t, kNumFacies>;

// ---------------------------------------------------------------------------
// Numeric text helpers (shortest round-trip representation)

inline std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// Facies

struct FaciesInfo {
  int id;
  std::string_view code;
  std::string_view name;
};

inline constexpr std::array<FaciesInfo, kNumFacies> kFacies = {{
    {1, "SS", "Nonmarine sandstone"},
    {2, "CSiS", "Nonmarine coarse siltstone"},
    {3, "FSiS", "Nonmarine fine siltstone"},
    {4, "SiSh", "Marine siltstone and shale"},
    {5, "MS", "Mudstone (limestone)"},
    {6, "WS", "Wackestone (limestone)"},
    {7, "D", "Dolomite"},
    {8, "PS", "Packstone-grainstone (limestone)"},
    {9, "BS", "Phylloid-algal bafflestone (limestone)"},
}};

/// The nine facies in label order plus a neighbour relation used by the
/// adjacent-facies accuracy.
///
/// The default relation makes facies f and f+1 neighbours. Real studies
/// should load their own map with `parse_adjacency`.
class FaciesTable {
 public:
  FaciesTable() {
    for (int f = 1; f < static_cast<int>(kNumFacies); ++f) {
      adjacency_[f - 1].insert(f + 1);
      adjacency_[f].insert(f);
    }
  }

  static FaciesTable without_neighbours() {
    FaciesTable t;
    for (auto& s : t.adjacency_) s.clear();
    return t;
  }

  static std::string_view code(int facies) { return kFacies.at(facies - 1).code; }
  static std::string_view long_name(int facies) { return kFacies.at(facies - 1).name; }

  static std::optional<int> lookup(std::string_view token) {
    for (const auto& f : kFacies) {
      if (f.code == token) return f.id;
    }
    if (auto v = parse_number(token); v && *v >= 1 && *v <= kNumFacies && *v == std::floor(*v)) {
      return static_cast<int>(*v);
    }
    return std::nullopt;
  }

  const std::set<int>& neighbours(int facies) const { return adjacency_.at(facies - 1); }

  bool adjacent(int a, int b) const { return neighbours(a).count(b) > 0; }

  // Throws ConfigError if the relation is asymmetric or reflexive.
  void set_adjacency(const std::array<std::set<int>, kNumFacies>& adjacency) {
    for (int f = 1; f <= static_cast<int>(kNumFacies); ++f) {
      for (int g : adjacency[f - 1]) {
        if (g < 1 || g > static_cast<int>(kNumFacies)) {
          throw ConfigError("adjacency: facies id " + std::to_string(g) + " out of range");
        }
        if (g == f) throw ConfigError("adjacency: facies " + std::string(code(f)) + " lists itself");
        if (!adjacency[g - 1].count(f)) {
          throw ConfigError("adjacency is not symmetric: " + std::string(code(f)) + " -> " +
                            std::string(code(g)) + " has no reverse entry");
        }
      }
    }
    adjacency_ = adjacency;
  }

  /// Parses lines of the form `CODE: NEIGHBOUR NEIGHBOUR ...` (codes or
  /// numeric ids, comma or space separated, `#` comments). Facies that are
  /// not listed have no neighbours.
  static FaciesTable parse_adjacency(std::istream& in) {
    std::array<std::set<int>, kNumFacies> adjacency;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      for (auto& ch : line) {
        if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
      }
      if (line.find_first_not_of(' ') == std::string::npos) continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos) {
        throw ConfigError("adjacency line " + std::to_string(line_no) + ": expected 'FACIES: NEIGHBOURS'");
      }
      std::istringstream head(line.substr(0, colon));
      std::string key;
      head >> key;
      const auto f = lookup(key);
      if (!f) throw ConfigError("adjacency line " + std::to_string(line_no) + ": unknown facies '" + key + "'");
      std::istringstream tail(line.substr(colon + 1));
      std::string tok;
      while (tail >> tok) {
        const auto g = lookup(tok);
        if (!g) throw ConfigError("adjacency line " + std::to_string(line_no) + ": unknown facies '" + tok + "'");
        adjacency[*f - 1].insert(*g);
      }
    }
    FaciesTable table;
    table.set_adjacency(adjacency);
    return table;
  }

  static FaciesTable load_adjacency(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open adjacency file " + path);
    return parse_adjacency(in);
  }

 private:
  std::array<std::set<int>, kNumFacies> adjacency_{};
};

// ---------------------------------------------------------------------------
// Wells

/// One borehole: depth-sorted samples of the seven input channels plus
/// optional facies labels (1..9). Missing cells are NaN.
struct Well {
  std::string name;
  std::vector<double> depth;
  std::vector<std::string> formation;
  std::array<std::vector<double>, kNumChannels> channels;
  std::vector<int> labels;  // empty when unlabeled

  std::size_t size() const { return depth.size(); }
  bool labeled() const { return !labels.empty(); }

  const std::vector<double>& channel(std::string_view channel_name) const {
    const auto idx = channel_index(channel_name);
    if (!idx) throw MismatchError("unknown channel " + std::string(channel_name));
    return channels[*idx];
  }

  bool has_gaps(std::size_t ch) const {
    return std::any_of(channels[ch].begin(), channels[ch].end(), [](double v) { return std::isnan(v); });
  }
};

struct CsvOptions {
  // Accept files without a PE column (or with blank PE cells); the gaps are
  // filled later with the training-set mean by `impute_missing_pe`.
  bool allow_missing_pe = false;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

}  // namespace detail

/// Reads the contest well-log CSV layout:
/// `Facies,Formation,Well Name,Depth,GR,ILD_log10,DeltaPHI,PHIND,PE,NM_M,RELPOS`.
/// Column order is free; Facies and Formation are optional.
inline std::vector<Well> parse_csv(std::istream& in, const CsvOptions& options = {}) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV: header row missing");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[detail::trim(header[i])] = i;

  auto require = [&](const std::string& name) -> std::size_t {
    auto it = column.find(name);
    if (it == column.end()) throw FormatError("missing required column '" + name + "'");
    return it->second;
  };
  const std::size_t well_col = require("Well Name");
  const std::size_t depth_col = require("Depth");
  std::array<std::optional<std::size_t>, kNumChannels> channel_col;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    const std::string name(kChannelNames[c]);
    if (c == kPeChannel && options.allow_missing_pe && !column.count(name)) continue;
    channel_col[c] = require(name);
  }
  const auto facies_it = column.find("Facies");
  const auto formation_it = column.find("Formation");
  const bool labeled = facies_it != column.end();

  struct Row {
    double depth;
    std::string formation;
    std::array<double, kNumChannels> values;
    int label;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() < header.size()) {
      throw FormatError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(fields.size()));
    }
    auto numeric = [&](std::size_t col, const std::string& what, bool allow_blank) -> double {
      const std::string cell = detail::trim(fields[col]);
      if (cell.empty()) {
        if (allow_blank) return std::numeric_limits<double>::quiet_NaN();
        throw ParseError("row " + std::to_string(line_no) + ": empty " + what + " cell");
      }
      const auto v = parse_number(cell);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("row " + std::to_string(line_no) + ": non-numeric " + what + " value '" + cell + "'");
      }
      return *v;
    };
    Row row{};
    const std::string well = detail::trim(fields[well_col]);
    if (well.empty()) throw ParseError("row " + std::to_string(line_no) + ": empty well name");
    row.depth = numeric(depth_col, "Depth", false);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      row.values[c] = channel_col[c] ? numeric(*channel_col[c], std::string(kChannelNames[c]), true)
                                     : std::numeric_limits<double>::quiet_NaN();
    }
    if (formation_it != column.end()) row.formation = detail::trim(fields[formation_it->second]);
    row.label = 0;
    if (labeled) {
      const double f = numeric(facies_it->second, "Facies", false);
      if (f != std::floor(f) || f < 1 || f > static_cast<double>(kNumFacies)) {
        throw ParseError("row " + std::to_string(line_no) + ": facies label " + format_number(f) +
                         " outside 1..9");
      }
      row.label = static_cast<int>(f);
    }
    if (!rows.count(well)) order.push_back(well);
    rows[well].push_back(std::move(row));
  }

  std::vector<Well> wells;
  wells.reserve(order.size());
  for (const auto& name : order) {
    auto& rs = rows[name];
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.depth < b.depth; });
    Well w;
    w.name = name;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (i > 0 && !(rs[i].depth > rs[i - 1].depth)) {
        throw FormatError("well " + name + ": duplicate depth " + format_number(rs[i].depth));
      }
      w.depth.push_back(rs[i].depth);
      w.formation.push_back(rs[i].formation);
      for (std::size_t c = 0; c < kNumChannels; ++c) w.channels[c].push_back(rs[i].values[c]);
      if (labeled) w.labels.push_back(rs[i].label);
    }
    wells.push_back(std::move(w));
  }
  return wells;
}

inline std::vector<Well> parse_csv(const std::string& path, const CsvOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_csv(in, options);
}

// Writes the full schema; the Facies column is present iff every well is labeled.
inline void write_csv(std::ostream& out, const std::vector<Well>& wells) {
  const bool labeled =
      !wells.empty() && std::all_of(wells.begin(), wells.end(), [](const Well& w) { return w.labeled(); });
  if (labeled) out << "Facies,";
  out << "Formation,Well Name,Depth";
  for (auto name : kChannelNames) out << ',' << name;
  out << '\n';
  for (const auto& w : wells) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (labeled) out << w.labels[i] << ',';
      out << detail::csv_quote(i < w.formation.size() ? w.formation[i] : std::string{}) << ','
          << detail::csv_quote(w.name) << ',' << format_number(w.depth[i]);
      for (std::size_t c = 0; c < kNumChannels; ++c) out << ',' << format_number(w.channels[c][i]);
      out << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const std::vector<Well>& wells) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_csv(out, wells);
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-channel mean and population standard deviation, fitted on training
/// wells only. Channels whose spread is below 1e-8 get std = 1.
struct Standardizer {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> stddev{1, 1, 1, 1, 1, 1, 1};

  static Standardizer identity() { return {}; }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

inline constexpr double kDegenerateStd = 1e-8;

inline Standardizer fit_standardizer(const std::vector<Well>& wells) {
  if (wells.empty()) throw ConfigError("fit_standardizer: no training wells");
  Standardizer s;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& w : wells) {
      for (double v : w.channels[c]) {
        if (!std::isnan(v)) {
          sum += v;
          ++n;
        }
      }
    }
    if (n == 0) {
      s.mean[c] = 0.0;
      s.stddev[c] = 1.0;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& w : wells) {
      for (double v : w.channels[c]) {
        if (!std::isnan(v)) ss += (v - mean) * (v - mean);
      }
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[c] = mean;
    s.stddev[c] = sd < kDegenerateStd ? 1.0 : sd;
  }
  return s;
}

// (x - mean) / std per channel; gaps stay gaps, labels untouched.
inline Well apply_standardizer(const Standardizer& s, Well well) {
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    for (double& v : well.channels[c]) v = (v - s.mean[c]) / s.stddev[c];
  }
  return well;
}

inline std::vector<Well> apply_standardizer(const Standardizer& s, std::vector<Well> wells) {
  for (auto& w : wells) w = apply_standardizer(s, std::move(w));
  return wells;
}

inline Well invert_standardizer(const Standardizer& s, Well well) {
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    for (double& v : well.channels[c]) v = v * s.stddev[c] + s.mean[c];
  }
  return well;
}

// Fills PE gaps with the fitted (training-set) PE mean.
inline void impute_missing_pe(const Standardizer& s, std::vector<Well>& wells) {
  for (auto& w : wells) {
    for (double& v : w.channels[kPeChannel]) {
      if (std::isnan(v)) v = s.mean[kPeChannel];
    }
  }
}

// Throws FormatError naming the first gap, if any.
inline void require_complete(const std::vector<Well>& wells) {
  for (const auto& w : wells) {
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (std::isnan(w.channels[c][i])) {
          std::string msg = "well " + w.name + ": missing " + std::string(kChannelNames[c]) + " value at depth " +
                            format_number(w.depth[i]);
          if (c == kPeChannel) msg += " (enable --allow-missing-pe to impute)";
          throw FormatError(msg);
        }
      }
    }
  }
}

inline void save_standardizer(std::ostream& out, const Standardizer& s) {
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    out << kChannelNames[c] << ' ' << format_number(s.mean[c]) << ' ' << format_number(s.stddev[c]) << '\n';
  }
}

inline void save_standardizer(const std::string& path, const Standardizer& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  save_standardizer(out, s);
}

// Reads exactly seven `NAME MEAN STD` lines (any order, blank lines ignored).
inline Standardizer load_standardizer(std::istream& in) {
  Standardizer s;
  std::array<bool, kNumChannels> seen{};
  std::string line;
  std::size_t count = 0;
  while (count < kNumChannels && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string name, mean, sd;
    if (!(ls >> name)) continue;
    if (!(ls >> mean >> sd)) throw FormatError("standardizer: malformed line '" + line + "'");
    const auto idx = channel_index(name);
    if (!idx) throw MismatchError("standardizer: unknown channel " + name);
    const auto m = parse_number(mean);
    const auto d = parse_number(sd);
    if (!m || !d || !(*d > 0)) throw FormatError("standardizer: bad numbers for " + name);
    s.mean[*idx] = *m;
    s.stddev[*idx] = *d;
    seen[*idx] = true;
    ++count;
  }
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    if (!seen[c]) throw MismatchError("standardizer: channel " + std::string(kChannelNames[c]) + " missing");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Windows

template <class T>
struct WindowExample {
  Tensor<T> window;  // kNumChannels x W
  int label = 0;     // 0 when the source well is unlabeled
  std::string well;
  double depth = 0.0;
};

template <class T>
using WindowSet = std::vector<WindowExample<T>>;

// Window of odd width centred on sample `center`; samples past either end of
// the well replicate the edge sample.
template <class T>
Tensor<T> window_at(const Well& well, std::size_t center, std::size_t width) {
  Tensor<T> win({kNumChannels, width});
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  const auto last = static_cast<std::ptrdiff_t>(well.size()) - 1;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    for (std::size_t t = 0; t < width; ++t) {
      const auto src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(center) - half +
                                                      static_cast<std::ptrdiff_t>(t),
                                                  0, last);
      win(c, t) = static_cast<T>(well.channels[c][static_cast<std::size_t>(src)]);
    }
  }
  return win;
}

inline void check_window_width(std::size_t width) {
  if (width < 1 || width % 2 == 0) throw ConfigError("window width must be odd and >= 1");
}

// One labeled example per sample of a labeled well.
template <class T>
WindowSet<T> extract_windows(const Well& well, std::size_t width) {
  check_window_width(width);
  if (!well.labeled()) {
    throw MissingLabelsError("well " + well.name + " has no facies labels; use the prediction path");
  }
  WindowSet<T> out;
  out.reserve(well.size());
  for (std::size_t i = 0; i < well.size(); ++i) {
    out.push_back({window_at<T>(well, i, width), well.labels[i], well.name, well.depth[i]});
  }
  return out;
}

// One example per sample regardless of labels (label 0 if unlabeled).
template <class T>
WindowSet<T> extract_all_windows(const Well& well, std::size_t width) {
  check_window_width(width);
  WindowSet<T> out;
  out.reserve(well.size());
  for (std::size_t i = 0; i < well.size(); ++i) {
    out.push_back({window_at<T>(well, i, width), well.labeled() ? well.labels[i] : 0, well.name, well.depth[i]});
  }
  return out;
}

template <class T>
WindowSet<T> extract_windows(const std::vector<Well>& wells, std::size_t width) {
  WindowSet<T> out;
  for (const auto& w : wells) {
    auto part = extract_windows<T>(w, width);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and counts

struct WellSplit {
  std::vector<Well> train;
  std::vector<Well> held_out;
};

/// Partitions wells by name. Every name in `names` must exist exactly once.
inline WellSplit split_by_well(const std::vector<Well>& wells, const std::vector<std::string>& names) {
  std::set<std::string> wanted;
  for (const auto& n : names) {
    if (!wanted.insert(n).second) throw ConfigError("well '" + n + "' listed twice");
  }
  for (const auto& n : wanted) {
    const bool found = std::any_of(wells.begin(), wells.end(), [&](const Well& w) { return w.name == n; });
    if (!found) throw ConfigError("unknown well '" + n + "'");
  }
  WellSplit split;
  for (const auto& w : wells) (wanted.count(w.name) ? split.held_out : split.train).push_back(w);
  return split;
}

inline FaciesCounts facies_counts(const std::vector<Well>& wells) {
  FaciesCounts counts{};
  for (const auto& w : wells) {
    for (int f : w.labels) ++counts.at(static_cast<std::size_t>(f - 1));
  }
  return counts;
}

}  // namespace faciesnet
