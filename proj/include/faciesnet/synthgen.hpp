#pragma once

// Synthetic labeled wells: a 9-state Markov facies sequence with
// facies-dependent channel means plus Gaussian noise.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/random.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

using FaciesMeans = std::array<std::array<double, kNumChannels>, kNumFacies>;

// Facies f has mean f in every channel.
inline FaciesMeans default_facies_means() {
  FaciesMeans m{};
  for (std::size_t f = 0; f < kNumFacies; ++f) m[f].fill(static_cast<double>(f + 1));
  return m;
}

struct SynthConfig {
  std::size_t n_samples = 2000;
  double p_stay = 0.95;
  FaciesMeans means = default_facies_means();
  double sigma = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // distinct wells from one seed use distinct streams
  std::string well_name = "SYN-0";
  double depth_start = 0.0;
  double depth_step = 1.5;

  void validate() const {
    if (!(p_stay >= 0.0 && p_stay < 1.0)) throw ConfigError("p_stay must be in [0, 1)");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (!(depth_step > 0.0)) throw ConfigError("depth_step must be > 0");
  }
};

/// First state uniform; then stay with probability p_stay, otherwise jump to
/// one of the other eight states uniformly.
inline Well generate_well(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed, config.stream);
  Well w;
  w.name = config.well_name;
  w.labels.reserve(config.n_samples);
  int state = static_cast<int>(rng.below(kNumFacies)) + 1;
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    if (i > 0 && !(rng.uniform() < config.p_stay)) {
      int next = static_cast<int>(rng.below(kNumFacies - 1)) + 1;
      if (next >= state) ++next;
      state = next;
    }
    w.labels.push_back(state);
    w.depth.push_back(config.depth_start + config.depth_step * static_cast<double>(i));
    w.formation.emplace_back("SYN");
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const double mean = config.means[static_cast<std::size_t>(state - 1)][c];
      w.channels[c].push_back(config.sigma > 0.0 ? rng.normal(mean, config.sigma) : mean);
    }
  }
  return w;
}

// `count` wells named <prefix>-0 .. <prefix>-(count-1), stream i for well i.
inline std::vector<Well> generate_wells(SynthConfig config, std::size_t count, const std::string& prefix = "SYN") {
  std::vector<Well> wells;
  wells.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    config.stream = i;
    config.well_name = prefix + "-" + std::to_string(i);
    wells.push_back(generate_well(config));
  }
  return wells;
}

}  // namespace faciesnet
