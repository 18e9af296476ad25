#include <gtest/gtest.h>

#include "faciesnet/synthgen.hpp"
#include "oracles.hpp"

using namespace faciesnet;

TEST(Synth, MeanRunLength) {
  SynthConfig c;
  c.n_samples = 100000;
  c.p_stay = 0.95;
  const auto w = generate_well(c);
  const double mrl = oracle::mean_run_length(w.labels);
  EXPECT_GE(mrl, 15.0);
  EXPECT_LE(mrl, 25.0);
}

TEST(Synth, MeanRunLengthSmallWell) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c;
    c.n_samples = 10000;
    c.seed = seed;
    const double mrl = oracle::mean_run_length(generate_well(c).labels);
    EXPECT_GE(mrl, 15.0);
    EXPECT_LE(mrl, 25.0);
  }
}

namespace {

std::array<double, 9> frequencies(double p_stay, std::uint64_t seed) {
  SynthConfig c;
  c.n_samples = 100000;
  c.p_stay = p_stay;
  c.seed = seed;
  std::array<double, 9> freq{};
  for (int f : generate_well(c).labels) freq[f - 1] += 1e-5;
  return freq;
}

}  // namespace

// Relative 5% holds when runs are short enough for 10^5 samples to average out.
TEST(Synth, StateFrequenciesAreUniform) {
  for (double p_stay : {0.0, 0.5}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (double f : frequencies(p_stay, seed)) EXPECT_NEAR(f, 1.0 / 9.0, 0.05 / 9.0) << p_stay;
    }
  }
}

// With p_stay = 0.95 only ~5000 runs fit in 10^5 samples; check 5 points absolute.
TEST(Synth, StateFrequenciesPersistentChain) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (double f : frequencies(0.95, seed)) EXPECT_NEAR(f, 1.0 / 9.0, 0.05);
  }
}

TEST(Synth, JumpsNeverStay) {
  SynthConfig c;
  c.n_samples = 5000;
  c.p_stay = 0.0;
  const auto w = generate_well(c);
  for (std::size_t i = 1; i < w.size(); ++i) EXPECT_NE(w.labels[i], w.labels[i - 1]);
}

TEST(Synth, NoiseFreeChannelsEqualMeans) {
  SynthConfig c;
  c.n_samples = 300;
  c.sigma = 0.0;
  const auto w = generate_well(c);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t ch = 0; ch < kNumChannels; ++ch) EXPECT_EQ(w.channels[ch][i], double(w.labels[i]));
}

TEST(Synth, NoiseHasRequestedSpread) {
  SynthConfig c;
  c.n_samples = 50000;
  c.sigma = 0.5;
  const auto w = generate_well(c);
  std::vector<double> residual;
  for (std::size_t i = 0; i < w.size(); ++i) residual.push_back(w.channels[2][i] - w.labels[i]);
  EXPECT_NEAR(oracle::population_std(residual), 0.5, 0.01);
}

TEST(Synth, DeterministicAndStreamSeparated) {
  SynthConfig c;
  c.n_samples = 200;
  c.seed = 11;
  const auto a = generate_wells(c, 3, "W");
  const auto b = generate_wells(c, 3, "W");
  EXPECT_EQ(a[1].labels, b[1].labels);
  EXPECT_EQ(a[1].channels, b[1].channels);
  EXPECT_NE(a[0].labels, a[1].labels);
  EXPECT_EQ(a[2].name, "W-2");
  EXPECT_EQ(a[0].depth[2], 3.0);
}

TEST(Synth, InvalidConfig) {
  SynthConfig c;
  c.p_stay = 1.0;
  EXPECT_THROW(generate_well(c), ConfigError);
  c = SynthConfig{};
  c.sigma = -1;
  EXPECT_THROW(generate_well(c), ConfigError);
  c = SynthConfig{};
  c.n_samples = 0;
  EXPECT_THROW(generate_well(c), ConfigError);
}
