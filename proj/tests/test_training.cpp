#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "faciesnet/gradcheck.hpp"
#include "faciesnet/synthgen.hpp"
#include "faciesnet/training.hpp"
#include "oracles.hpp"

using namespace faciesnet;

namespace {

ModelParams<double> single(double v) {
  ModelParams<double> p;
  p.names = {"p"};
  p.tensors = {Tensor<double>::vector({v})};
  return p;
}

std::vector<Well> synth_wells(std::size_t count, std::size_t n, double sigma, std::uint64_t seed) {
  SynthConfig c;
  c.n_samples = n;
  c.sigma = sigma;
  c.seed = seed;
  return generate_wells(c, count);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cross-entropy

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const auto r = cross_entropy(Tensor<double>({1, 9}), std::vector<int>{4});
  EXPECT_NEAR(r.loss, std::log(9.0), 1e-12);
  EXPECT_NEAR(r.loss, 2.1972, 1e-4);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  Rng rng(1, 0);
  Tensor<double> z({3, 9});
  for (auto& v : z.data()) v = 3 * rng.normal();
  const std::vector<int> labels{1, 9, 5};
  const std::vector<double> w{1, 2, 3, 4, 5, 6, 7, 8, 9};
  double expected = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const auto row = z.row(b);
    const auto p = oracle::softmax(std::vector<double>(row.begin(), row.end()));
    expected += -w[labels[b] - 1] * std::log(p[labels[b] - 1]) / 3.0;
  }
  EXPECT_NEAR(cross_entropy(z, labels, w).loss, expected, 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(2, 0);
  Tensor<double> z({4, 9});
  for (auto& v : z.data()) v = rng.normal();
  const std::vector<int> labels{2, 2, 7, 1};
  const std::vector<double> w{0.5, 1, 1.5, 1, 1, 1, 2, 1, 1};
  const auto r = cross_entropy(z, labels, w);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double saved = z[i];
    z[i] = saved + 1e-6;
    const double up = cross_entropy(z, labels, w).loss;
    z[i] = saved - 1e-6;
    const double down = cross_entropy(z, labels, w).loss;
    z[i] = saved;
    EXPECT_NEAR(r.logit_grads[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(cross_entropy(Tensor<double>({2, 9}), std::vector<int>{1}), DimensionError);
  EXPECT_THROW(cross_entropy(Tensor<double>({1, 9}), std::vector<int>{0}), ConfigError);
  EXPECT_THROW(cross_entropy(Tensor<double>({1, 9}), std::vector<int>{10}), ConfigError);
  EXPECT_THROW(cross_entropy(Tensor<double>({1, 9}), std::vector<int>{1}, std::vector<double>{1, 2}),
               DimensionError);
}

// ---------------------------------------------------------------------------
// SGD

TEST(Sgd, PlainStep) {
  auto p = single(1.0);
  auto v = p.zeros_like();
  sgd_step(p, single(2.0), 0.1, 0.0, v);
  EXPECT_NEAR(p[0][0], 0.8, 1e-15);
}

TEST(Sgd, MomentumTrajectory) {
  const auto expected = oracle::momentum_trajectory(0.0, 1.0, 0.1, 0.9, 10);
  EXPECT_NEAR(expected[0], -0.1, 1e-15);
  EXPECT_NEAR(expected[1], -0.29, 1e-15);
  auto p = single(0.0);
  auto v = p.zeros_like();
  for (int i = 0; i < 10; ++i) {
    sgd_step(p, single(1.0), 0.1, 0.9, v);
    EXPECT_NEAR(p[0][0], expected[i], 1e-12);
  }
}

TEST(Sgd, ShapeMismatch) {
  auto p = single(0.0);
  auto v = p.zeros_like();
  ModelParams<double> g;
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.0, v), DimensionError);
  g.names = {"p"};
  g.tensors = {Tensor<double>({2})};
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.0, v), DimensionError);
}

TEST(Sgd, LearningRateSchedule) {
  TrainConfig c;
  c.learning_rate = 0.01;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(19), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(20), 0.005);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(45), 0.0025);
}

// ---------------------------------------------------------------------------
// Class weights

TEST(ClassWeights, HandExample) {
  const std::vector<std::size_t> counts{90, 10};
  const auto w = compute_class_weights(counts);
  EXPECT_NEAR(w[0], 0.2, 1e-12);
  EXPECT_NEAR(w[1], 1.8, 1e-12);
}

TEST(ClassWeights, InverseFrequencyWithUnitMean) {
  const std::vector<std::size_t> counts{68, 940, 0, 271, 296, 582, 141, 686, 185};
  const auto w = compute_class_weights(counts);
  // proportional to 1/count over present classes, averaging 1 there
  double inv_sum = 0;
  for (auto c : counts)
    if (c) inv_sum += 1.0 / double(c);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double expected = counts[k] ? (1.0 / double(counts[k])) / (inv_sum / 8.0) : 1.0;
    EXPECT_NEAR(w[k], expected, 1e-12);
  }
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0) / 9.0, 1.0, 1e-12);
}

TEST(ClassWeights, AllZeroCountsGiveUnitWeights) {
  const std::vector<std::size_t> counts(9, 0);
  for (double v : compute_class_weights(counts)) EXPECT_EQ(v, 1.0);
}

// ---------------------------------------------------------------------------
// Optimization behaviour

TEST(Optimization, FullBatchLossNonIncreasing) {
  ModelSpec spec;
  spec.dropout = 0.0;
  auto params = init_params<double>(spec, 3);
  auto velocity = params.zeros_like();
  Rng rng(3, 5);
  Tensor<double> batch({32, spec.in_channels, spec.window});
  for (auto& v : batch.data()) v = rng.normal();
  std::vector<int> labels;
  for (int i = 0; i < 32; ++i) labels.push_back(int(rng.below(9)) + 1);

  double previous = INFINITY;
  int increases = 0;
  for (int step = 0; step < 100; ++step) {
    const auto fwd = model_forward(spec, params, batch, true, 0);
    const auto loss = cross_entropy(fwd.logits, labels);
    if (loss.loss > previous) ++increases;
    previous = loss.loss;
    sgd_step(params, model_backward(spec, params, fwd, loss.logit_grads), 1e-3, 0.0, velocity);
  }
  EXPECT_LE(increases, 5);
}

TEST(Optimization, SmallStepDecreasesLoss) {
  const ModelSpec spec = ModelSpec::tiny();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto prob = make_gradcheck_problem(spec, seed, 4);
    const double before = batch_loss(spec, prob.params, prob.batch, prob.labels, prob.noise_seed);
    const auto g = analytic_gradients(spec, prob.params, prob.batch, prob.labels, prob.noise_seed);
    auto v = prob.params.zeros_like();
    sgd_step(prob.params, g, 1e-6, 0.0, v);
    const double after = batch_loss(spec, prob.params, prob.batch, prob.labels, prob.noise_seed);
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------
// train()

TEST(Train, DeterministicAndThreadIndependent) {
  const auto wells = synth_wells(3, 150, 0.5, 4);
  TrainConfig c;
  c.epochs = 2;
  c.seed = 8;
  const std::vector<Well> train_set(wells.begin(), wells.end() - 1), val{wells.back()};
  const auto a = train<float>(c, ModelSpec{}, train_set, val);
  const auto b = train<float>(c, ModelSpec{}, train_set, val);
  c.threads = 3;
  const auto d = train<float>(c, ModelSpec{}, train_set, val);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, d.params);
  EXPECT_EQ(a.report.epochs.size(), 2u);
  c.seed = 9;
  EXPECT_NE(train<float>(c, ModelSpec{}, train_set, val).params, a.params);
}

TEST(Train, TrainingAccuracyAtLeastValidation) {
  const auto wells = synth_wells(4, 400, 2.0, 5);
  TrainConfig c;
  c.epochs = 8;
  c.window = 9;
  c.dropout = 0.0;
  c.learning_rate = 0.02;
  c.seed = 1;
  ModelSpec spec;
  spec.stages.resize(1);
  const std::vector<Well> train_set(wells.begin(), wells.end() - 1), val{wells.back()};
  const auto r = train<double>(c, spec, train_set, val);
  const auto std_train = apply_standardizer(r.standardizer, train_set);
  const auto std_val = apply_standardizer(r.standardizer, val);
  const auto on_train = score_windows(r.spec, r.params, extract_windows<double>(std_train, 9));
  const auto on_val = score_windows(r.spec, r.params, extract_windows<double>(std_val, 9));
  EXPECT_GE(on_train.accuracy, on_val.accuracy);
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  const auto wells = synth_wells(3, 120, 3.0, 6);
  TrainConfig c;
  c.epochs = 40;
  c.patience = 2;
  c.window = 9;
  ModelSpec spec;
  spec.stages.resize(1);
  const auto r = train<float>(c, spec, {wells[0], wells[1]}, {wells[2]});
  const auto& rows = r.report.epochs;
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& row : rows) {
    if (row.val_macro_f1 > best) {
      best = row.val_macro_f1;
      best_epoch = row.epoch;
    }
  }
  EXPECT_EQ(r.report.best_epoch, best_epoch);
  EXPECT_EQ(r.report.best_val_macro_f1, best);
  if (r.report.stopped_early) EXPECT_EQ(rows.size(), best_epoch + 2);
}

TEST(Train, ConfigErrors) {
  const auto wells = synth_wells(2, 50, 0.5, 7);
  TrainConfig c;
  c.epochs = 1;
  EXPECT_THROW(train<float>(c, ModelSpec{}, {}, {}), ConfigError);
  EXPECT_THROW(train<float>(c, ModelSpec{}, wells, {wells[0]}), ConfigError);
  c.learning_rate = 0;
  EXPECT_THROW(train<float>(c, ModelSpec{}, wells, {}), ConfigError);
  c = TrainConfig{};
  c.window = 4;
  EXPECT_THROW(train<float>(c, ModelSpec{}, wells, {}), ConfigError);
}

TEST(Train, MissingPeRequiresImputation) {
  auto wells = synth_wells(2, 60, 0.5, 8);
  wells[0].channels[kPeChannel][10] = NAN;
  TrainConfig c;
  c.epochs = 1;
  c.window = 9;
  ModelSpec spec;
  spec.stages.resize(1);
  EXPECT_THROW(train<float>(c, spec, {wells[0]}, {wells[1]}), FormatError);
  c.impute_missing_pe = true;
  EXPECT_NO_THROW(train<float>(c, spec, {wells[0]}, {wells[1]}));
}

TEST(Train, ReportCsvHasOneRowPerEpoch) {
  TrainReport report;
  report.epochs = {EpochRow{1, 2.0, 0.5, 1.5, 0.25}, EpochRow{2, 1.0, 0.75, 1.25, 0.5}};
  std::ostringstream out;
  write_report_csv(out, report);
  EXPECT_EQ(out.str(), "epoch,train_loss,train_acc,val_loss,val_macro_f1\n1,2,0.5,1.5,0.25\n2,1,0.75,1.25,0.5\n");
}
