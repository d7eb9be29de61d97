#include <gtest/gtest.h>

#include <cmath>

#include "dpm/dpm_net.hpp"
#include "oracles.hpp"

using dpm::DpmConfig;
using dpm::DpmModel;
using dpm::Matrix;
using dpm::Rng;
using dpm::Vector;

namespace {

DpmModel zero_model(std::size_t d, std::vector<std::size_t> hidden) {
  DpmConfig cfg;
  cfg.input_dim = d;
  cfg.hidden_sizes = std::move(hidden);
  DpmModel m = dpm::init_glorot(cfg);
  for (auto& l : m.layers) std::fill(l.weights.data().begin(), l.weights.data().end(), 0.0);
  std::fill(m.output.data().begin(), m.output.data().end(), 0.0);
  return m;
}

struct IdentityTask {
  DpmConfig cfg;
  Matrix x;
};

IdentityTask identity_task() {
  IdentityTask task;
  task.cfg.input_dim = 4;
  task.cfg.hidden_sizes = {16};
  task.cfg.lambda = 0.0;
  task.cfg.learning_rate = 0.1;
  task.cfg.lr_decay_every = 100;
  task.cfg.batch_size = 16;
  task.cfg.epochs = 30;
  task.cfg.seed = 5;
  Rng rng(99);
  task.x = oracle::random_matrix(rng, 512, 4, -0.5, 0.5);
  return task;
}

}  // namespace

TEST(Tanh, ReferenceValues) {
  EXPECT_EQ(dpm::tanh_activation(0.0), 0.0);
  EXPECT_NEAR(dpm::tanh_activation(1.0), 0.7615941559557649, 1e-15);
  // Same value via the exponential form.
  EXPECT_NEAR(dpm::tanh_activation(1.0), (std::exp(2.0) - 1) / (std::exp(2.0) + 1), 1e-15);
}

TEST(Tanh, SaturatesWithoutNaN) {
  EXPECT_EQ(dpm::tanh_activation(1000.0), 1.0);
  EXPECT_EQ(dpm::tanh_activation(-1000.0), -1.0);
  const Vector big{1e300, -1e300, 710.0, -710.0, 40.0};
  for (double v : dpm::tanh_activation(big)) {
    EXPECT_FALSE(std::isnan(v));
    EXPECT_EQ(std::abs(v), 1.0);
  }
}

TEST(Glorot, BoundFor66To200) {
  EXPECT_NEAR(dpm::glorot_bound(66, 200), 0.1501879, 1e-7);  // sqrt(6/266)
  const DpmModel m = dpm::init_glorot(DpmConfig{});
  const double r = dpm::glorot_bound(66, 200);
  for (double w : m.layers[0].weights.data()) {
    EXPECT_GE(w, -r);
    EXPECT_LT(w, r);
  }
  const double ro = dpm::glorot_bound(200, 66);
  for (double w : m.output.data()) EXPECT_LE(std::abs(w), ro);
  EXPECT_EQ(m.output.rows(), 66u);
  EXPECT_EQ(m.output.cols(), 200u);
}

TEST(Glorot, BiasesExactlyZero) {
  const DpmModel m = dpm::init_glorot(DpmConfig::shallow());
  for (const auto& l : m.layers)
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
}

TEST(Glorot, SameSeedBitwiseIdentical) {
  DpmConfig c;
  c.seed = 1234;
  EXPECT_EQ(dpm::init_glorot(c), dpm::init_glorot(c));
  DpmConfig d = c;
  d.seed = 1235;
  EXPECT_NE(dpm::init_glorot(c), dpm::init_glorot(d));
}

TEST(Forward, ZeroParametersGiveZeroOutput) {
  const DpmModel m = zero_model(6, {5, 3});
  EXPECT_EQ(dpm::forward(m, Vector{1, -2, 3, 0.5, 9, -7}), Vector(6, 0.0));
}

TEST(Forward, ConstantHiddenLayerThroughSelector) {
  const std::size_t d = 4, hidden = 6;
  const double c = 0.3;
  DpmModel m = zero_model(d, {hidden});
  std::fill(m.layers[0].bias.begin(), m.layers[0].bias.end(), c);
  for (std::size_t i = 0; i < d; ++i) m.output(i, i) = 1.0;
  for (double v : dpm::forward(m, Vector{5, -1, 2, 0})) EXPECT_EQ(v, std::tanh(c));
}

TEST(Forward, MatchesNaivePerNeuron) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DpmModel m = oracle::random_model(seed, {7, 9, 5, 7});
    Rng rng(seed + 100);
    const Matrix x = oracle::random_matrix(rng, 1, 7);
    const Vector fast = dpm::forward(m, x.data()), slow = oracle::naive_forward(m, x.data());
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], slow[i], 1e-12);
  }
}

TEST(Forward, DimensionMismatchRejected) {
  const DpmModel m = zero_model(3, {2});
  EXPECT_THROW(dpm::forward(m, Vector{1, 2}), dpm::Error);
  EXPECT_THROW(dpm::map_batch(m, Matrix(2, 4)), dpm::Error);
}

TEST(Loss, PerfectPredictionIsZero) {
  const DpmModel m = oracle::random_model(3, {5, 8, 5});
  Rng rng(4);
  const Matrix x = oracle::random_matrix(rng, 6, 5);
  EXPECT_EQ(dpm::loss(m, x, dpm::map_batch(m, x), 0.0), 0.0);
}

TEST(Loss, ZeroModelGivesTargetNorm) {
  const DpmModel m = zero_model(3, {4});
  const Matrix x(1, 3, std::vector<double>{0.1, 0.2, 0.3});
  const Matrix t(1, 3, std::vector<double>{1, 2, 2});
  EXPECT_EQ(dpm::loss(m, x, t, 0.0), 9.0);
}

TEST(Loss, MatchesNaiveImplementation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DpmModel m = oracle::random_model(seed, {6, 4, 6});
    Rng rng(seed);
    const Matrix x = oracle::random_matrix(rng, 5, 6), t = oracle::random_matrix(rng, 5, 6);
    for (double lambda : {0.0, 1e-4, 0.3})
      EXPECT_NEAR(dpm::loss(m, x, t, lambda), oracle::naive_loss(m, x, t, lambda), 1e-12);
  }
}

TEST(Loss, RegularizerExcludesOutputMap) {
  DpmModel m = zero_model(2, {3});
  m.output(0, 0) = 100.0;
  const Matrix x(1, 2), t(1, 2);
  EXPECT_EQ(dpm::loss(m, x, t, 1.0), 0.0);
  m.layers[0].bias[0] = 2.0;
  // (lambda / N) * |b|^2, N = 1; output row gets 100 * tanh(2) as well.
  const double y = 100.0 * std::tanh(2.0);
  EXPECT_NEAR(dpm::loss(m, x, t, 0.5), y * y + 0.5 * 4.0, 1e-9);
}

TEST(Loss, EmptyBatchRejected) {
  const DpmModel m = zero_model(2, {2});
  EXPECT_THROW(dpm::loss(m, Matrix(0, 2), Matrix(0, 2), 0.0), dpm::Error);
  EXPECT_THROW(dpm::loss(m, Matrix(2, 2), Matrix(3, 2), 0.0), dpm::Error);
}

TEST(Loss, NonNegativeAndMonotoneInLambda) {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DpmModel m = oracle::random_model(seed, {5, 7, 5});
    const Matrix x = oracle::random_matrix(rng, 4, 5), t = oracle::random_matrix(rng, 4, 5);
    const double l0 = dpm::loss(m, x, t, 0.0), l1 = dpm::loss(m, x, t, 1e-2);
    EXPECT_GE(l0, 0.0);
    EXPECT_GE(l1, l0);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnDefaultShape) {
  const DpmModel m = oracle::random_model(0, {66, 20, 20, 66});
  Rng rng(1);
  const Matrix x = oracle::random_matrix(rng, 8, 66), t = oracle::random_matrix(rng, 8, 66);
  for (double lambda : {0.0, 1e-4}) {
    const auto c = oracle::compare_gradients(dpm::backward(m, x, t, lambda),
                                             oracle::finite_difference_gradient(m, x, t, lambda));
    EXPECT_EQ(c.failures, 0u) << "worst relative error " << c.worst_rel;
    EXPECT_EQ(c.checked, 66u * 20 + 20 + 20 * 20 + 20 + 66 * 20);
  }
}

TEST(Backward, StationaryPointHasZeroGradient) {
  const DpmModel m = zero_model(5, {4, 3});
  Rng rng(2);
  const Matrix x = oracle::random_matrix(rng, 3, 5);
  const auto g = dpm::backward(m, x, Matrix(3, 5), 0.0);
  oracle::for_each_gradient(g, [](double v) { EXPECT_EQ(v, 0.0); });
}

TEST(Backward, RegularizerOnlyGradient) {
  // Zero output map and zero targets leave only the penalty term.
  DpmModel m = oracle::random_model(7, {5, 6, 4, 5});
  std::fill(m.output.data().begin(), m.output.data().end(), 0.0);
  Rng rng(3);
  const Matrix x = oracle::random_matrix(rng, 4, 5);
  const double lambda = 0.3;
  const auto g = dpm::backward(m, x, Matrix(4, 5), lambda);
  const double n = static_cast<double>(m.depth());
  for (std::size_t k = 0; k < m.depth(); ++k) {
    for (std::size_t i = 0; i < g.layers[k].weights.size(); ++i)
      EXPECT_NEAR(g.layers[k].weights.data()[i], 2 * lambda / n * m.layers[k].weights.data()[i], 1e-15);
    for (std::size_t i = 0; i < g.layers[k].bias.size(); ++i)
      EXPECT_NEAR(g.layers[k].bias[i], 2 * lambda / n * m.layers[k].bias[i], 1e-15);
  }
  for (double v : g.output.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, IndependentOfThreadCount) {
  const DpmModel m = oracle::random_model(9, {10, 12, 10});
  Rng rng(4);
  const Matrix x = oracle::random_matrix(rng, 150, 10), t = oracle::random_matrix(rng, 150, 10);
  const auto a = dpm::loss_and_gradients(m, x, t, 1e-3, 1);
  const auto b = dpm::loss_and_gradients(m, x, t, 1e-3, 4);
  EXPECT_EQ(a.loss, b.loss);
  std::vector<double> ga, gb;
  oracle::for_each_gradient(a.grads, [&](double v) { ga.push_back(v); });
  oracle::for_each_gradient(b.grads, [&](double v) { gb.push_back(v); });
  EXPECT_EQ(ga, gb);
  EXPECT_NEAR(a.loss, dpm::loss(m, x, t, 1e-3), 1e-12);
}

TEST(Sgd, ZeroLearningRateLeavesModelUnchanged) {
  DpmModel m = oracle::random_model(1, {4, 3, 4});
  const DpmModel before = m;
  Rng rng(5);
  const Matrix x = oracle::random_matrix(rng, 2, 4), t = oracle::random_matrix(rng, 2, 4);
  dpm::sgd_step(m, dpm::backward(m, x, t, 0.1), 0.0);
  EXPECT_EQ(m, before);
}

TEST(Sgd, ScalarQuadraticStep) {
  // Saturated hidden unit (tanh(20) == 1) makes J = (w - 3)^2 in the output weight.
  DpmModel m = zero_model(1, {1});
  m.layers[0].bias[0] = 20.0;
  ASSERT_EQ(std::tanh(20.0), 1.0);
  const Matrix x(1, 1), t(1, 1, 3.0);
  const auto lg = dpm::loss_and_gradients(m, x, t, 0.0);
  EXPECT_EQ(lg.loss, 9.0);
  EXPECT_EQ(lg.grads.output(0, 0), -6.0);
  dpm::sgd_step(m, lg.grads, 0.25);
  EXPECT_EQ(m.output(0, 0), 1.5);
}

TEST(Sgd, DeterministicAndShapeChecked) {
  DpmModel a = oracle::random_model(2, {4, 3, 4}), b = a;
  Rng rng(6);
  const Matrix x = oracle::random_matrix(rng, 3, 4), t = oracle::random_matrix(rng, 3, 4);
  for (int i = 0; i < 2; ++i) {
    dpm::sgd_step(a, dpm::backward(a, x, t, 1e-4), 0.05);
    dpm::sgd_step(b, dpm::backward(b, x, t, 1e-4), 0.05);
  }
  EXPECT_EQ(a, b);
  const auto other = dpm::backward(oracle::random_model(2, {4, 5, 4}), x, t, 0.0);
  EXPECT_THROW(dpm::sgd_step(a, other, 0.1), dpm::Error);
}

TEST(MapBatch, RowsMatchForwardExactly) {
  const DpmModel m = dpm::init_glorot(DpmConfig{});
  Rng rng(7);
  const Matrix x = oracle::random_matrix(rng, 408, 66);
  const Matrix y = dpm::map_batch(m, x);
  ASSERT_EQ(y.rows(), 408u);
  ASSERT_EQ(y.cols(), 66u);
  for (std::size_t r : {0u, 1u, 200u, 407u}) {
    const Vector f = dpm::forward(m, x.row(r));
    for (std::size_t c = 0; c < 66; ++c) EXPECT_EQ(y(r, c), f[c]);
  }
}

TEST(MapBatch, OutputBoundedByOutputNorm) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DpmModel m = oracle::random_model(seed, {8, 12, 8});
    Rng rng(seed);
    const Matrix x = oracle::random_matrix(rng, 20, 8, -50, 50);
    const double bound =
        std::sqrt(dpm::squared_norm(m.output.data())) * std::sqrt(static_cast<double>(m.output.cols()));
    const Matrix y = dpm::map_batch(m, x);
    for (std::size_t r = 0; r < y.rows(); ++r) EXPECT_LE(std::sqrt(dpm::squared_norm(y.row(r))), bound);
  }
}

TEST(LearningRate, HalvesEveryTenEpochs) {
  const DpmConfig c;
  EXPECT_EQ(dpm::learning_rate_at(c, 0), 0.01);
  EXPECT_EQ(dpm::learning_rate_at(c, 9), 0.01);
  EXPECT_EQ(dpm::learning_rate_at(c, 10), 0.005);
  EXPECT_EQ(dpm::learning_rate_at(c, 29), 0.0025);
}

TEST(Train, IdentityTaskConverges) {
  const auto task = identity_task();
  const double initial = dpm::loss(dpm::init_glorot(task.cfg), task.x, task.x, 0.0);
  const auto res = dpm::train(task.cfg, task.x, task.x);
  ASSERT_EQ(res.report.epoch_loss.size(), 30u);
  EXPECT_EQ(res.report.epochs_run, 30u);
  EXPECT_EQ(res.report.final_loss, res.report.epoch_loss.back());
  EXPECT_LT(res.report.final_loss, 0.05 * initial);
}

TEST(Train, SameSeedBitwiseIdentical) {
  auto task = identity_task();
  task.cfg.epochs = 3;
  const auto a = dpm::train(task.cfg, task.x, task.x), b = dpm::train(task.cfg, task.x, task.x);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.epoch_loss, b.report.epoch_loss);
  task.cfg.threads = 3;
  EXPECT_EQ(dpm::train(task.cfg, task.x, task.x).model, a.model);
}

TEST(Train, HugeLearningRateDiverges) {
  auto task = identity_task();
  task.cfg.learning_rate = 1e3;
  try {
    dpm::train(task.cfg, task.x, task.x);
    FAIL() << "expected divergence";
  } catch (const dpm::TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_EQ(e.kind(), dpm::ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Train, CallbackSeesEveryEpoch) {
  auto task = identity_task();
  task.cfg.epochs = 4;
  std::vector<std::size_t> seen;
  dpm::train(task.cfg, task.x, task.x, [&](std::size_t e, double) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(Config, ValidationRejectsBadValues) {
  DpmConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), dpm::Error);
  c = DpmConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), dpm::Error);
  c = DpmConfig{};
  c.hidden_sizes = {10, 0};
  EXPECT_THROW(c.validate(), dpm::Error);
}
