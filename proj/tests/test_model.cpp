#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dcf/nn/checkpoint.hpp"
#include "dcf/nn/model.hpp"
#include "dcf/nn/optim.hpp"
#include "dcf/nn/train.hpp"
#include "oracles.hpp"

using namespace dcf;
using namespace dcf::nn;

namespace {

// Bright vs dark squares with pixel noise.
PreparedSet toy_set(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 20.0);
  PreparedSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    ImageU8 img(side, side);
    for (auto& v : img.data())
      v = static_cast<std::uint8_t>(std::clamp((label ? 70.0 : 180.0) + noise(rng), 0.0, 255.0));
    s.images.push_back(std::move(img));
    s.labels.push_back(label);
    s.source_index.push_back(i);
  }
  return s;
}

ModelSpec small_spec(std::size_t side) {
  ModelSpec s;
  s.input_side = side;
  s.stem_channels = 4;
  s.stages = {{4, 1}, {8, 1}};
  return s;
}

std::vector<std::vector<double>> grads_of(const ModelState<double>& s) {
  std::vector<std::vector<double>> g;
  for (const auto& p : s.params) g.push_back(p.grad);
  return g;
}

}  // namespace

TEST(Model, DefaultArchitectureParameterCount) {
  const auto s = make_model<float>(ModelSpec{}, 1);
  EXPECT_EQ(s.parameter_count(), 19690u);
  EXPECT_EQ(s.depth(), 3u);
  EXPECT_EQ(s.layer_count(), 5u);
}

TEST(Model, InitialisationIsSeeded) {
  const auto a = make_model<double>(ModelSpec{}, 5), b = make_model<double>(ModelSpec{}, 5),
             c = make_model<double>(ModelSpec{}, 6);
  EXPECT_EQ(serialize(a), serialize(b));
  EXPECT_NE(serialize(a), serialize(c));
}

TEST(Model, RejectsWrongInputShape) {
  auto s = make_model<double>(oracle::toy_spec(), 1);
  EXPECT_THROW(forward(s, oracle::random_input(1, 9, 1), Mode::kEval), std::invalid_argument);
}

TEST(Gradients, FiniteDifferencesEveryParameter) {
  const auto checks = oracle::check_param_gradients(42);
  ASSERT_GT(checks.size(), 10u);
  for (const auto& c : checks) EXPECT_LT(c.rel_error, 1e-4) << c.name;
}

TEST(Gradients, BatchDuplicationInvariance) {
  auto s1 = make_model<double>(oracle::toy_spec(), 3);
  auto s2 = s1;
  const auto x = oracle::random_input(3, 8, 4);
  Tensor4<double> xx(6, 3, 8, 8);
  std::copy(x.data.begin(), x.data.end(), xx.data.begin());
  std::copy(x.data.begin(), x.data.end(), xx.data.begin() + static_cast<std::ptrdiff_t>(x.data.size()));
  const std::vector<std::size_t> y = {0, 1, 0}, yy = {0, 1, 0, 0, 1, 0};
  const double l1 = backward(s1, forward(s1, x, Mode::kTrain), y);
  const double l2 = backward(s2, forward(s2, xx, Mode::kTrain), yy);
  EXPECT_NEAR(l1, l2, 1e-10);
  const auto g1 = grads_of(s1), g2 = grads_of(s2);
  for (std::size_t p = 0; p < g1.size(); ++p)
    for (std::size_t i = 0; i < g1[p].size(); ++i) EXPECT_NEAR(g1[p][i], g2[p][i], 1e-10) << s1.params[p].name;
}

TEST(Model, EvalLogitsIndependentOfBatchComposition) {
  auto s = make_model<float>(small_spec(16), 2);
  const auto set = toy_set(7, 16, 1);
  const auto all = predict_logits(s, set.images);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const auto one = predict_logits(s, std::vector<ImageU8>{set.images[i]});
    EXPECT_NEAR(one[0], all[2 * i], 1e-6);
    EXPECT_NEAR(one[1], all[2 * i + 1], 1e-6);
  }
}

TEST(Freeze, TailSemantics) {
  auto s = make_model<double>(ModelSpec{}, 1);  // layers: stem, 3 blocks, head
  freeze(s, 2);
  EXPECT_EQ(s.frozen, (std::vector<bool>{true, true, true, false, false}));
  freeze(s, 1);
  EXPECT_EQ(s.frozen, (std::vector<bool>{true, true, true, true, false}));
  freeze(s, 3);
  EXPECT_EQ(s.frozen, (std::vector<bool>{true, true, false, false, false}));
  freeze(s, 4);
  EXPECT_EQ(s.frozen, (std::vector<bool>{false, false, false, false, false}));
  EXPECT_THROW(freeze(s, 0), std::invalid_argument);
  EXPECT_THROW(freeze(s, 5), std::invalid_argument);
  unfreeze_all(s);
  EXPECT_EQ(s.frozen, std::vector<bool>(5, false));
}

TEST(Freeze, FrozenLayersBitwiseUnchangedByTraining) {
  auto s = make_model<float>(small_spec(16), 9);
  freeze(s, 2);
  const auto before = frozen_checksum(s);
  std::vector<std::vector<float>> frozen_values;
  for (const auto& p : s.params)
    if (s.is_frozen(p.layer)) frozen_values.push_back(p.value);
  const auto train = toy_set(24, 16, 3), val = toy_set(8, 16, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.adam.lr = 1e-2;
  const auto r = train_run(s, train, val, cfg);
  EXPECT_EQ(frozen_checksum(r.best), before);
  std::size_t k = 0;
  for (const auto& p : r.best.params)
    if (r.best.is_frozen(p.layer)) {
      EXPECT_EQ(p.value, frozen_values[k++]) << p.name;
    }
  // the trainable head moved
  EXPECT_NE(r.best.param("head.weight").value, s.param("head.weight").value);
}

TEST(Train, ZeroEpochsReturnsInputState) {
  const auto s = make_model<float>(small_spec(16), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train_run(s, toy_set(4, 16, 1), toy_set(4, 16, 2), cfg);
  EXPECT_FALSE(r.best_epoch.has_value());
  EXPECT_EQ(serialize(r.best), serialize(s));
}

TEST(Train, DeterministicForFixedSeed) {
  const auto s = make_model<float>(small_spec(16), 1);
  const auto train = toy_set(20, 16, 5), val = toy_set(6, 16, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const auto a = train_run(s, train, val, cfg), b = train_run(s, train, val, cfg);
  EXPECT_EQ(state_checksum(a.best), state_checksum(b.best));
  cfg.seed = 2;
  const auto c = train_run(s, train, val, cfg);
  EXPECT_NE(state_checksum(a.best), state_checksum(c.best));
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  const auto s = make_model<float>(small_spec(16), 11);
  const auto train = toy_set(40, 16, 7), val = toy_set(10, 16, 8), test = toy_set(20, 16, 9);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.adam.lr = 1e-2;
  const auto r = train_run(s, train, val, cfg);
  ASSERT_TRUE(r.best_epoch.has_value());
  EXPECT_DOUBLE_EQ(evaluate(r.best, test).balanced, 100.0);
  EXPECT_EQ(r.history.size(), 20u);
}

TEST(Train, RejectsEmptySets) {
  const auto s = make_model<float>(small_spec(16), 1);
  EXPECT_THROW(train_run(s, PreparedSet{}, toy_set(2, 16, 1), TrainConfig{}), std::invalid_argument);
}

TEST(Accuracy, PerLabelAndBalanced) {
  const std::vector<std::size_t> labels = {0, 0, 0, 0, 1, 1};
  const std::vector<std::size_t> pred = {0, 0, 0, 1, 1, 0};
  const auto a = accuracy_from_predictions(labels, pred);
  EXPECT_DOUBLE_EQ(a.f1, 75.0);
  EXPECT_DOUBLE_EQ(a.f2, 50.0);
  EXPECT_DOUBLE_EQ(a.balanced, 62.5);
  const std::vector<std::size_t> only_f1 = {0, 0};
  EXPECT_THROW(accuracy_from_predictions(only_f1, only_f1), std::invalid_argument);
}

TEST(Confidence, SoftmaxOfPredictedClass) {
  const auto c = confidence_from_logits(0.0, 2.0);
  EXPECT_EQ(c.label, Label::kF2);
  EXPECT_NEAR(c.prob, std::exp(2.0) / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(c.prob, 0.8808, 1e-4);
  EXPECT_DOUBLE_EQ(confidence_from_logits(1.0, 1.0).prob, 0.5);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  auto s = make_model<float>(small_spec(16), 4);
  freeze(s, 2);
  s.step = 17;
  s.params[0].m[0] = 0.25f;
  const auto path = std::filesystem::temp_directory_path() / "dcf_test.ckpt";
  save_checkpoint(path, s);
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(serialize(back), serialize(s));
  EXPECT_EQ(back.frozen, s.frozen);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(frozen_checksum(back), frozen_checksum(s));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFile) {
  auto bytes = serialize(make_model<float>(small_spec(16), 4));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize<float>(bytes), std::runtime_error);
  auto truncated = serialize(make_model<float>(small_spec(16), 4));
  truncated.resize(truncated.size() / 2);
  EXPECT_THROW(deserialize<float>(truncated), std::runtime_error);
}
