#include <gtest/gtest.h>

#include "dcf/config.hpp"

using namespace dcf;
using nlohmann::json;

namespace {

json minimal() { return {{"schema_version", 1}}; }

}  // namespace

TEST(Config, DefaultsFromMinimalDocument) {
  const auto c = parse_run_config(minimal());
  EXPECT_EQ(c.base_seed, 1u);
  EXPECT_EQ(c.model.input_side, 64u);
  EXPECT_EQ(c.train.epochs, 30u);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.train.adam.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.adam.eps, 1e-8);
  EXPECT_EQ(c.psa_schemes.size(), 6u);
  EXPECT_FALSE(c.psa_train_per_scheme);
  EXPECT_EQ(c.tps_settings, (std::vector<std::size_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(c.freeze_tail, 2u);
  // the test split follows the generator's tail block
  EXPECT_DOUBLE_EQ(c.split_a.test_fraction, c.gen.a.tail_fraction);
  EXPECT_DOUBLE_EQ(c.split_b.test_fraction, c.gen.b.tail_fraction);
  const auto t = c.tps_config();
  ASSERT_EQ(t.architectures.size(), 1u);
  EXPECT_EQ(t.architectures[0].spec.stages.size(), 3u);
}

TEST(Config, SchemaVersionRequired) {
  EXPECT_THROW(parse_run_config(json::object()), ConfigError);
  EXPECT_THROW(parse_run_config({{"schema_version", 2}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"schema_version", "1"}}), ConfigError);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  auto j = minimal();
  j["epochs"] = 3;
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = minimal();
  j["train"] = {{"learning_rate", 0.1}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = minimal();
  j["data"] = {{"generate", {{"A", {{"f1", 3}}}}}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = minimal();
  j["tps"] = {{"architectures", {{{"name", "x"}, {"depth", 4}}}}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  const std::vector<json> bad = {
      {{"train", {{"lr", 0.0}}}},
      {{"train", {{"epochs", "ten"}}}},
      {{"train", {{"batch_size", -4}}}},
      {{"psa", {{"schemes", {"zero", "magenta"}}}}},
      {{"psa", {{"schemes", json::array()}}}},
      {{"psa", {{"rule", "max"}}}},
      {{"tps", {{"settings", {0}}}}},
      {{"tps", {{"settings", {1, 1}}}}},
      {{"tps", {{"freeze_tail", 0}}}},
      {{"tps", {{"padding_override", {{"S7", "zero"}}}}}},
      {{"tps", {{"architectures", {{{"name", "a/b"}}}}}}},
      {{"data", {{"split", {{"A", {{"test_fraction", 1.0}}}}}}}},
      {{"data", {{"generate", {{"aspect_min", 0.5}}}}}},
      {{"explain", {{"profile_bins", 100}}}},
  };
  for (auto j : bad) {
    j["schema_version"] = 1;
    EXPECT_THROW(parse_run_config(j), ConfigError) << j.dump();
  }
}

TEST(Config, NormalizedFormRoundTrips) {
  auto j = minimal();
  j["base_seed"] = 9;
  j["train"] = {{"epochs", 3}, {"batch_size", 8}};
  j["psa"] = {{"schemes", {"zero", "reflection"}}, {"rule", "min-then-sum"}};
  j["tps"] = {{"settings", {1, 2}},
              {"padding", "grey"},
              {"padding_override", {{"3", "white"}}},
              {"architectures", {{{"name", "small"}, {"stages", {{4, 1}}}}}}};
  const auto c = parse_run_config(j);
  EXPECT_EQ(c.tps_padding, PaddingScheme::kGrey);
  EXPECT_EQ(c.padding_override.at(3), PaddingScheme::kWhite);
  ASSERT_EQ(c.architectures.size(), 1u);
  EXPECT_EQ(c.architectures[0].spec.stages.size(), 1u);
  const auto norm = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(norm)), norm);
  EXPECT_EQ(run_id(parse_run_config(norm)), run_id(c));
}

TEST(Config, RunIdTracksContent) {
  const auto a = parse_run_config(minimal());
  EXPECT_EQ(run_id(a), run_id(parse_run_config(minimal())));
  EXPECT_EQ(run_id(a).size(), 16u);
  auto j = minimal();
  j["base_seed"] = 2;
  EXPECT_NE(run_id(parse_run_config(j)), run_id(a));
  // spelling out a default does not change the id
  j = minimal();
  j["train"] = {{"epochs", 30}};
  EXPECT_EQ(run_id(parse_run_config(j)), run_id(a));
}

TEST(Config, FullScaleChangesOnlyInputSide) {
  auto c = parse_run_config(minimal());
  auto before = to_json(c);
  apply_full_scale(c);
  EXPECT_EQ(c.model.input_side, kFullScaleInputSide);
  before["model"]["input_side"] = kFullScaleInputSide;
  EXPECT_EQ(to_json(c), before);
}
