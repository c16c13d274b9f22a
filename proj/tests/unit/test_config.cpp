#include <gtest/gtest.h>

#include "hli/config.hpp"
#include "hli/experiment.hpp"

namespace {

std::string error_of(const std::string& text) {
  try {
    hli::parse_config(text).validate();
  } catch (const hli::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const hli::ExperimentConfig c;
  const auto back = hli::parse_config(hli::to_ini(c));
  EXPECT_EQ(hli::to_ini(back), hli::to_ini(c));
  EXPECT_EQ(hli::config_hash(back), hli::config_hash(c));
}

TEST(Config, EditedValuesRoundTripExactly) {
  auto c = hli::parse_config(R"(
# comment
[train]
learning_rate = 0.00035
lr_schedule = 4:0.1, 8:0.01
[loss]
lambda_imi = 0.3
[erase]
fill = zero
points = random
[model]
channels = 4,8,8,16
)");
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 3.5e-4);
  ASSERT_EQ(c.train.lr_schedule.size(), 2u);
  EXPECT_EQ(c.train.lr_schedule[1].first, 8);
  EXPECT_EQ(c.train.erase.fill, hli::EraseFill::kZero);
  EXPECT_EQ(c.train.erase_points, hli::PointSource::kRandom);
  EXPECT_EQ(c.arch.channels, (std::vector<int>{4, 8, 8, 16}));
  c.train.momentum_ema = 0.1 + 0.2;  // not exactly representable in short form
  const auto back = hli::parse_config(hli::to_ini(c));
  EXPECT_EQ(back.train.momentum_ema, c.train.momentum_ema);
  EXPECT_EQ(hli::to_ini(back), hli::to_ini(c));
}

TEST(Config, DerivedArchitectureFollowsDataset) {
  const auto c = hli::parse_config("[dataset]\nn_identities_source = 10\nimage_height = 32\nimage_width = 16\n");
  EXPECT_EQ(c.arch.num_classes, 10);
  EXPECT_EQ(c.arch.height, 32);
  EXPECT_EQ(c.arch.width, 16);
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
  EXPECT_THROW(hli::parse_config("[train]\nlearning_rat = 1\n"), hli::ConfigError);
  EXPECT_THROW(hli::parse_config("[optim]\nlr = 1\n"), hli::ConfigError);
  EXPECT_THROW(hli::parse_config("[train]\nepochs_adapt = many\n"), hli::ConfigError);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(error_of("[train]\nlearning_rate = -0.1\n").find("learning_rate"), std::string::npos);
  EXPECT_NE(error_of("[ema]\nmomentum = 1.5\n").find("ema.momentum"), std::string::npos);
  EXPECT_NE(error_of("[erase]\nprob = 2\n").find("erase.prob"), std::string::npos);
  EXPECT_NE(error_of("[cluster]\nnum_clusters = 100000\n").find("num_clusters"), std::string::npos);
  EXPECT_NE(error_of("[model]\nchannels = 4,4\n").find("channels"), std::string::npos);
  EXPECT_NE(error_of("[train]\nlr_schedule = 5:0.1,3:0.1\n").find("lr_schedule"), std::string::npos);
}

TEST(Config, ZeroLearningRateIsAllowed) {
  EXPECT_EQ(error_of("[train]\nlearning_rate = 0\n"), "");
}

TEST(Config, HashTracksContent) {
  hli::ExperimentConfig a, b;
  EXPECT_EQ(hli::config_hash(a), hli::config_hash(b));
  EXPECT_EQ(hli::config_hash(a).size(), 16u);
  b.train.seed = 2;
  EXPECT_NE(hli::config_hash(a), hli::config_hash(b));
}

TEST(Config, WithSeedSetsBothSeeds) {
  const auto c = hli::with_seed(hli::ExperimentConfig{}, 17);
  EXPECT_EQ(c.dataset.seed, 17u);
  EXPECT_EQ(c.train.seed, 17u);
}

TEST(Config, ComponentLadder) {
  const hli::ExperimentConfig base;
  EXPECT_EQ(hli::apply_component(base, "alms").train.loss_weights.lambda_imi, 0.0);
  EXPECT_GT(hli::apply_component(base, "alms").train.loss_weights.lambda_sd, 0.0);
  EXPECT_EQ(hli::apply_component(base, "alms").train.erase.prob, 0.0);
  EXPECT_GT(hli::apply_component(base, "alms_aulm").train.erase.prob, 0.0);
  EXPECT_EQ(hli::to_ini(hli::apply_component(base, "hli")), hli::to_ini(base));
  EXPECT_THROW(hli::apply_component(base, "everything"), hli::Error);
}

TEST(Config, PointSourceParse) {
  EXPECT_EQ(hli::parse_point_source(hli::to_string(hli::PointSource::kAdaptive)), hli::PointSource::kAdaptive);
  EXPECT_THROW(hli::parse_point_source("center"), hli::Error);
}
