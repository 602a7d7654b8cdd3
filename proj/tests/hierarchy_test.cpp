#include <gtest/gtest.h>

#include <numeric>

#include "phonodec/hierarchy.hpp"
#include "test_support.hpp"

using namespace phonodec;
using phonodec::testing::tiny_config;
using phonodec::testing::tiny_dataset;

namespace {

struct Splits {
  std::vector<EegTrial> train, dev;
};

Splits split_of(const Dataset& d, std::uint64_t seed = 1) {
  const auto p = random_split(d.trials.size(), {0.7, 0.3, 0.0}, seed);
  return {select(d.trials, p.train), select(d.trials, p.dev)};
}

const TrainedPipeline& shared_pipeline() {
  static const TrainedPipeline p = [] {
    const auto s = split_of(tiny_dataset());
    return train_pipeline(s.train, s.dev, tiny_config());
  }();
  return p;
}

}  // namespace

TEST(LabelTable, EveryCategorySplitsTheInventory) {
  for (PhonCategory c : kAllCategories) {
    int present = 0;
    for (Token t : kAllTokens) present += has_category(t, c);
    EXPECT_GT(present, 0) << category_name(c);
    EXPECT_LT(present, 11) << category_name(c);
  }
}

TEST(LabelTable, IdenticalLabelPairs) {
  auto same = [](Token a, Token b) {
    for (PhonCategory c : kAllCategories)
      if (has_category(a, c) != has_category(b, c)) return false;
    return true;
  };
  EXPECT_TRUE(same(Token::N, Token::GNAW));
  EXPECT_TRUE(same(Token::PAT, Token::POT));
  int pairs = 0;
  for (std::size_t i = 0; i < kNumTokens; ++i)
    for (std::size_t j = i + 1; j < kNumTokens; ++j) pairs += same(token_from_index(i), token_from_index(j));
  EXPECT_EQ(pairs, 2);
}

TEST(Phase1, RejectsSingleClassTask) {
  const auto d = tiny_dataset();
  std::vector<EegTrial> vowels;
  for (const auto& t : d.trials)
    if (t.token == Token::IY || t.token == Token::UW) vowels.push_back(t);
  try {
    train_phase1(vowels, vowels, tiny_config());
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("single class"), std::string::npos) << e.what();
  }
}

TEST(Phase1, FitsItsTrainingSet) {
  const auto d = tiny_dataset();
  auto cfg = tiny_config();
  cfg.gbt.rounds = 40;
  cfg.gbt.row_subsample = 1.0;
  cfg.gbt.column_subsample = 1.0;
  cfg.tasks = {PhonCategory::Nasal};
  const auto r = train_phase1(d.trials, d.trials, cfg);
  ASSERT_EQ(r.dev_accuracy.size(), 1u);
  EXPECT_GE(r.dev_accuracy[0], 0.95);
}

TEST(Pipeline, LatentStackIsSixByBottleneck) {
  auto model = shared_pipeline().model;
  const auto d = tiny_dataset();
  const auto s = stack_latents(d.trials[0], model.phase1, 0);
  EXPECT_EQ(s.rows, 6u);
  EXPECT_EQ(s.width, 8u);
  EXPECT_EQ(s.values.size(), 48u);
  EXPECT_EQ(model.phase2.image_shape, (Shape{6, 8, 1}));
  EXPECT_EQ(model.bottleneck(), 8u);
}

TEST(Pipeline, ChannelsLayoutTransposes) {
  LatentStack s{2, 3, {1, 2, 3, 4, 5, 6}};
  const auto img = phase2_example(s, Phase2Layout::Image);
  const auto ch = phase2_example(s, Phase2Layout::Channels);
  EXPECT_EQ(img.image, (std::vector<float>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(ch.image, (std::vector<float>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(ch.sequence, img.sequence);
  EXPECT_EQ(phase2_image_shape(2, 3, Phase2Layout::Channels), (Shape{1, 3, 2}));
}

TEST(Pipeline, AblationDropsOneRow) {
  const auto s = split_of(tiny_dataset());
  auto cfg = tiny_config();
  cfg.tasks = {PhonCategory::Bilabial, PhonCategory::Nasal, PhonCategory::ConsonantPresent, PhonCategory::HighFrontIy,
               PhonCategory::HighBackUw};
  auto p = train_pipeline(s.train, s.dev, cfg);
  EXPECT_EQ(p.model.phase1.size(), 5u);
  EXPECT_EQ(p.model.phase2.image_shape, (Shape{5, 8, 1}));
  EXPECT_EQ(p.summary.phase1_dev_accuracy.size(), 5u);
}

TEST(Pipeline, PredictionIsADistribution) {
  auto model = shared_pipeline().model;
  for (const auto& t : tiny_dataset(99, 2).trials) {
    const auto p = predict_token(model, t);
    EXPECT_NEAR(std::accumulate(p.distribution.begin(), p.distribution.end(), 0.0), 1.0, 1e-9);
    EXPECT_EQ(p.token, token_from_index(static_cast<std::size_t>(
                           std::max_element(p.distribution.begin(), p.distribution.end()) - p.distribution.begin())));
    ASSERT_EQ(p.phonological.size(), 6u);
    for (double q : p.phonological) {
      EXPECT_GE(q, 0.0);
      EXPECT_LE(q, 1.0);
    }
  }
}

TEST(Pipeline, SameSeedSameModelAcrossThreadCounts) {
  const auto s = split_of(tiny_dataset());
  auto cfg = tiny_config();
  auto a = train_pipeline(s.train, s.dev, cfg);
  cfg.threads = 3;
  auto b = train_pipeline(s.train, s.dev, cfg);
  EXPECT_EQ(a.summary.phase1_dev_accuracy, b.summary.phase1_dev_accuracy);
  EXPECT_EQ(a.summary.phase2_dev_accuracy, b.summary.phase2_dev_accuracy);
  for (const auto& t : s.dev) {
    EXPECT_EQ(predict_token(a.model, t).distribution, predict_token(b.model, t).distribution);
  }
}

TEST(Pipeline, DifferentSeedDifferentModel) {
  const auto s = split_of(tiny_dataset());
  auto a = train_pipeline(s.train, s.dev, tiny_config(1));
  auto b = train_pipeline(s.train, s.dev, tiny_config(2));
  bool differ = false;
  for (const auto& t : s.dev) differ |= predict_token(a.model, t).distribution != predict_token(b.model, t).distribution;
  EXPECT_TRUE(differ);
}

TEST(Pipeline, AbsentTokenGetsZeroMass) {
  auto d = tiny_dataset();
  std::vector<EegTrial> train;
  for (const auto& t : d.trials)
    if (t.token != Token::POT) train.push_back(t);
  auto p = train_pipeline(train, train, tiny_config());
  EXPECT_EQ(p.model.phase2.classes.size(), 10u);
  const auto pred = predict_token(p.model, d.trials.front());
  EXPECT_EQ(pred.distribution[index_of(Token::POT)], 0.0);
}

TEST(Pipeline, RejectsChannelMismatch) {
  auto model = shared_pipeline().model;
  SynthSpec spec;
  spec.channels = 5;
  spec.samples = 64;
  spec.trials_per_token = 2;
  const auto other = generate_synthetic(spec);
  EXPECT_THROW(predict_token(model, other.trials[0]), ValidationError);
}

TEST(Pipeline, RejectsMixedBottlenecks) {
  auto model = shared_pipeline().model;
  const auto s = split_of(tiny_dataset());
  auto cfg = tiny_config();
  cfg.dae.bottleneck = 4;
  cfg.tasks = {PhonCategory::Nasal};
  auto odd = train_phase1(s.train, s.dev, cfg);
  std::vector<TaskModel> mixed = model.phase1;
  mixed.push_back(odd.models[0]);
  EXPECT_THROW(stack_latents(s.dev[0], mixed, 0), ValidationError);
}

TEST(Pipeline, RejectsEmptyDev) {
  const auto s = split_of(tiny_dataset());
  EXPECT_THROW(train_pipeline(s.train, {}, tiny_config()), ValidationError);
}

TEST(Direct, PredictsAToken) {
  const auto s = split_of(tiny_dataset());
  auto m = train_direct(s.train, tiny_config());
  EXPECT_EQ(m.classes.size(), 11u);
  EXPECT_EQ(m.image_shape, (Shape{4, 4, 1}));
  for (const auto& t : s.dev) EXPECT_LT(index_of(predict_direct(m, t, 0)), kNumTokens);
}

TEST(Config, Validation) {
  auto c = tiny_config();
  c.tasks = {PhonCategory::Nasal, PhonCategory::Nasal};
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.dae.bottleneck = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.split = {0.0, 0.5, 0.5};
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.split = {0.8, 0.2, 0.2};
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(tiny_config().validate());
}
