#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "phonodec/data_io.hpp"
#include "test_support.hpp"

using namespace phonodec;
using phonodec::testing::scratch_dir;
using phonodec::testing::slurp;
using phonodec::testing::tiny_config;
using phonodec::testing::tiny_dataset;

TEST(RawFloat, RoundTripAndSizeCheck) {
  const auto dir = scratch_dir("raw");
  const std::vector<double> v{0.0, -1.5, 3.25, 1e-3};
  write_f32_file(dir / "x.f32", v);
  EXPECT_EQ(std::filesystem::file_size(dir / "x.f32"), 16u);
  const auto r = read_f32_file(dir / "x.f32", 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i], static_cast<double>(static_cast<float>(v[i])));
  // little-endian 1.0f = 00 00 80 3f
  write_f32_file(dir / "one.f32", std::vector<double>{1.0});
  EXPECT_EQ(slurp(dir / "one.f32"), std::string("\x00\x00\x80\x3f", 4));
  EXPECT_THROW(read_f32_file(dir / "x.f32", 5), ValidationError);
  EXPECT_THROW(read_f32_file(dir / "missing.f32", 4), ValidationError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  const auto d = tiny_dataset();
  const auto dir = scratch_dir("dataset");
  write_dataset(dir, d);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.channels, 4u);
  EXPECT_EQ(back.samples, 64u);
  EXPECT_EQ(back.subjects, d.subjects);
  EXPECT_EQ(back.records, d.records);
  ASSERT_EQ(back.trials.size(), d.trials.size());
  for (std::size_t i = 0; i < d.trials.size(); ++i) {
    EXPECT_EQ(back.trials[i].data, d.trials[i].data);
    EXPECT_EQ(back.trials[i].token, d.trials[i].token);
    EXPECT_EQ(back.trials[i].subject_id, d.trials[i].subject_id);
  }
  EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(d));
  EXPECT_EQ(load_dataset(dir / "manifest.json").trials.size(), d.trials.size());
}

TEST(Dataset, ErrorsNameTheTrial) {
  const auto d = tiny_dataset();
  const auto dir = scratch_dir("dataset_bad");
  write_dataset(dir, d);
  std::filesystem::resize_file(dir / d.records[3].file, 12);
  try {
    load_dataset(dir);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(d.records[3].id), std::string::npos) << e.what();
  }
}

TEST(Dataset, ManifestValidation) {
  const auto dir = scratch_dir("manifest");
  auto write = [&](const std::string& text) { write_text_file(dir / "manifest.json", text); };
  write("{ not json");
  EXPECT_THROW(read_manifest(dir), ValidationError);
  write(R"({"format_version":2,"channels":4,"samples":8,"trials":[]})");
  EXPECT_THROW(read_manifest(dir), ValidationError);
  write(R"({"format_version":1,"channels":4,"samples":8,"trials":[],"extra":1})");
  EXPECT_THROW(read_manifest(dir), ValidationError);
  write(R"({"format_version":1,"channels":4,"samples":8,"trials":[{"subject":"a","token":"iy"}]})");
  EXPECT_THROW(read_manifest(dir), ValidationError);
  write(R"({"format_version":1,"channels":4,"samples":8,"trials":[{"subject":"a","token":"zz","file":"x.f32"}]})");
  EXPECT_THROW(load_dataset(dir), ValidationError);
  write(R"({"format_version":1,"channels":4,"samples":8,"trials":[{"subject":"a","token":"iy","file":"x.f32"}]})");
  EXPECT_THROW(load_dataset(dir), ValidationError);
  std::vector<double> values(32, 0.5);
  values[5] = std::numeric_limits<double>::quiet_NaN();
  write_f32_file(dir / "x.f32", values);
  EXPECT_THROW(load_dataset(dir), ValidationError);
  values[5] = 0.25;
  write_f32_file(dir / "x.f32", values);
  const auto d = load_dataset(dir);
  ASSERT_EQ(d.records.size(), 1u);
  EXPECT_EQ(d.records[0].id, "x");
  EXPECT_THROW(load_dataset(dir / "nope"), ValidationError);
}

TEST(Synth, DeterministicAndSeedDependent) {
  const auto a = tiny_dataset(11);
  const auto b = tiny_dataset(11);
  const auto c = tiny_dataset(12);
  ASSERT_EQ(a.trials.size(), 66u);
  EXPECT_EQ(a.records, b.records);
  for (std::size_t i = 0; i < a.trials.size(); ++i) EXPECT_EQ(a.trials[i].data, b.trials[i].data);
  EXPECT_NE(a.trials[0].data, c.trials[0].data);
}

TEST(Synth, BalancedTokensAndSubjects) {
  const auto d = tiny_dataset(1, 6, 3);
  std::map<std::string, int> per_token, per_subject;
  for (const auto& r : d.records) {
    ++per_token[r.token];
    ++per_subject[r.subject_id];
  }
  EXPECT_EQ(per_token.size(), 11u);
  for (const auto& [_, n] : per_token) EXPECT_EQ(n, 6);
  EXPECT_EQ(per_subject, (std::map<std::string, int>{{"s01", 22}, {"s02", 22}, {"s03", 22}}));
}

// Noise-free orthogonal mixing: the covariance of each class lies in its own
// subspace, so the between-class operator-norm distance dwarfs the largest
// within-class distance once trials are long enough.
TEST(Synth, ExplicitMixingSeparatesCovariances) {
  SynthSpec s;
  s.channels = 4;
  s.samples = 8192;
  s.trials_per_token = 5;
  s.subjects = 1;
  s.noise = 0.0;
  s.subject_gain_spread = 0.0;
  for (Token t : kAllTokens) s.mixing[t] = {{1, 0}, {0, 1}, {0, 0}, {0, 0}};
  s.mixing[Token::UW] = {{0, 0}, {0, 0}, {1, 0}, {0, 1}};
  const auto d = generate_synthetic(s);
  auto cov = [](const EegTrial& t) {
    const auto m = channel_cross_covariance(t, 0);
    Eigen::Matrix4d out;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.at(i, j);
    return out;
  };
  auto op_norm = [](const Eigen::Matrix4d& m) { return Eigen::JacobiSVD<Eigen::Matrix4d>(m).singularValues()(0); };
  std::vector<Eigen::Matrix4d> iy, uw;
  for (const auto& t : d.trials) {
    if (t.token == Token::IY) iy.push_back(cov(t));
    if (t.token == Token::UW) uw.push_back(cov(t));
  }
  double within = 0.0, between = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < iy.size(); ++i)
    for (std::size_t j = 0; j < iy.size(); ++j) {
      within = std::max({within, op_norm(iy[i] - iy[j]), op_norm(uw[i] - uw[j])});
      between = std::min(between, op_norm(iy[i] - uw[j]));
    }
  EXPECT_GE(between, 10.0 * within) << between << " vs " << within;
}

TEST(Synth, MergedTokensShareMixing) {
  SynthSpec s;
  s.merge_groups = {{Token::PAT, Token::POT}};
  EXPECT_EQ(mixing_for(s, Token::POT), planted_mixing(s, Token::PAT));
  EXPECT_NE(mixing_for(s, Token::IY), mixing_for(s, Token::UW));
}

TEST(Synth, SpecJson) {
  const auto s = synth_spec_from_json(nlohmann::json::parse(
      R"({"seed":4,"channels":6,"merge_groups":[["pat","pot"]],"mixing":{"iy":[[1],[0],[0],[0],[0],[0]]}})"));
  EXPECT_EQ(s.seed, 4u);
  EXPECT_EQ(s.channels, 6u);
  ASSERT_EQ(s.merge_groups.size(), 1u);
  EXPECT_EQ(s.merge_groups[0], (std::vector<Token>{Token::PAT, Token::POT}));
  EXPECT_EQ(s.mixing.at(Token::IY).size(), 6u);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"chanels":6})")), ValidationError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"merge_groups":[["pat","xx"]]})")), ValidationError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"channels":1})")), ValidationError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"mixing":{"iy":[[1]]}})")), ValidationError);
}

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config(42);
  c.tasks = {PhonCategory::Voiced, PhonCategory::Nasal};
  c.phase2_layout = Phase2Layout::Channels;
  c.tcnn.head = TemporalHead::GlobalAverage;
  c.split = {0.6, 0.2, 0.2};
  c.threads = 4;
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.cnn, c.cnn);
  EXPECT_EQ(back.tcnn, c.tcnn);
  EXPECT_EQ(back.dae, c.dae);
  EXPECT_EQ(back.tasks, c.tasks);
  EXPECT_EQ(back.split, c.split);
  EXPECT_EQ(back.gbt.rounds, c.gbt.rounds);
}

TEST(Config, DefaultsAndRejections) {
  const auto d = config_from_json(nlohmann::json::object());
  EXPECT_EQ(d.dae.bottleneck, 256u);
  EXPECT_EQ(d.tasks.size(), 6u);
  EXPECT_EQ(d.gbt.max_depth, 10);
  EXPECT_EQ(config_from_json(nlohmann::json::parse(R"({"dae":{"bottleneck":16}})")).dae.bottleneck, 16u);
  for (const char* bad : {R"({"sed":1})", R"({"cnn":{"filter":[1,2]}})", R"({"cnn":{"filters":[1]}})",
                          R"({"tasks":["nasal","lips"]})", R"({"split":[0.5,0.5]})", R"({"seed":"x"})",
                          R"({"phase2_layout":"grid"})", R"({"tcnn":{"head":"max"}})", R"({"dae":{"bottleneck":0}})"}) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(bad)), ValidationError) << bad;
  }
}

namespace {

const TrainedPipeline& trained() {
  static const TrainedPipeline p = [] {
    const auto d = tiny_dataset();
    const auto s = random_split(d.trials.size(), {0.7, 0.3, 0.0}, 1);
    auto cfg = tiny_config();
    cfg.dae.bottleneck = 16;
    return train_pipeline(select(d.trials, s.train), select(d.trials, s.dev), cfg);
  }();
  return p;
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesPredictions) {
  auto model = trained().model;
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(model, dir / "m.ckpt", {{"dataset", "abc"}});
  auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.meta["dataset"], "abc");
  EXPECT_EQ(ck.model.bottleneck(), 16u);
  EXPECT_EQ(ck.model.phase2.image_shape, (Shape{6, 16, 1}));
  for (const auto& t : tiny_dataset(77, 2).trials) {
    const auto a = predict_token(model, t);
    const auto b = predict_token(ck.model, t);
    EXPECT_EQ(a.distribution, b.distribution);
    EXPECT_EQ(a.phonological, b.phonological);
  }
  EXPECT_EQ(serialize_checkpoint(ck.model, ck.meta), slurp(dir / "m.ckpt"));
}

TEST(Checkpoint, DetectsCorruption) {
  const auto bytes = serialize_checkpoint(trained().model);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), ValidationError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 10)), ValidationError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(flipped), ValidationError);
  auto wrong_version = bytes;
  wrong_version[8] = 9;
  try {
    deserialize_checkpoint(wrong_version);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(deserialize_checkpoint("hello world, definitely not a model"), ValidationError);
  EXPECT_THROW(load_checkpoint("/nonexistent/m.ckpt"), ValidationError);
}
