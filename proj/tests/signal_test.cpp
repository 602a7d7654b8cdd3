#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "phonodec/rng.hpp"
#include "phonodec/signal.hpp"

namespace phonodec {
namespace {

EegTrial make_trial(std::size_t channels, std::size_t samples, std::vector<double> data) {
  EegTrial t;
  t.subject_id = "s01";
  t.channels = channels;
  t.samples = samples;
  t.data = std::move(data);
  return t;
}

EegTrial random_trial(std::size_t channels, std::size_t samples, Rng& rng) {
  std::vector<double> data(channels * samples);
  for (auto& v : data) v = rng.normal(0.0, 3.0) + 0.5;
  return make_trial(channels, samples, std::move(data));
}

// Expectation formula evaluated pair by pair: means first, then the averaged
// product of deviations at the requested lag.
double ccv_oracle(const EegTrial& x, std::size_t c1, std::size_t c2, int lag) {
  double mu1 = 0.0, mu2 = 0.0;
  for (std::size_t t = 0; t < x.samples; ++t) {
    mu1 += x.at(c1, t);
    mu2 += x.at(c2, t);
  }
  mu1 /= static_cast<double>(x.samples);
  mu2 /= static_cast<double>(x.samples);
  double s = 0.0;
  std::size_t n = 0;
  for (long t = 0; t < static_cast<long>(x.samples); ++t) {
    const long u = t + lag;
    if (u < 0 || u >= static_cast<long>(x.samples)) continue;
    s += (x.at(c1, static_cast<std::size_t>(t)) - mu1) * (x.at(c2, static_cast<std::size_t>(u)) - mu2);
    ++n;
  }
  return s / static_cast<double>(n);
}

double min_eigenvalue(const CovMatrix& m) {
  Eigen::MatrixXd a(m.order, m.order);
  for (std::size_t i = 0; i < m.order; ++i)
    for (std::size_t j = 0; j < m.order; ++j) a(i, j) = m.at(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

TEST(StandardizeChannels, RemovesMean) {
  const auto out = standardize_channels(make_trial(2, 3, {1, 2, 3, -1, 0, 1}));
  EXPECT_EQ(out.data, (std::vector<double>{-1, 0, 1, -1, 0, 1}));
}

TEST(StandardizeChannels, RandomTrialsAreZeroMeanWithVariancePreserved) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto trial = random_trial(1 + rng.below(8) + 1, 2 + rng.below(200), rng);
    const auto out = standardize_channels(trial);
    const auto before = channel_cross_covariance(trial);
    const auto after = channel_cross_covariance(out);
    for (std::size_t c = 0; c < trial.channels; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < trial.samples; ++t) mean += out.at(c, t);
      EXPECT_LT(std::abs(mean / trial.samples), 1e-9);
      EXPECT_NEAR(after.at(c, c), before.at(c, c), 1e-9 * (1 + before.at(c, c)));
    }
  }
}

TEST(StandardizeChannels, ConstantZeroTrialStaysZero) {
  const auto out = standardize_channels(make_trial(2, 4, std::vector<double>(8, 0.0)));
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(CrossCovariance, ConstantChannelsGiveZeroMatrix) {
  const auto m = channel_cross_covariance(make_trial(2, 4, {3, 3, 3, 3, -1, -1, -1, -1}));
  for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST(CrossCovariance, SingleChannelIsSampleVariance) {
  EegTrial t;
  t.channels = 1;
  t.samples = 4;
  t.data = {1, 2, 3, 6};
  const auto m = channel_cross_covariance(t);
  // mean 3, deviations -2 -1 0 3, population variance 14/4.
  EXPECT_DOUBLE_EQ(m.at(0, 0), 3.5);
}

TEST(CrossCovariance, ScaledChannelGivesRankOneMatrix) {
  Rng rng(4);
  std::vector<double> data(2 * 50);
  for (std::size_t t = 0; t < 50; ++t) {
    data[t] = rng.normal();
    data[50 + t] = 2.0 * data[t];
  }
  const auto m = channel_cross_covariance(make_trial(2, 50, data));
  const double v = m.at(0, 0);
  EXPECT_NEAR(m.at(0, 1), 2 * v, 1e-12);
  EXPECT_NEAR(m.at(1, 0), 2 * v, 1e-12);
  EXPECT_NEAR(m.at(1, 1), 4 * v, 1e-12);
  EXPECT_NEAR(m.at(0, 0) * m.at(1, 1) - m.at(0, 1) * m.at(1, 0), 0.0, 1e-10);
}

TEST(CrossCovariance, MatchesExpectationOracleAndIsPsd) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t channels = 2 + rng.below(7);
    const std::size_t samples = 2 + rng.below(63);
    const auto trial = random_trial(channels, samples, rng);
    const auto m = channel_cross_covariance(trial);
    for (std::size_t i = 0; i < channels; ++i)
      for (std::size_t j = 0; j < channels; ++j) {
        EXPECT_NEAR(m.at(i, j), ccv_oracle(trial, i, j, 0), 1e-10);
        EXPECT_EQ(m.at(i, j), m.at(j, i));
      }
    EXPECT_GE(min_eigenvalue(m), -1e-8 * m.trace());
  }
}

TEST(CrossCovariance, LaggedEntriesMatchOracle) {
  Rng rng(7);
  const auto trial = random_trial(4, 40, rng);
  for (int lag : {-5, -1, 1, 3, 39}) {
    const auto m = channel_cross_covariance(trial, lag);
    EXPECT_EQ(m.lag, lag);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(m.at(i, j), ccv_oracle(trial, i, j, lag), 1e-10);
  }
}

TEST(CrossCovariance, RejectsLagBeyondTrial) {
  Rng rng(1);
  const auto trial = random_trial(2, 10, rng);
  EXPECT_THROW(channel_cross_covariance(trial, 10), ValidationError);
  EXPECT_THROW(channel_cross_covariance(trial, -10), ValidationError);
}

TEST(CrossCovariance, InvariantToChannelOffsets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto trial = random_trial(5, 64, rng);
    auto shifted = trial;
    for (std::size_t c = 0; c < 5; ++c) {
      const double offset = rng.uniform(-100.0, 100.0);
      for (std::size_t t = 0; t < 64; ++t) shifted.at(c, t) += offset;
    }
    const auto a = channel_cross_covariance(trial);
    const auto b = channel_cross_covariance(shifted);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-9);
  }
}

TEST(LowerTriangularFlatten, LengthsAndOrder) {
  CovMatrix m61{61, 0, std::vector<double>(61 * 61, 1.0)};
  EXPECT_EQ(lower_triangular_flatten(m61).size(), 1891u);

  CovMatrix m2{2, 0, {1.0, 2.0, 2.0, 4.0}};
  EXPECT_EQ(lower_triangular_flatten(m2), (std::vector<double>{1.0, 2.0, 4.0}));

  CovMatrix m3{3, 0, {}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m3.values.push_back(10.0 * i + j);
  EXPECT_EQ(lower_triangular_flatten(m3), (std::vector<double>{0, 10, 11, 20, 21, 22}));
}

TEST(LowerTriangularFlatten, ReconstructionIsExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto m = channel_cross_covariance(random_trial(2 + rng.below(10), 30, rng));
    const auto flat = lower_triangular_flatten(m);
    EXPECT_EQ(flat.size(), m.order * (m.order + 1) / 2);
    EXPECT_EQ(symmetric_from_lower(flat).values, m.values);
  }
  EXPECT_THROW(symmetric_from_lower({1.0, 2.0}), ValidationError);
}

TEST(EegTrial, ValidateRejectsBadShapes) {
  EXPECT_THROW(make_trial(1, 4, {1, 2, 3, 4}).validate(), ValidationError);
  EXPECT_THROW(make_trial(2, 2, {1, 2, 3}).validate(), ValidationError);
  EXPECT_THROW(make_trial(2, 2, {1, 2, 3, std::nan("")}).validate(), ValidationError);
  EXPECT_NO_THROW(make_trial(2, 2, {1, 2, 3, 4}).validate());
}

}  // namespace
}  // namespace phonodec
