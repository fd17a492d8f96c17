#include "framepick/episode.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "framepick/eval.hpp"

namespace framepick {
namespace {

TEST(MakeState, FlattensQualityThenHistory) {
  auto s = make_state({0.5, 0.5}, {0, 0}, 0);
  EXPECT_EQ(s.flattened(), (std::vector<double>{0.5, 0.5, 0, 0}));

  auto t = make_state({0.2, 0.9, 0.4}, {1, 0, 1}, 2);
  EXPECT_EQ(t.flattened(), (std::vector<double>{0.2, 0.9, 0.4, 1, 0, 1}));
  EXPECT_EQ(t.round(), 2);
}

TEST(MakeState, RejectsLengthMismatch) { EXPECT_THROW(make_state({0.2}, {0, 0}, 0), DimensionError); }

TEST(MakeState, RejectsHistoryRoundMismatch) {
  EXPECT_THROW(make_state({0.2, 0.3}, {1, 1}, 1), ConsistencyError);
  // The environment's seed annotation is accounted for explicitly.
  EXPECT_NO_THROW(make_state({0.2, 0.3}, {1, 1}, 1, 1));
}

TEST(MakeState, FlattenedLengthIsTwiceFrames) {
  std::mt19937_64 rng(3);
  for (int n = 1; n <= 40; ++n) {
    QualityVector q(n);
    HistoryVector h(n, 0);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& x : q) x = u(rng);
    h[n / 2] = 2;
    EXPECT_EQ(make_state(q, h, 2).flattened().size(), static_cast<std::size_t>(2 * n));
  }
}

TEST(AggregateObjectQuality, MeanOverObjects) {
  EXPECT_DOUBLE_EQ(aggregate_object_quality(std::vector<double>{0.4, 0.6}), 0.5);
  EXPECT_DOUBLE_EQ(aggregate_object_quality(std::vector<double>{0.7}), 0.7);
  EXPECT_DOUBLE_EQ(aggregate_object_quality(std::vector<double>{0.0, 1.0, 0.5}), 0.5);
  EXPECT_THROW(aggregate_object_quality(std::vector<double>{}), DomainError);
}

TEST(AggregateObjectQuality, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 7);
    for (auto& x : v) x = u(rng);
    const double m = aggregate_object_quality(v);
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(aggregate_object_quality(v), m, 1e-15);
    EXPECT_GE(m, *std::min_element(v.begin(), v.end()) - 1e-15);
    EXPECT_LE(m, *std::max_element(v.begin(), v.end()) + 1e-15);
  }
}

TEST(MeanQuality, Examples) {
  EXPECT_DOUBLE_EQ(mean_quality(std::vector<double>{0.5, 0.5, 0.5}), 0.5);
  EXPECT_DOUBLE_EQ(mean_quality(std::vector<double>{0.0, 1.0}), 0.5);
  EXPECT_DOUBLE_EQ(mean_quality(std::vector<double>{0.25}), 0.25);
  EXPECT_THROW(mean_quality(std::vector<double>{}), DomainError);
}

TEST(EpisodeConfig, ValidateCatchesBadFields) {
  EpisodeConfig c;
  c.n_frames = 3;
  c.difficulty = {0.1, 0.2, 0.3};
  c.info_value = {0.1, 0.9, 0.2};
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.segment_boundaries = {0, 2, 1};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.segment_boundaries = {0, 3};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.info_value[0] = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.propagation_scale = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(EpisodeResult, AucIsMeanOfScores) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(1 + trial % 9);
    for (auto& s : scores) s = u(rng);
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= scores.size();
    EXPECT_NEAR(auc(scores), mean, 1e-12);
  }
}

}  // namespace
}  // namespace framepick
