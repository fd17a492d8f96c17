#include "framepick/policies.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace framepick {
namespace {

FrameIndex pick(Policy& p, const QualityVector& q, int round = 0, int horizon = 8) {
  HistoryVector h(q.size(), 0);
  h[0] = round;
  return p.select(q, h, round, static_cast<int>(q.size()), horizon);
}

TEST(Worst, PicksArgmin) {
  auto p = Policy::worst_oracle();
  EXPECT_EQ(pick(p, {0.9, 0.3, 0.7}).value, 1u);
  EXPECT_EQ(pick(p, {0.4, 0.2, 0.2}).value, 1u);
}

TEST(Worst, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  auto p = Policy::worst_wild();
  for (int trial = 0; trial < 200; ++trial) {
    QualityVector q(2 + trial % 20);
    for (auto& x : q) x = u(rng);
    QualityVector sq = q, ex = q;
    for (auto& x : sq) x = x * x;
    for (auto& x : ex) x = std::exp(x) / 3.0;
    EXPECT_EQ(pick(p, q), pick(p, sq));
    EXPECT_EQ(pick(p, q), pick(p, ex));
  }
}

TEST(Worst, ObservationModeIsFixed) {
  EXPECT_EQ(Policy::worst_oracle().observation_mode(ObservationMode::Wild), ObservationMode::Oracle);
  EXPECT_EQ(Policy::worst_wild().observation_mode(ObservationMode::Oracle), ObservationMode::Wild);
  EXPECT_EQ(Policy::linspace().observation_mode(ObservationMode::Wild), ObservationMode::Wild);
}

TEST(Linspace, EightyFramesEightRounds) {
  // (r+1)*80/9 = 8.89, 17.78, 26.67, 35.56, 44.44, 53.33, 62.22, 71.11
  const std::vector<std::size_t> expected{9, 18, 27, 36, 44, 53, 62, 71};
  for (int r = 0; r < 8; ++r) EXPECT_EQ(linspace_frame(r, 80, 8).value, expected[r]) << r;
}

TEST(Linspace, RoundsHalvesUp) {
  // 1 * 3 / 2 = 1.5 -> 2
  EXPECT_EQ(linspace_frame(0, 3, 1).value, 2u);
  EXPECT_EQ(linspace_frame(0, 1, 8).value, 0u);
}

TEST(Linspace, IgnoresObservation) {
  auto p = Policy::linspace();
  for (int r = 0; r < 8; ++r) {
    EXPECT_EQ(pick(p, QualityVector(40, 0.1), r), pick(p, QualityVector(40, 0.9), r));
  }
}

TEST(Random, SeededSequencesRepeat) {
  auto a = Policy::random(42);
  auto b = Policy::random(42);
  auto c = Policy::random(43);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto x = pick(a, QualityVector(30, 0.5));
    EXPECT_EQ(x, pick(b, QualityVector(30, 0.5)));
    differs |= x != pick(c, QualityVector(30, 0.5));
    EXPECT_LT(x.value, 30u);
  }
  EXPECT_TRUE(differs);
}

TEST(Agent, EqualsDirectForwardArgmax) {
  const auto params = init_params(NetworkShape{2, 8, 12, 8}, 5);
  FeatureSpec spec;
  spec.history_scale = 8.0;
  auto p = Policy::agent(params, spec);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + trial % 15;
    QualityVector q(n);
    for (auto& x : q) x = u(rng);
    HistoryVector h(n, 0);
    h[rng() % n] = 1;
    const int round = trial % 3;
    for (int r = 0; r < round; ++r) ++h[rng() % n];
    const auto direct = argmax_frame(forward(params, make_state(q, h, round, 1), spec));
    EXPECT_EQ(p.select(q, h, round, n, 8), direct);
  }
}

TEST(Agent, MissingParamsRaise) {
  auto p = Policy::agent(std::shared_ptr<const Checkpoint>{});
  EXPECT_THROW(pick(p, {0.1, 0.2}), ConfigError);
}

TEST(Human, DelegatesToChooser) {
  auto p = Policy::human([](const QualityVector& q, const HistoryVector&, int) { return FrameIndex{q.size() - 1}; });
  EXPECT_EQ(pick(p, {0.1, 0.2, 0.3}).value, 2u);
}

TEST(Select, LengthMismatchRaises) {
  auto p = Policy::linspace();
  EXPECT_THROW(p.select({0.1, 0.2}, {0, 0}, 0, 3, 8), DimensionError);
}

}  // namespace
}  // namespace framepick
