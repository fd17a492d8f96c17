#include "framepick/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace framepick {
namespace {

AgentState random_state(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0, 1);
  QualityVector q(n);
  for (auto& x : q) x = u(rng);
  HistoryVector h(n, 0);
  const int rounds = static_cast<int>(rng() % 6);
  for (int r = 0; r < rounds; ++r) ++h[rng() % n];
  return make_state(q, h, rounds);
}

double q_at(const QNetworkParams& p, const AgentState& s, std::size_t a) { return forward(p, s)[a]; }

TEST(Forward, SingleFrame) {
  const auto p = init_params(NetworkShape{}, 1);
  EXPECT_EQ(forward(p, make_state({0.3}, {0}, 0)).size(), 1u);
}

TEST(Forward, ZeroParamsGiveIdenticalOutputs) {
  QNetworkParams p;
  p.views().b2() = 0.25;
  std::mt19937_64 rng(2);
  const auto q = forward(p, random_state(rng, 9));
  for (double x : q) EXPECT_EQ(x, 0.25);
}

TEST(Forward, OrderSensitive) {
  const auto p = init_params(NetworkShape{}, 3);
  const auto s = make_state({0.1, 0.5, 0.9, 0.2}, {1, 0, 0, 0}, 1);
  const auto r = make_state({0.2, 0.9, 0.5, 0.1}, {0, 0, 0, 1}, 1);
  auto qs = forward(p, s);
  auto qr = forward(p, r);
  std::reverse(qr.begin(), qr.end());
  bool differs = false;
  for (std::size_t i = 0; i < qs.size(); ++i) differs |= std::abs(qs[i] - qr[i]) > 1e-9;
  EXPECT_TRUE(differs);
}

TEST(Forward, DeterministicAndLengthAgnostic) {
  const auto p = init_params(NetworkShape{}, 4);
  std::mt19937_64 rng(4);
  for (int n : {1, 2, 25, 80}) {
    const auto s = random_state(rng, n);
    const auto a = forward(p, s);
    EXPECT_EQ(a.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(a, forward(p, s));
  }
}

TEST(Forward, NonFiniteParameterNamesLayer) {
  auto p = init_params(NetworkShape{}, 5);
  p.views().b2() = std::nan("");
  try {
    forward(p, make_state({0.3, 0.4}, {0, 0}, 0));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), "head");
  }
}

TEST(ArgmaxFrame, LowestIndexOnTies) {
  EXPECT_EQ(argmax_frame({1.0, 3.0, 3.0}).value, 1u);
  EXPECT_EQ(argmax_frame({0.0, 0.0, 0.0}).value, 0u);
  EXPECT_THROW(argmax_frame({}), DimensionError);
}

TEST(LossAndGrad, ZeroAtPrediction) {
  const auto p = init_params(NetworkShape{}, 6);
  std::mt19937_64 rng(6);
  const auto s = random_state(rng, 7);
  const auto r = loss_and_grad(p, s, FrameIndex{3}, q_at(p, s, 3));
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grads.values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LossAndGrad, QuadraticInError) {
  const auto p = init_params(NetworkShape{}, 7);
  std::mt19937_64 rng(7);
  const auto s = random_state(rng, 7);
  const double q = q_at(p, s, 2);
  const double l1 = loss_and_grad(p, s, FrameIndex{2}, q - 0.3).loss;
  const double l2 = loss_and_grad(p, s, FrameIndex{2}, q - 0.6).loss;
  EXPECT_NEAR(l2, 4.0 * l1, 1e-12);
}

TEST(LossAndGrad, OutOfRangeAction) {
  const auto p = init_params(NetworkShape{}, 8);
  EXPECT_THROW(loss_and_grad(p, make_state({0.1}, {0}, 0), FrameIndex{1}, 0.0), IndexError);
}

// Central differences of the squared error computed from forward() alone.
TEST(LossAndGrad, MatchesFiniteDifferences) {
  constexpr double kStep = 1e-5;
  constexpr int kDraws = 100;
  constexpr int kCoordsPerBlock = 6;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int draw = 0; draw < kDraws; ++draw) {
    auto p = init_params(NetworkShape{}, 100 + draw);
    const int n = 1 + static_cast<int>(rng() % 12);
    const auto s = random_state(rng, n);
    const std::size_t a = rng() % n;
    const double target = std::normal_distribution<double>(0, 1)(rng);
    const auto analytic = loss_and_grad(p, s, FrameIndex{a}, target).grads;

    const auto o = p.shape().offsets();
    const std::vector<std::pair<std::size_t, std::size_t>> blocks{
        {o.we, o.be}, {o.be, o.cell[0]}, {o.cell[0], o.cell[1]}, {o.cell[1], o.w1},
        {o.w1, o.b1}, {o.b1, o.w2},      {o.w2, o.b2},           {o.b2, o.total}};
    for (auto [lo, hi] : blocks) {
      for (int k = 0; k < kCoordsPerBlock; ++k) {
        const auto i = static_cast<Eigen::Index>(lo + rng() % (hi - lo));
        const double saved = p.values()(i);
        p.values()(i) = saved + kStep;
        const double up = std::pow(q_at(p, s, a) - target, 2);
        p.values()(i) = saved - kStep;
        const double down = std::pow(q_at(p, s, a) - target, 2);
        p.values()(i) = saved;
        const double numeric = (up - down) / (2 * kStep);
        const double exact = analytic.values()(i);
        const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
        worst = std::max(worst, std::abs(numeric - exact) / scale);
      }
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(LossAndGrad, AccumulateScalesByWeight) {
  const auto p = init_params(NetworkShape{}, 9);
  std::mt19937_64 rng(9);
  const auto s = random_state(rng, 5);
  const auto single = loss_and_grad(p, s, FrameIndex{1}, 0.5).grads;
  GradientBundle acc(p.shape());
  accumulate_loss_and_grad(p, s, FrameIndex{1}, 0.5, acc, 0.25);
  EXPECT_LE((acc.values() - 0.25 * single.values()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  auto p = init_params(NetworkShape{}, 10);
  const auto before = p;
  AdamState adam(p.shape());
  adam.first_moment.setConstant(0.5);
  adam.second_moment.setConstant(0.5);
  // A nonzero first moment moves parameters, so check the pure-zero case
  // separately from the decay.
  AdamState fresh(p.shape());
  adam_step(p, GradientBundle(p.shape()), fresh, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(fresh.step_count, 1);

  auto q = before;
  adam_step(q, GradientBundle(q.shape()), adam, 0.0);
  EXPECT_NEAR(adam.first_moment(0), 0.45, 1e-15);
  EXPECT_NEAR(adam.second_moment(0), 0.4995, 1e-15);
}

TEST(Adam, FirstStepClosedForm) {
  auto p = init_params(NetworkShape{}, 11);
  const auto before = p.values();
  GradientBundle g(p.shape());
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0, 1e-2);
  for (Eigen::Index i = 0; i < g.values().size(); ++i) g.values()(i) = nd(rng);
  AdamState adam(p.shape());
  const double lr = 1e-3;
  adam_step(p, g, adam, lr);
  for (Eigen::Index i = 0; i < g.values().size(); ++i) {
    // m_hat = g, v_hat = g^2 after bias correction.
    const double gi = g.values()(i);
    const double expected = before(i) - lr * gi / (std::abs(gi) + 1e-8);
    ASSERT_NEAR(p.values()(i), expected, 1e-15);
  }
}

TEST(Adam, Deterministic) {
  auto a = init_params(NetworkShape{}, 12);
  auto b = a;
  std::mt19937_64 rng(12);
  const auto s = random_state(rng, 6);
  const auto g = loss_and_grad(a, s, FrameIndex{0}, 1.0).grads;
  AdamState sa(a.shape()), sb(b.shape());
  adam_step(a, g, sa, 1e-4);
  adam_step(b, g, sb, 1e-4);
  EXPECT_EQ(a, b);
}

TEST(Adam, ShapeMismatch) {
  auto p = init_params(NetworkShape{}, 13);
  AdamState adam(p.shape());
  EXPECT_THROW(adam_step(p, GradientBundle(NetworkShape{2, 8, 8, 8}), adam, 1e-3), DimensionError);
}

class ParamFile : public ::testing::Test {
 protected:
  std::filesystem::path path = std::filesystem::temp_directory_path() / "framepick_qnet_test.fpqn";
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(ParamFile, RoundTripIsBitExact) {
  const auto p = init_params(NetworkShape{2, 16, 24, 12}, 14);
  FeatureSpec spec;
  spec.history_scale = 8.0;
  spec.use_history = false;
  save_params(p, path, spec);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.params, p);
  EXPECT_EQ(ck.features, spec);
}

TEST_F(ParamFile, TruncatedFileRaises) {
  const auto bytes = encode_params(init_params(NetworkShape{}, 15));
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_params(bytes.substr(0, cut)), FormatError) << cut;
  }
}

TEST_F(ParamFile, WrongMagicNamesExpected) {
  auto bytes = encode_params(init_params(NetworkShape{}, 16));
  bytes[0] = 'X';
  try {
    decode_params(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("FPQN"), std::string::npos);
  }
}

TEST_F(ParamFile, TrailingBytesRaise) {
  EXPECT_THROW(decode_params(encode_params(init_params(NetworkShape{}, 17)) + "x"), FormatError);
}

TEST_F(ParamFile, MissingFileRaises) { EXPECT_THROW(load_params(path), Error); }

}  // namespace
}  // namespace framepick
