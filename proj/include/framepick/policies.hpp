#pragma once

// Frame-selection strategies behind one interface: the baselines (Random,
// Linspace, Worst under oracle or estimated quality), the learned agent and
// a human (any callback that picks a frame).

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/qnet.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"

namespace framepick {

enum class PolicyKind { Random, Linspace, WorstOracle, WorstWild, Agent, Human };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Random: return "random";
    case PolicyKind::Linspace: return "linspace";
    case PolicyKind::WorstOracle: return "worst-oracle";
    case PolicyKind::WorstWild: return "worst-wild";
    case PolicyKind::Agent: return "agent";
    case PolicyKind::Human: return "human";
  }
  return "unknown";
}

// Builds a state from an observation, inferring how many annotations
// preceded round 0 (0 for bare states, 1 for environment states).
inline AgentState observed_state(const QualityVector& observation, const HistoryVector& history, int round) {
  const long long total = std::accumulate(history.begin(), history.end(), 0LL);
  const long long initial = total - round;
  if (initial < 0) throw ConsistencyError("history has fewer annotations than rounds");
  return make_state(observation, history, round, static_cast<int>(initial));
}

inline FrameIndex argmin_frame(const QualityVector& q) {
  if (q.empty()) throw DimensionError("argmin of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] < q[best]) best = i;
  return FrameIndex{best};
}

// Evenly spaced picks: round r of T lands on round_half_up((r+1) N / (T+1)).
inline FrameIndex linspace_frame(int round, int n_frames, int horizon) {
  const double pos = static_cast<double>(round + 1) * n_frames / static_cast<double>(horizon + 1);
  const auto idx = static_cast<long long>(std::floor(pos + 0.5));
  return FrameIndex{static_cast<std::size_t>(std::clamp<long long>(idx, 0, n_frames - 1))};
}

class Policy {
 public:
  using HumanChooser = std::function<FrameIndex(const QualityVector&, const HistoryVector&, int round)>;

  static Policy random(std::uint64_t seed) {
    Policy p(PolicyKind::Random);
    p.rng_.seed(seed);
    return p;
  }
  static Policy linspace() { return Policy(PolicyKind::Linspace); }
  static Policy worst_oracle() { return Policy(PolicyKind::WorstOracle); }
  static Policy worst_wild() { return Policy(PolicyKind::WorstWild); }
  static Policy agent(std::shared_ptr<const Checkpoint> checkpoint) {
    Policy p(PolicyKind::Agent);
    p.checkpoint_ = std::move(checkpoint);
    return p;
  }
  static Policy agent(QNetworkParams params, FeatureSpec spec = {}) {
    return agent(std::make_shared<const Checkpoint>(Checkpoint{std::move(params), spec}));
  }
  static Policy human(HumanChooser chooser) {
    Policy p(PolicyKind::Human);
    p.human_ = std::move(chooser);
    return p;
  }

  PolicyKind kind() const noexcept { return kind_; }
  std::string name() const { return to_string(kind_); }
  const Checkpoint* checkpoint() const noexcept { return checkpoint_.get(); }

  // Worst-oracle always sees true quality and worst-wild always sees the
  // estimate; everything else follows the evaluation setting.
  ObservationMode observation_mode(ObservationMode setting) const {
    if (kind_ == PolicyKind::WorstOracle) return ObservationMode::Oracle;
    if (kind_ == PolicyKind::WorstWild) return ObservationMode::Wild;
    return setting;
  }

  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  FrameIndex select(const QualityVector& observation, const HistoryVector& history, int round, int n_frames,
                    int horizon) {
    if (observation.size() != static_cast<std::size_t>(n_frames) || history.size() != observation.size()) {
      throw DimensionError("observation/history length does not match n_frames");
    }
    switch (kind_) {
      case PolicyKind::Random: return FrameIndex{uniform_index(rng_, static_cast<std::size_t>(n_frames))};
      case PolicyKind::Linspace: return linspace_frame(round, n_frames, horizon);
      case PolicyKind::WorstOracle:
      case PolicyKind::WorstWild: return argmin_frame(observation);
      case PolicyKind::Agent: {
        if (!checkpoint_) throw ConfigError("agent policy requires network parameters");
        const auto q = forward(checkpoint_->params, observed_state(observation, history, round), checkpoint_->features);
        return argmax_frame(q);
      }
      case PolicyKind::Human: {
        if (!human_) throw ConfigError("human policy has no chooser attached");
        return human_(observation, history, round);
      }
    }
    throw ConfigError("unknown policy kind");
  }

 private:
  explicit Policy(PolicyKind kind) : kind_(kind) {}

  PolicyKind kind_;
  Rng rng_;
  std::shared_ptr<const Checkpoint> checkpoint_;
  HumanChooser human_;
};

}  // namespace framepick
