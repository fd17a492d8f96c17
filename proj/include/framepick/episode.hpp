#pragma once

// Core value types shared by the simulator, trainer, policies and the
// evaluation harness. Frame indices are zero-based everywhere; reports add
// one only when rendering for people.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "framepick/error.hpp"

namespace framepick {

struct FrameIndex {
  std::size_t value = 0;

  constexpr FrameIndex() = default;
  constexpr explicit FrameIndex(std::size_t v) : value(v) {}
  auto operator<=>(const FrameIndex&) const = default;
};

using QualityVector = std::vector<double>;
// Raw recommendation counts; normalization happens at the network input.
using HistoryVector = std::vector<int>;

class AgentState {
 public:
  AgentState() = default;

  const QualityVector& quality() const& noexcept { return quality_; }
  QualityVector quality() && noexcept { return std::move(quality_); }
  const HistoryVector& history() const& noexcept { return history_; }
  HistoryVector history() && noexcept { return std::move(history_); }
  int round() const noexcept { return round_; }
  std::size_t n_frames() const noexcept { return quality_.size(); }

  // [q_0..q_{N-1}, h_0..h_{N-1}]
  std::vector<double> flattened() const {
    std::vector<double> out;
    out.reserve(2 * quality_.size());
    out.insert(out.end(), quality_.begin(), quality_.end());
    for (int h : history_) out.push_back(static_cast<double>(h));
    return out;
  }

  bool operator==(const AgentState&) const = default;

 private:
  friend AgentState make_state(QualityVector, HistoryVector, int, int);

  QualityVector quality_;
  HistoryVector history_;
  int round_ = 0;
};

/// Builds the agent state (quality concatenated with history).
///
/// `initial_annotations` is the number of annotations that happened before
/// round 0 (the environment's seed annotation), so that
/// sum(history) == round + initial_annotations.
inline AgentState make_state(QualityVector quality, HistoryVector history, int round,
                             int initial_annotations = 0) {
  if (quality.size() != history.size()) {
    throw DimensionError("quality has " + std::to_string(quality.size()) +
                         " entries but history has " + std::to_string(history.size()));
  }
  if (round < 0) throw ConsistencyError("negative round " + std::to_string(round));
  for (double q : quality) {
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quality entry outside [0,1]");
  }
  long long sum = 0;
  for (int h : history) {
    if (h < 0) throw ConsistencyError("negative history count");
    sum += h;
  }
  if (sum != static_cast<long long>(round) + initial_annotations) {
    throw ConsistencyError("history sums to " + std::to_string(sum) + " but round is " +
                           std::to_string(round) + " (+" +
                           std::to_string(initial_annotations) + " initial)");
  }
  AgentState s;
  s.quality_ = std::move(quality);
  s.history_ = std::move(history);
  s.round_ = round;
  return s;
}

// Per-frame quality is the mean over the K objects in the frame.
inline double aggregate_object_quality(std::span<const double> per_object) {
  if (per_object.empty()) throw DomainError("no objects to aggregate");
  double sum = 0.0;
  for (double q : per_object) {
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("object quality outside [0,1]");
    sum += q;
  }
  return sum / static_cast<double>(per_object.size());
}

// Per-round performance proxy: mean quality over frames.
inline double mean_quality(std::span<const double> q) {
  if (q.empty()) throw DomainError("mean of empty quality vector");
  return std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
}

struct EpisodeConfig {
  int n_frames = 2;
  int horizon = 8;
  int n_objects = 1;
  // Start index of every segment; the first entry is always 0.
  std::vector<int> segment_boundaries{0};
  std::vector<double> difficulty;
  std::vector<double> info_value;
  double propagation_scale = 10.0;        // lambda, frames
  double env_gain = 0.5;                  // eta
  double novelty_decay = 0.5;             // rho
  double cross_segment_attenuation = 0.5; // beta
  double obs_noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Test hook: disables the fixed-magnitude transition noise.
  bool transition_noise = true;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid episode config: " + m); };
    if (n_frames < 2) fail("n_frames must be >= 2");
    if (horizon < 1) fail("horizon must be >= 1");
    if (n_objects < 1) fail("n_objects must be >= 1");
    if (segment_boundaries.empty() || segment_boundaries.front() != 0)
      fail("segment_boundaries must start at 0");
    for (std::size_t i = 1; i < segment_boundaries.size(); ++i) {
      if (segment_boundaries[i] <= segment_boundaries[i - 1]) fail("segment_boundaries not increasing");
    }
    if (segment_boundaries.back() >= n_frames) fail("segment boundary out of range");
    if (difficulty.size() != static_cast<std::size_t>(n_frames)) fail("difficulty length != n_frames");
    if (info_value.size() != static_cast<std::size_t>(n_frames)) fail("info_value length != n_frames");
    for (double d : difficulty)
      if (!(d >= 0.0 && d <= 1.0)) fail("difficulty outside [0,1]");
    for (double v : info_value)
      if (!(v > 0.0 && v <= 1.0)) fail("info_value outside (0,1]");
    if (!(propagation_scale > 0.0) || !std::isfinite(propagation_scale)) fail("propagation_scale must be > 0");
    if (!(env_gain >= 0.0 && env_gain <= 1.0)) fail("env_gain outside [0,1]");
    if (!(novelty_decay > 0.0 && novelty_decay <= 1.0)) fail("novelty_decay outside (0,1]");
    if (!(cross_segment_attenuation >= 0.0 && cross_segment_attenuation <= 1.0))
      fail("cross_segment_attenuation outside [0,1]");
    if (!(obs_noise_sigma >= 0.0) || !std::isfinite(obs_noise_sigma)) fail("obs_noise_sigma must be >= 0");
  }
};

struct RoundRecord {
  int round = 0;
  FrameIndex action;
  double mean_quality_before = 0.0;
  double mean_quality_after = 0.0;
  std::optional<double> goal_reward;
  double aux_reward = 0.0;
};

struct EpisodeResult {
  std::vector<FrameIndex> actions;
  std::vector<double> scores;
  double auc = 0.0;
};

}  // namespace framepick
