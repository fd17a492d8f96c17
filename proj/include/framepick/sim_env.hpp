#pragma once

// Surrogate interactive-refinement environment. It plays the role of the
// VOS algorithm as the MDP transition function: annotating frame a lifts
// every frame n by
//
//   dq_n = eta * v_a * rho^{h_a} * exp(-dist(n, a) / lambda) * (1 - q_n)
//
// plus a small fixed-magnitude transition noise. dist() adds N * beta per
// segment boundary crossed, so annotations barely propagate across shots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/rng.hpp"

namespace framepick {

enum class ObservationMode { Oracle, Wild };

inline std::string to_string(ObservationMode m) { return m == ObservationMode::Oracle ? "oracle" : "wild"; }

inline ObservationMode parse_observation_mode(const std::string& s) {
  if (s == "oracle" || s == "Oracle") return ObservationMode::Oracle;
  if (s == "wild" || s == "Wild") return ObservationMode::Wild;
  throw ConfigError("unknown observation mode '" + s + "' (expected oracle or wild)");
}

struct StepResult {
  AgentState state;
  bool done = false;
};

// Anything that can stand in as the transition function: the built-in
// simulator or a remote process speaking the line protocol.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual AgentState reset(const EpisodeConfig& config) = 0;
  virtual StepResult step(FrameIndex action) = 0;
  virtual QualityVector observe(ObservationMode mode) = 0;
};

inline constexpr double kInitialQualityBase = 0.35;
inline constexpr double kTransitionNoiseSigma = 0.005;

inline int segment_of(const EpisodeConfig& c, int frame) {
  auto it = std::upper_bound(c.segment_boundaries.begin(), c.segment_boundaries.end(), frame);
  return static_cast<int>(it - c.segment_boundaries.begin()) - 1;
}

// |n - a| plus N * beta for every segment boundary between the two frames.
inline double segment_distance(const EpisodeConfig& c, int n, int a) {
  const int crossings = std::abs(segment_of(c, n) - segment_of(c, a));
  return std::abs(n - a) + static_cast<double>(c.n_frames) * c.cross_segment_attenuation * crossings;
}

// First frame annotated before round 0: the most informative one.
inline int initial_frame(const EpisodeConfig& c) {
  return static_cast<int>(std::max_element(c.info_value.begin(), c.info_value.end()) - c.info_value.begin());
}

class SimEnv final : public Environment {
 public:
  SimEnv() = default;
  explicit SimEnv(const EpisodeConfig& config) { reset(config); }

  AgentState reset(const EpisodeConfig& config) override {
    config.validate();
    config_ = config;
    rng_.seed(derive_seed(config.seed, {0x7472616eULL}));
    const int n = config.n_frames;
    const int a0 = initial_frame(config);
    quality_.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double d = config.difficulty[i];
      const double k = std::exp(-segment_distance(config, i, a0) / config.propagation_scale);
      quality_[i] = (1.0 - d) * kInitialQualityBase + d * kInitialQualityBase * k;
    }
    history_.assign(n, 0);
    history_[a0] = 1;
    round_ = 0;
    live_ = true;
    return state();
  }

  StepResult step(FrameIndex action) override {
    require_live();
    if (round_ >= config_.horizon) {
      throw StateError("episode finished after " + std::to_string(round_) + " rounds");
    }
    const int n = config_.n_frames;
    if (action.value >= static_cast<std::size_t>(n)) {
      throw IndexError("frame " + std::to_string(action.value) + " out of range [0, " + std::to_string(n) + ")");
    }
    const int a = static_cast<int>(action.value);
    const double amplitude = config_.env_gain * config_.info_value[a] * std::pow(config_.novelty_decay, history_[a]);
    for (int i = 0; i < n; ++i) {
      const double k = std::exp(-segment_distance(config_, i, a) / config_.propagation_scale);
      const double lifted = quality_[i] + amplitude * k * (1.0 - quality_[i]);
      quality_[i] = std::min(1.0, config_.transition_noise ? add_truncated_noise(lifted) : lifted);
    }
    ++history_[a];
    ++round_;
    return {state(), round_ == config_.horizon};
  }

  QualityVector observe(ObservationMode mode) override {
    require_live();
    if (mode == ObservationMode::Oracle || config_.obs_noise_sigma == 0.0) return quality_;
    // Per-round substream so repeated observations within a round agree.
    Rng sub(derive_seed(config_.seed, {0x6f627376ULL, static_cast<std::uint64_t>(round_)}));
    QualityVector out(quality_.size());
    for (std::size_t i = 0; i < quality_.size(); ++i) {
      out[i] = std::clamp(quality_[i] + config_.obs_noise_sigma * normal(sub), 0.0, 1.0);
    }
    return out;
  }

  AgentState state() const { return make_state(quality_, history_, round_, 1); }

  // Overwrites the latent quality of a live episode; used to set up exact
  // scenarios (saturated regions, hand-computed examples).
  void set_true_quality(QualityVector q) {
    require_live();
    if (q.size() != quality_.size()) throw DimensionError("quality length does not match episode");
    for (double x : q)
      if (!(x >= 0.0 && x <= 1.0)) throw DomainError("quality entry outside [0,1]");
    quality_ = std::move(q);
  }

  const EpisodeConfig& config() const noexcept { return config_; }
  const QualityVector& true_quality() const noexcept { return quality_; }
  const HistoryVector& history() const noexcept { return history_; }
  int round() const noexcept { return round_; }
  bool done() const noexcept { return live_ && round_ == config_.horizon; }

 private:
  void require_live() const {
    if (!live_) throw StateError("environment used before reset");
  }

  // Normal(0, sigma^2) truncated to keep the result inside [0, 1].
  double add_truncated_noise(double x) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double y = x + kTransitionNoiseSigma * normal(rng_);
      if (y >= 0.0 && y <= 1.0) return y;
    }
    return std::clamp(x, 0.0, 1.0);
  }

  EpisodeConfig config_;
  QualityVector quality_;
  HistoryVector history_;
  int round_ = 0;
  bool live_ = false;
  Rng rng_;
};

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("pearson needs two equal samples of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// True per-frame qualities at the moments a selector observes them (before
// each of the `horizon` picks of uniform-random rollouts), concatenated until
// `samples` values.
inline std::vector<double> simulate_quality_population(const EpisodeConfig& config, std::size_t samples,
                                                       std::uint64_t seed) {
  std::vector<double> pop;
  pop.reserve(samples + config.n_frames);
  Rng pick(seed);
  SimEnv env;
  for (std::uint64_t episode = 0; pop.size() < samples; ++episode) {
    EpisodeConfig c = config;
    c.seed = derive_seed(seed, {episode});
    env.reset(c);
    for (int t = 0; t < c.horizon && pop.size() < samples; ++t) {
      pop.insert(pop.end(), env.true_quality().begin(), env.true_quality().end());
      env.step(FrameIndex{uniform_index(pick, c.n_frames)});
    }
  }
  pop.resize(samples);
  return pop;
}

inline constexpr std::size_t kCalibrationSamples = 100000;
inline constexpr double kCalibrationTolerance = 0.02;

/// Finds the observation noise sigma whose Wild observations correlate with
/// true quality at `target_pcc` over a simulated quality population.
///
/// The same standard-normal draws are reused for every candidate sigma, so
/// the correlation is a smooth decreasing function of sigma and bisection
/// converges.
inline double calibrate_noise(double target_pcc, const EpisodeConfig& config,
                              std::size_t samples = kCalibrationSamples) {
  if (!(target_pcc > 0.0 && target_pcc < 1.0)) {
    throw CalibrationError("target PCC must lie in (0, 1), got " + std::to_string(target_pcc));
  }
  config.validate();
  const auto truth = simulate_quality_population(config, samples, derive_seed(config.seed, {0x63616cULL}));
  std::vector<double> z(truth.size());
  Rng rng(derive_seed(config.seed, {0x6e6f6973ULL}));
  for (auto& v : z) v = normal(rng);

  std::vector<double> noisy(truth.size());
  auto pcc_at = [&](double sigma) {
    for (std::size_t i = 0; i < truth.size(); ++i) noisy[i] = std::clamp(truth[i] + sigma * z[i], 0.0, 1.0);
    return pearson_correlation(noisy, truth);
  };
  const auto [qmin, qmax] = std::minmax_element(truth.begin(), truth.end());
  if (*qmin == *qmax || pcc_at(0.0) < target_pcc) throw CalibrationError("quality population has no variance to correlate with");

  double lo = 0.0, hi = 0.01;
  while (pcc_at(hi) > target_pcc) {
    hi *= 2.0;
    if (hi > 1e3) throw CalibrationError("target PCC " + std::to_string(target_pcc) + " unattainable");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (pcc_at(mid) > target_pcc ? lo : hi) = mid;
  }
  const double sigma = 0.5 * (lo + hi);
  if (std::abs(pcc_at(sigma) - target_pcc) > kCalibrationTolerance) {
    throw CalibrationError("bisection did not reach target PCC " + std::to_string(target_pcc));
  }
  return sigma;
}

}  // namespace framepick
