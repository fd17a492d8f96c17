#pragma once

// Rewards and one-step Q-learning targets.
//
// Goal reward compares final performance P with the distribution of P under
// uniformly random frame selection (mean mu, std sigma) on the same episode:
//   naive: (P - mu) / sigma
//   final: (P - (mu + sigma)) / sigma
// The auxiliary reward is +1 when the chosen frame is among the least
// recommended so far and -1 otherwise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"
#include "framepick/suite.hpp"

namespace framepick {

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kRewardScale = 0.1;   // delta
inline constexpr double kDiscount = 0.95;     // gamma
inline constexpr int kRandomRuns = 30;

struct RandomStats {
  int horizon = 0;
  double mu_hat = 0.0;
  double sigma_hat = kSigmaFloor;
  int n_runs = 0;
};

using StatsByHorizon = std::map<int, RandomStats>;

struct Transition {
  AgentState state;
  FrameIndex action;
  AgentState next_state;
  bool terminal = false;
  int horizon = 0;
  std::optional<double> goal_reward;
  double aux_reward = 0.0;
};

enum class GoalVariant { Naive, Final };

inline std::string to_string(GoalVariant v) { return v == GoalVariant::Naive ? "naive" : "final"; }

inline GoalVariant parse_goal_variant(const std::string& s) {
  if (s == "naive") return GoalVariant::Naive;
  if (s == "final") return GoalVariant::Final;
  throw ConfigError("unknown reward variant '" + s + "' (expected naive or final)");
}

/// Sample mean and unbiased standard deviation (floored) of a set of final
/// performances.
inline RandomStats summarize_performance(const std::vector<double>& p, int horizon) {
  if (p.size() < 2) throw ConfigError("random-policy statistics need at least 2 runs");
  const double n = static_cast<double>(p.size());
  double mean = 0.0;
  for (double x : p) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : p) ss += (x - mean) * (x - mean);
  RandomStats s;
  s.horizon = horizon;
  s.mu_hat = mean;
  s.sigma_hat = std::max(std::sqrt(ss / (n - 1.0)), kSigmaFloor);
  s.n_runs = static_cast<int>(p.size());
  return s;
}

struct FreshEnv {
  std::unique_ptr<Environment> env;
  AgentState initial;
};

// Produces an independent, already-reset environment for rollout `run`.
using EnvFactory = std::function<FreshEnv(std::size_t run)>;

inline EnvFactory sim_env_factory(EpisodeConfig config) {
  return [config = std::move(config)](std::size_t run) {
    EpisodeConfig c = config;
    c.seed = derive_seed(config.seed, {0x72616e64ULL, run});
    auto env = std::make_unique<SimEnv>();
    AgentState s = env->reset(c);
    return FreshEnv{std::move(env), std::move(s)};
  };
}

/// Mean/std of final performance P over `n_runs` uniform-random rollouts of
/// length `horizon`. Runs are independent and reduced in run order.
inline RandomStats random_policy_stats(const EnvFactory& factory, int horizon, int n_runs = kRandomRuns,
                                       std::uint64_t seed = 0) {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (n_runs < 2) throw ConfigError("n_runs must be >= 2");
  std::vector<double> finals;
  finals.reserve(n_runs);
  for (int run = 0; run < n_runs; ++run) {
    FreshEnv fresh = factory(static_cast<std::size_t>(run));
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(horizon), static_cast<std::uint64_t>(run)}));
    const std::size_t n = fresh.initial.n_frames();
    AgentState s = fresh.initial;
    for (int t = 0; t < horizon; ++t) s = fresh.env->step(FrameIndex{uniform_index(rng, n)}).state;
    finals.push_back(mean_quality(s.quality()));
  }
  return summarize_performance(finals, horizon);
}

inline StatsByHorizon random_stats_for_horizons(const EpisodeConfig& config, int max_horizon,
                                                int n_runs = kRandomRuns, std::uint64_t seed = 0) {
  EpisodeConfig c = config;
  c.horizon = std::max(c.horizon, max_horizon);
  auto factory = sim_env_factory(c);
  StatsByHorizon out;
  for (int t = 1; t <= max_horizon; ++t) out[t] = random_policy_stats(factory, t, n_runs, seed);
  return out;
}

inline double goal_reward(double performance, const RandomStats& stats, GoalVariant variant) {
  const double threshold = variant == GoalVariant::Naive ? stats.mu_hat : stats.mu_hat + stats.sigma_hat;
  return (performance - threshold) / stats.sigma_hat;
}

// Ties count: every frame in the argmin set of the history is rewarded.
inline double aux_reward(const HistoryVector& history, FrameIndex action) {
  if (action.value >= history.size()) throw IndexError("action out of range for history");
  const int least = *std::min_element(history.begin(), history.end());
  return history[action.value] == least ? 1.0 : -1.0;
}

// Scales for the two reward components; zeroing one gives the ablations.
struct RewardWeights {
  double goal = 1.0;
  double aux = 1.0;
};

/// Two-case action-value target. `target_q_next` is the target network's
/// value of the policy network's greedy action in the next state.
inline double q_target(const Transition& tr, double target_q_next, double delta = kRewardScale,
                       double gamma = kDiscount, RewardWeights weights = {}) {
  if (tr.terminal) {
    if (!tr.goal_reward) throw ConsistencyError("terminal transition without goal reward");
    return delta * weights.goal * *tr.goal_reward;
  }
  return delta * weights.aux * tr.aux_reward + gamma * target_q_next;
}

struct RolloutStep {
  AgentState state;       // before the action
  FrameIndex action;
  AgentState next_state;  // after the refinement
  double performance = 0.0;
};

/// Splits a T-step rollout into T sub-tasks of horizon 1..T. Step t yields a
/// terminal transition for the sub-task ending there and, when t < T, a
/// non-terminal one for the longer sub-tasks: 2T - 1 transitions in all.
///
/// With `task_decomposition` off only the full-horizon task is kept: T - 1
/// non-terminal transitions and one terminal one.
inline std::vector<Transition> decompose(const std::vector<RolloutStep>& rollout, const StatsByHorizon& stats,
                                         GoalVariant variant = GoalVariant::Final,
                                         bool task_decomposition = true) {
  const int T = static_cast<int>(rollout.size());
  std::vector<Transition> out;
  out.reserve(2 * rollout.size());
  auto stats_at = [&](int h) -> const RandomStats& {
    auto it = stats.find(h);
    if (it == stats.end()) throw ConfigError("no random-policy statistics for horizon " + std::to_string(h));
    return it->second;
  };
  for (int t = 1; t <= T; ++t) {
    const RolloutStep& step = rollout[t - 1];
    if (task_decomposition || t == T) {
      Transition term{step.state, step.action, step.next_state, true, t,
                      goal_reward(step.performance, stats_at(t), variant), aux_reward(step.state.history(), step.action)};
      out.push_back(std::move(term));
    }
    if (t < T) {
      Transition cont{step.state, step.action, step.next_state, false, T, std::nullopt,
                      aux_reward(step.state.history(), step.action)};
      out.push_back(std::move(cont));
    }
  }
  return out;
}

/// In-memory statistics cache keyed by (config hash, horizon, n_runs, seed),
/// persisted as {config_hash: {horizon: {mu_hat, sigma_hat, n_runs, seed}}}.
class StatsCache {
 public:
  using Key = std::tuple<std::uint64_t, int, int, std::uint64_t>;

  const RandomStats& get(const EpisodeConfig& config, int horizon, int n_runs = kRandomRuns, std::uint64_t seed = 0) {
    const Key key{config_hash(config), horizon, n_runs, seed};
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      ++hits_;
      return it->second;
    }
    EpisodeConfig c = config;
    c.horizon = std::max(c.horizon, horizon);
    auto [pos, _] = entries_.emplace(key, random_policy_stats(sim_env_factory(c), horizon, n_runs, seed));
    return pos->second;
  }

  StatsByHorizon get_all(const EpisodeConfig& config, int max_horizon, int n_runs = kRandomRuns,
                         std::uint64_t seed = 0) {
    StatsByHorizon out;
    for (int t = 1; t <= max_horizon; ++t) out[t] = get(config, t, n_runs, seed);
    return out;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t hits() const noexcept { return hits_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, s] : entries_) {
      const auto& [hash, horizon, n_runs, seed] = key;
      j[hex64(hash)][std::to_string(horizon)] = {
          {"mu_hat", s.mu_hat}, {"sigma_hat", s.sigma_hat}, {"n_runs", n_runs}, {"seed", seed}};
    }
    return j;
  }

  void merge_json(const nlohmann::json& j) {
    try {
      for (const auto& [hash_hex, per_h] : j.items()) {
        const std::uint64_t hash = std::stoull(hash_hex, nullptr, 16);
        for (const auto& [h, rec] : per_h.items()) {
          RandomStats s{std::stoi(h), rec.at("mu_hat").get<double>(), rec.at("sigma_hat").get<double>(),
                        rec.at("n_runs").get<int>()};
          entries_[Key{hash, s.horizon, s.n_runs, rec.at("seed").get<std::uint64_t>()}] = s;
        }
      }
    } catch (const std::exception& e) {
      throw FormatError(std::string("bad stats cache: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const { write_file(path, to_json().dump(1) + "\n"); }

  void load(const std::filesystem::path& path) {
    try {
      merge_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("stats cache " + path.string() + " is not valid JSON: " + e.what());
    }
  }

 private:
  std::map<Key, RandomStats> entries_;
  std::size_t hits_ = 0;
};

}  // namespace framepick
