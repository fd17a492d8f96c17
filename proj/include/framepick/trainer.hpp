#pragma once

// Double-DQN training: replay buffer, epsilon-greedy collection on cropped
// training windows, task-decomposed transitions and hard target syncs.

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/eval.hpp"
#include "framepick/policies.hpp"
#include "framepick/qnet.hpp"
#include "framepick/reward.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"
#include "framepick/suite.hpp"

namespace framepick {

// Fixed-capacity FIFO; the oldest transition is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 5760) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    ring_.reserve(capacity);
  }

  void push(Transition t) {
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(t));
    } else {
      ring_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  std::size_t size() const noexcept { return ring_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t total_pushed() const noexcept { return pushed_; }

  // i = 0 is the oldest entry still held.
  const Transition& operator[](std::size_t i) const { return ring_[(head_ + i) % ring_.size()]; }

  std::vector<const Transition*> sample(Rng& rng, std::size_t k) const {
    if (ring_.empty()) throw StateError("sampling from an empty replay buffer");
    std::vector<const Transition*> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(&ring_[uniform_index(rng, ring_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t pushed_ = 0;
  std::vector<Transition> ring_;
};

struct TrainConfig {
  double lr = 5e-6;
  int batch_size = 32;
  double eps_start = 0.7;
  double eps_end = 0.25;
  int eps_steps = 5000;
  int target_sync_period = 200;
  int t_train = 5;
  int subseq_len = 25;
  int episodes = 2000;
  std::uint64_t seed = 0;
  std::size_t replay_capacity = 5760;
  int warm_fill = 0;  // 0 means 10 * batch_size
  double delta = kRewardScale;
  double gamma = kDiscount;
  GoalVariant variant = GoalVariant::Final;
  RewardWeights weights{};
  bool task_decomposition = true;
  bool use_quality = true;
  bool use_history = true;
  NetworkShape shape{};
  int random_runs = kRandomRuns;
  // Validation: every eval_interval episodes the greedy agent is scored on
  // the validation suite; with keep_best the best-scoring weights are
  // returned instead of the last ones.
  int eval_interval = 0;
  int eval_horizon = kTestHorizon;
  bool keep_best = false;
  int checkpoint_interval = 0;
  std::filesystem::path checkpoint_path;

  // Desk-scale preset: trains in about ten minutes on one CPU core, with
  // windows spanning whole benchmark episodes.
  static TrainConfig desk_preset() {
    TrainConfig c;
    c.lr = 1e-4;
    c.episodes = 2000;
    c.subseq_len = 100;
    return c;
  }

  int effective_warm_fill() const { return warm_fill > 0 ? warm_fill : 10 * batch_size; }

  FeatureSpec features() const { return FeatureSpec{static_cast<double>(t_train), use_quality, use_history}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid training config: " + m); };
    if (!(lr > 0.0)) fail("lr must be positive");
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(eps_end > 0.0 && eps_end <= eps_start && eps_start <= 1.0)) fail("need 0 < eps_end <= eps_start <= 1");
    if (eps_steps < 1) fail("eps_steps must be positive");
    if (target_sync_period < 1) fail("target_sync_period must be positive");
    if (t_train < 1) fail("t_train must be positive");
    if (subseq_len < 2) fail("subseq_len must be >= 2");
    if (episodes < 1) fail("episodes must be positive");
    if (random_runs < 2) fail("random_runs must be >= 2");
    if (eval_interval < 0 || checkpoint_interval < 0) fail("intervals must be >= 0");
    if (!use_quality && !use_history) fail("at least one state component must be used");
    shape.validate();
  }
};

inline double epsilon(long long step, const TrainConfig& cfg) {
  const double u = static_cast<double>(std::clamp<long long>(step, 0, cfg.eps_steps)) / cfg.eps_steps;
  if (u >= 1.0) return cfg.eps_end;
  return cfg.eps_start * std::pow(cfg.eps_end / cfg.eps_start, u);
}

inline QNetworkParams sync_target(const QNetworkParams& policy) { return policy; }

struct CollectedEpisode {
  std::vector<Transition> transitions;
  std::vector<FrameIndex> actions;
  std::vector<double> performance;  // P_t after each step
  bool any_random = false;
};

/// Rolls out `cfg.t_train` steps with epsilon-greedy over the policy
/// network and decomposes the rollout into transitions.
inline CollectedEpisode collect_episode(Environment& env, const EpisodeConfig& config, const QNetworkParams& policy,
                                        double eps, const StatsByHorizon& stats, Rng& rng, const TrainConfig& cfg) {
  EpisodeConfig c = config;
  c.horizon = cfg.t_train;
  AgentState s = env.reset(c);
  const FeatureSpec spec = cfg.features();
  CollectedEpisode out;
  std::vector<RolloutStep> rollout;
  rollout.reserve(cfg.t_train);
  for (int t = 0; t < cfg.t_train; ++t) {
    FrameIndex a;
    if (uniform01(rng) < eps) {
      a = FrameIndex{uniform_index(rng, s.n_frames())};
      out.any_random = true;
    } else {
      a = argmax_frame(forward(policy, s, spec));
    }
    auto step = env.step(a);
    const double p = mean_quality(step.state.quality());
    rollout.push_back({s, a, step.state, p});
    out.actions.push_back(a);
    out.performance.push_back(p);
    s = std::move(step.state);
  }
  out.transitions = decompose(rollout, stats, cfg.variant, cfg.task_decomposition);
  return out;
}

struct LogEntry {
  int episode = 0;
  long long steps = 0;    // environment steps so far
  long long updates = 0;  // optimizer updates so far
  double mean_goal_reward = 0.0;
  double mean_aux_reward = 0.0;
  double eval_auc = 0.0;  // validation AUC when evaluated, else the rollout's own AUC
  bool validated = false;
  double epsilon = 0.0;
  double loss = 0.0;

  nlohmann::json to_json() const {
    return {{"episode", episode},         {"steps", steps},
            {"updates", updates},         {"mean_goal_reward", mean_goal_reward},
            {"mean_aux_reward", mean_aux_reward}, {"eval_auc", eval_auc},
            {"validated", validated},     {"epsilon", epsilon},
            {"loss", loss}};
  }
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  int workers = 1;
  std::optional<double> best_validation_auc;
  int best_episode = -1;
};

struct TrainResult {
  QNetworkParams params;
  FeatureSpec features;
  TrainingLog log;
};

/// Mean greedy-agent AUC over `suite` (oracle observations).
inline double validation_auc(const QNetworkParams& params, const FeatureSpec& spec,
                             const std::vector<EpisodeConfig>& suite, int horizon) {
  Policy agent = Policy::agent(params, spec);
  SimEnv env;
  double total = 0.0;
  for (const auto& c : suite) total += run_episode(env, c, agent, horizon, ObservationMode::Oracle).auc;
  return total / static_cast<double>(suite.size());
}

// One gradient step on a uniform mini-batch with double-Q targets. Returns
// the mean squared error of the batch.
inline double train_step(QNetworkParams& policy, const QNetworkParams& target, AdamState& adam,
                         const ReplayBuffer& buffer, Rng& rng, const TrainConfig& cfg) {
  const FeatureSpec spec = cfg.features();
  const auto batch = buffer.sample(rng, static_cast<std::size_t>(cfg.batch_size));
  GradientBundle grads(policy.shape());
  const double w = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Transition* tr : batch) {
    double next = 0.0;
    if (!tr->terminal) {
      const FrameIndex greedy = argmax_frame(forward(policy, tr->next_state, spec));
      next = forward(target, tr->next_state, spec)[greedy.value];
    }
    const double y = q_target(*tr, next, cfg.delta, cfg.gamma, cfg.weights);
    loss += w * accumulate_loss_and_grad(policy, tr->state, tr->action, y, grads, w, spec);
  }
  adam_step(policy, grads, adam, cfg.lr);
  return loss;
}

using LogSink = std::function<void(const LogEntry&)>;

/// Trains a policy network on windows cropped from `suite`.
inline TrainResult train(const TrainConfig& cfg, const std::vector<EpisodeConfig>& suite,
                         const std::vector<EpisodeConfig>& validation = {}, const LogSink& sink = {},
                         StatsCache* shared_cache = nullptr) {
  cfg.validate();
  if (suite.empty()) throw ConfigError("training suite is empty");
  if (cfg.eval_interval > 0 && validation.empty()) throw ConfigError("eval_interval set but no validation suite");

  Rng rng(derive_seed(cfg.seed, {0x747261696eULL}));
  StatsCache local_cache;
  StatsCache& cache = shared_cache ? *shared_cache : local_cache;
  const FeatureSpec spec = cfg.features();

  QNetworkParams policy = init_params(cfg.shape, derive_seed(cfg.seed, {0x696e6974ULL}));
  QNetworkParams target = sync_target(policy);
  AdamState adam(cfg.shape);
  ReplayBuffer buffer(cfg.replay_capacity);
  SimEnv env;

  TrainResult result{policy, spec, {}};
  std::optional<QNetworkParams> best;
  long long steps = 0, updates = 0;
  const auto warm = static_cast<std::size_t>(cfg.effective_warm_fill());

  for (int episode = 0; episode < cfg.episodes; ++episode) {
    const EpisodeConfig& base = suite[uniform_index(rng, suite.size())];
    EpisodeConfig window;
    if (base.n_frames > cfg.subseq_len) {
      const auto start = static_cast<int>(uniform_index(rng, base.n_frames - cfg.subseq_len + 1));
      window = crop_window(base, start, cfg.subseq_len, rng());
    } else {
      window = base;
      window.seed = rng();
    }
    window.horizon = cfg.t_train;
    const StatsByHorizon stats = cache.get_all(window, cfg.t_train, cfg.random_runs, cfg.seed);

    const bool warming = buffer.size() < warm;
    const double eps = warming ? 1.0 : epsilon(updates, cfg);
    auto collected = collect_episode(env, window, policy, eps, stats, rng, cfg);
    steps += cfg.t_train;

    LogEntry entry;
    entry.episode = episode;
    entry.epsilon = eps;
    int n_goal = 0, n_aux = 0;
    for (const auto& tr : collected.transitions) {
      if (tr.terminal) {
        entry.mean_goal_reward += *tr.goal_reward;
        ++n_goal;
      } else {
        entry.mean_aux_reward += tr.aux_reward;
        ++n_aux;
      }
    }
    if (n_goal) entry.mean_goal_reward /= n_goal;
    if (n_aux) entry.mean_aux_reward /= n_aux;
    entry.eval_auc = auc(collected.performance);
    for (auto& tr : collected.transitions) buffer.push(std::move(tr));

    if (!warming) {
      double loss = 0.0;
      for (int k = 0; k < cfg.t_train; ++k) {
        loss += train_step(policy, target, adam, buffer, rng, cfg) / cfg.t_train;
        ++updates;
        if (updates % cfg.target_sync_period == 0) target = sync_target(policy);
      }
      entry.loss = loss;
    }
    entry.steps = steps;
    entry.updates = updates;

    if (cfg.eval_interval > 0 && (episode + 1) % cfg.eval_interval == 0) {
      entry.eval_auc = validation_auc(policy, spec, validation, cfg.eval_horizon);
      entry.validated = true;
      if (!result.log.best_validation_auc || entry.eval_auc > *result.log.best_validation_auc) {
        result.log.best_validation_auc = entry.eval_auc;
        result.log.best_episode = episode;
        best = policy;
      }
    }
    if (cfg.checkpoint_interval > 0 && (episode + 1) % cfg.checkpoint_interval == 0 && !cfg.checkpoint_path.empty()) {
      save_params(policy, cfg.checkpoint_path, spec);
    }
    if (sink) sink(entry);
    result.log.entries.push_back(entry);
  }
  result.params = (cfg.keep_best && best) ? *best : policy;
  return result;
}

}  // namespace framepick
