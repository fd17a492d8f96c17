#pragma once

// HTTP session service for human play. A person drives one episode per
// session; when it finishes, the same seeded episode is replayed under the
// baselines for comparison.
//
//   POST   /sessions                {episode_index, mode}
//   GET    /sessions/{id}
//   POST   /sessions/{id}/actions   {frame}
//   GET    /sessions/{id}/summary
//   DELETE /sessions/{id}

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/eval.hpp"
#include "framepick/policies.hpp"
#include "framepick/qnet.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"
#include "framepick/suite.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace framepick {

struct ServiceConfig {
  std::vector<EpisodeConfig> suite;
  std::uint64_t suite_hash = 0;
  std::shared_ptr<const Checkpoint> agent;
  std::filesystem::path session_log;
  int horizon = kTestHorizon;
  int random_repeats = 5;
  std::uint64_t seed = 0;
  // Holds the per-session lock this long inside each action; lets tests
  // provoke overlapping requests deterministically.
  std::chrono::milliseconds action_hold{0};
};

struct Reply {
  int status = 200;
  nlohmann::json body;
};

inline Reply error_reply(int status, const std::string& message) {
  return {status, {{"error", {{"status", status}, {"message", message}}}}};
}

class SessionStore {
 public:
  using Clock = std::chrono::steady_clock;

  explicit SessionStore(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.suite.empty()) throw ConfigError("service needs a non-empty episode suite");
    if (cfg_.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (cfg_.random_repeats < 1) throw ConfigError("random_repeats must be >= 1");
  }

  const ServiceConfig& config() const noexcept { return cfg_; }

  Reply create(const std::string& body) {
    nlohmann::json req;
    if (auto bad = parse_body(body, req)) return *bad;
    if (!req.contains("episode_index") || !req["episode_index"].is_number_integer()) {
      return error_reply(400, "episode_index must be an integer");
    }
    const auto index = req["episode_index"].get<long long>();
    if (index < 0 || index >= static_cast<long long>(cfg_.suite.size())) {
      return error_reply(422, "episode_index " + std::to_string(index) + " out of range [0, " +
                                  std::to_string(cfg_.suite.size()) + ")");
    }
    ObservationMode mode = ObservationMode::Oracle;
    if (req.contains("mode")) {
      if (!req["mode"].is_string()) return error_reply(400, "mode must be a string");
      try {
        mode = parse_observation_mode(req["mode"]);
      } catch (const ConfigError& e) {
        return error_reply(422, e.what());
      }
    }

    const std::uint64_t nonce = next_nonce_.fetch_add(1);
    auto s = std::make_shared<Session>();
    s->id = hex64(derive_seed(cfg_.seed, {0x73657373ULL, nonce}));
    s->episode_index = static_cast<int>(index);
    s->mode = mode;
    s->config = cfg_.suite[index];
    s->config.seed = derive_seed(cfg_.suite[index].seed, {static_cast<std::uint64_t>(index), nonce});
    s->config.horizon = cfg_.horizon;
    s->env.reset(s->config);
    s->created_at = std::chrono::system_clock::now();

    std::lock_guard<std::mutex> lk(s->mu);
    Reply r{201, view(*s)};
    r.body["n_frames"] = s->config.n_frames;
    r.body["horizon"] = cfg_.horizon;
    s->served_at = Clock::now();
    {
      std::lock_guard<std::mutex> g(mu_);
      sessions_[s->id] = s;
    }
    return r;
  }

  Reply get(const std::string& id) {
    auto s = find(id);
    if (!s) return error_reply(404, "unknown session " + id);
    std::lock_guard<std::mutex> lk(s->mu);
    Reply r{200, view(*s)};
    r.body["n_frames"] = s->config.n_frames;
    r.body["horizon"] = cfg_.horizon;
    s->served_at = Clock::now();
    return r;
  }

  Reply act(const std::string& id, const std::string& body) {
    const auto received = Clock::now();
    auto s = find(id);
    if (!s) return error_reply(404, "unknown session " + id);
    std::unique_lock<std::mutex> lk(s->mu, std::try_to_lock);
    if (!lk.owns_lock()) return error_reply(409, "another action is in progress for this session");
    if (cfg_.action_hold.count() > 0) std::this_thread::sleep_for(cfg_.action_hold);
    if (s->env.done()) return error_reply(409, "session is finished");

    nlohmann::json req;
    if (auto bad = parse_body(body, req)) return *bad;
    if (!req.contains("frame") || !req["frame"].is_number_integer()) return error_reply(400, "frame must be an integer");
    const auto frame = req["frame"].get<long long>();
    if (frame < 0 || frame >= s->config.n_frames) {
      return error_reply(422, "frame " + std::to_string(frame) + " out of range [0, " +
                                  std::to_string(s->config.n_frames) + ")");
    }

    s->latencies_ms.push_back(std::chrono::duration<double, std::milli>(received - s->served_at).count());
    const auto step = s->env.step(FrameIndex{static_cast<std::size_t>(frame)});
    s->actions.push_back(static_cast<int>(frame));
    s->scores.push_back(mean_quality(step.state.quality()));
    if (step.done) log_completed(*s);

    Reply r{200, view(*s)};
    r.body["done"] = step.done;
    s->served_at = Clock::now();
    return r;
  }

  Reply summary(const std::string& id) {
    auto s = find(id);
    if (!s) return error_reply(404, "unknown session " + id);
    std::unique_lock<std::mutex> lk(s->mu, std::try_to_lock);
    if (!lk.owns_lock()) return error_reply(409, "an action is in progress for this session");
    if (!s->env.done()) {
      return error_reply(409, "session not finished (" + std::to_string(s->env.round()) + "/" +
                                  std::to_string(cfg_.horizon) + " rounds)");
    }
    if (!s->summary) s->summary = build_summary(*s);
    return {200, *s->summary};
  }

  Reply remove(const std::string& id) {
    std::lock_guard<std::mutex> g(mu_);
    if (sessions_.erase(id) == 0) return error_reply(404, "unknown session " + id);
    return {200, {{"session_id", id}, {"deleted", true}}};
  }

  // Server-side only; never part of a response.
  std::optional<QualityVector> true_quality(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    std::lock_guard<std::mutex> lk(s->mu);
    return s->env.true_quality();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> g(mu_);
    return sessions_.size();
  }

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    int episode_index = 0;
    ObservationMode mode = ObservationMode::Oracle;
    EpisodeConfig config;
    SimEnv env;
    std::vector<int> actions;
    std::vector<double> scores;
    std::vector<double> latencies_ms;
    Clock::time_point served_at;
    std::chrono::system_clock::time_point created_at;
    std::optional<nlohmann::json> summary;
  };

  static std::optional<Reply> parse_body(const std::string& body, nlohmann::json& out) {
    try {
      out = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return error_reply(400, "request body is not valid JSON");
    }
    if (!out.is_object()) return error_reply(400, "request body must be a JSON object");
    return std::nullopt;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard<std::mutex> g(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  // In Wild mode only the estimate leaves the server, and the per-round
  // scores (true quality) are withheld until the summary.
  nlohmann::json view(Session& s) const {
    const bool wild = s.mode == ObservationMode::Wild;
    nlohmann::json j{{"session_id", s.id},
                     {"episode_index", s.episode_index},
                     {"mode", to_string(s.mode)},
                     {"state",
                      {{"quality", s.env.observe(s.mode)}, {"history", s.env.history()}, {"round", s.env.round()}}},
                     {"done", s.env.done()}};
    if (!wild) j["scores"] = s.scores;
    return j;
  }

  double replay(Policy& p, const Session& s, ObservationMode mode) const {
    return run_episode(s.config, p, cfg_.horizon, mode).auc;
  }

  nlohmann::json build_summary(const Session& s) const {
    auto worst_oracle = Policy::worst_oracle();
    auto worst_wild = Policy::worst_wild();
    const double wo = replay(worst_oracle, s, ObservationMode::Oracle);
    const double ww = replay(worst_wild, s, ObservationMode::Wild);
    double random_mean = 0.0;
    for (int r = 0; r < cfg_.random_repeats; ++r) {
      auto p = Policy::random(derive_seed(s.config.seed, {0x726e64ULL, static_cast<std::uint64_t>(r)}));
      random_mean += replay(p, s, s.mode) / cfg_.random_repeats;
    }
    double latency = 0.0;
    for (double x : s.latencies_ms) latency += x / static_cast<double>(s.latencies_ms.size());
    nlohmann::json baselines{{"worst_auc", s.mode == ObservationMode::Wild ? ww : wo},
                             {"worst_oracle_auc", wo},
                             {"worst_wild_auc", ww},
                             {"random_auc_mean", random_mean}};
    if (cfg_.agent) {
      auto agent = Policy::agent(cfg_.agent);
      baselines["agent_auc"] = replay(agent, s, s.mode);
    }
    return {{"session_id", s.id},
            {"episode_index", s.episode_index},
            {"mode", to_string(s.mode)},
            {"human_auc", auc(s.scores)},
            {"per_round_scores", s.scores},
            {"actions", s.actions},
            {"choice_latencies_ms", s.latencies_ms},
            {"mean_choice_latency_ms", latency},
            {"baselines", baselines}};
  }

  void log_completed(const Session& s) {
    if (cfg_.session_log.empty()) return;
    const auto created = std::chrono::duration_cast<std::chrono::milliseconds>(s.created_at.time_since_epoch());
    nlohmann::json rec{{"session_id", s.id},
                       {"episode_index", s.episode_index},
                       {"mode", to_string(s.mode)},
                       {"suite_hash", hex64(cfg_.suite_hash)},
                       {"episode_seed", s.config.seed},
                       {"created_at_ms", created.count()},
                       {"actions", s.actions},
                       {"scores", s.scores},
                       {"human_auc", auc(s.scores)},
                       {"choice_latencies_ms", s.latencies_ms}};
    std::lock_guard<std::mutex> g(log_mu_);
    std::ofstream out(cfg_.session_log, std::ios::app);
    if (!out) throw Error("cannot append to session log " + cfg_.session_log.string());
    out << rec.dump() << '\n';
  }

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::mutex log_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> next_nonce_{0};
};

// Binds the session store to HTTP routes.
class HttpService {
 public:
  explicit HttpService(ServiceConfig cfg, std::optional<std::filesystem::path> static_dir = std::nullopt)
      : store_(std::move(cfg)) {
    using httplib::Request;
    using httplib::Response;
    auto send = [](Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto guarded = [send](auto fn) {
      return [send, fn](const Request& req, Response& res) {
        try {
          send(res, fn(req));
        } catch (const std::exception& e) {
          send(res, error_reply(500, e.what()));
        }
      };
    };
    srv_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    srv_.Options(R"(/sessions.*)", [](const Request&, Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    srv_.Post("/sessions", guarded([this](const Request& req) { return store_.create(req.body); }));
    srv_.Get(R"(/sessions/([0-9a-f]+))", guarded([this](const Request& req) { return store_.get(req.matches[1]); }));
    srv_.Delete(R"(/sessions/([0-9a-f]+))",
                guarded([this](const Request& req) { return store_.remove(req.matches[1]); }));
    srv_.Post(R"(/sessions/([0-9a-f]+)/actions)",
              guarded([this](const Request& req) { return store_.act(req.matches[1], req.body); }));
    srv_.Get(R"(/sessions/([0-9a-f]+)/summary)",
             guarded([this](const Request& req) { return store_.summary(req.matches[1]); }));
    srv_.Get("/health", [send](const Request&, Response& res) {
      send(res, Reply{200, {{"status", "ok"}, {"version", kVersion}}});
    });
    if (static_dir && !srv_.set_mount_point("/", static_dir->string())) {
      throw ConfigError("static directory " + static_dir->string() + " does not exist");
    }
  }

  SessionStore& store() noexcept { return store_; }

  // Returns the bound port (useful with port 0).
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? srv_.bind_to_any_port(host) : (srv_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  // Blocks until stop().
  void listen_after_bind() { srv_.listen_after_bind(); }
  void stop() { srv_.stop(); }
  void wait_until_ready() const { srv_.wait_until_ready(); }

 private:
  SessionStore store_;
  httplib::Server srv_;
};

}  // namespace framepick
