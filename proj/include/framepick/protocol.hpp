#pragma once

// Line protocol that lets any process stand in for the simulator.
//
//   {"cmd":"reset","config":{...}}          -> {"state":{"quality":[..],"history":[..],"round":0}}
//   {"cmd":"step","action":k}               -> {"state":{...},"done":false}
//   {"cmd":"observe","mode":"oracle"|"wild"} -> {"quality":[..]}
//
// Failures come back as {"error":{"kind":"index","message":"..."}}. One JSON
// object per line, UTF-8.

#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <chrono>
#include <cstring>
#include <deque>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/policies.hpp"
#include "framepick/sim_env.hpp"
#include "framepick/suite.hpp"

namespace framepick {

inline constexpr std::chrono::milliseconds kDefaultMessageTimeout{60000};

// Bidirectional stream of text lines (without the trailing newline).
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(const std::string& line) = 0;
  // Throws TransportError when nothing arrives within `timeout` or the
  // stream closes.
  virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

inline nlohmann::json state_to_json(const AgentState& s) {
  return {{"quality", s.quality()}, {"history", s.history()}, {"round", s.round()}};
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const IndexError*>(&e)) return "index";
  if (dynamic_cast<const StateError*>(&e)) return "state";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DomainError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return "domain";
  if (dynamic_cast<const ProtocolError*>(&e)) return "protocol";
  return "internal";
}

/// Answers one request line against `env`. Never throws for bad input; the
/// problem is reported in the reply.
inline std::string handle_request(Environment& env, const std::string& line) {
  using nlohmann::json;
  json reply;
  try {
    json req;
    try {
      req = json::parse(line);
    } catch (const json::exception&) {
      throw ProtocolError("malformed request", line);
    }
    if (!req.is_object() || !req.contains("cmd") || !req["cmd"].is_string()) {
      throw ProtocolError("request lacks a string \"cmd\"", line);
    }
    const std::string cmd = req["cmd"];
    if (cmd == "reset") {
      if (!req.contains("config")) throw ProtocolError("reset without config", line);
      EpisodeConfig c;
      try {
        c = req["config"].get<EpisodeConfig>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("bad episode config: ") + e.what());
      }
      reply = {{"state", state_to_json(env.reset(c))}};
    } else if (cmd == "step") {
      if (!req.contains("action") || !req["action"].is_number_integer()) {
        throw ProtocolError("step needs an integer \"action\"", line);
      }
      const auto k = req["action"].get<long long>();
      if (k < 0) throw IndexError("frame " + std::to_string(k) + " is negative");
      auto r = env.step(FrameIndex{static_cast<std::size_t>(k)});
      reply = {{"state", state_to_json(r.state)}, {"done", r.done}};
    } else if (cmd == "observe") {
      if (!req.contains("mode") || !req["mode"].is_string()) throw ProtocolError("observe needs a \"mode\"", line);
      reply = {{"quality", env.observe(parse_observation_mode(req["mode"]))}};
    } else {
      throw ProtocolError("unknown cmd '" + cmd + "'", line);
    }
  } catch (const std::exception& e) {
    reply = {{"error", {{"kind", error_kind(e)}, {"message", e.what()}}}};
  }
  return reply.dump();
}

/// Serves requests from `in` until end of stream. Returns the number of
/// requests handled.
inline std::size_t serve_environment(Environment& env, std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t handled = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out << handle_request(env, line) << '\n' << std::flush;
    ++handled;
  }
  return handled;
}

// In-process channel: every request is answered immediately by a local
// environment, through the same encode/decode path a remote peer would see.
class LoopbackChannel final : public LineChannel {
 public:
  explicit LoopbackChannel(std::unique_ptr<Environment> env) : env_(std::move(env)) {}

  void write_line(const std::string& line) override { pending_.push_back(handle_request(*env_, line)); }

  std::string read_line(std::chrono::milliseconds) override {
    if (pending_.empty()) throw TransportError("loopback: no reply pending");
    std::string s = std::move(pending_.front());
    pending_.pop_front();
    return s;
  }

 private:
  std::unique_ptr<Environment> env_;
  std::deque<std::string> pending_;
};

// Talks to a child process over its standard input and output.
class ProcessChannel final : public LineChannel {
 public:
  explicit ProcessChannel(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ConfigError("external environment command is empty");
    // A peer that exits early shows up as EPIPE on write.
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw TransportError(std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    pid_ = fork();
    if (pid_ < 0) throw TransportError(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ProcessChannel(const ProcessChannel&) = delete;
  ProcessChannel& operator=(const ProcessChannel&) = delete;

  ~ProcessChannel() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      if (waitpid(pid_, &status, WNOHANG) == 0) {
        kill(pid_, SIGTERM);
        waitpid(pid_, &status, 0);
      }
    }
  }

  void write_line(const std::string& line) override {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(write_fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("write to environment process failed: ") + std::strerror(errno));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TransportError("environment process did not answer within " +
                                                  std::to_string(timeout.count()) + " ms");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("read from environment process failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        if (!buffer_.empty()) {
          std::string partial = std::move(buffer_);
          buffer_.clear();
          return partial;  // the parser will flag it
        }
        throw TransportError("environment process closed its output");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
};

/// Environment whose transitions happen on the other end of a line channel.
class ExternalEnv final : public Environment {
 public:
  explicit ExternalEnv(std::unique_ptr<LineChannel> channel,
                       std::chrono::milliseconds timeout = kDefaultMessageTimeout)
      : channel_(std::move(channel)), timeout_(timeout) {}

  AgentState reset(const EpisodeConfig& config) override {
    const auto reply = exchange({{"cmd", "reset"}, {"config", config}});
    return parse_state(reply, "state");
  }

  StepResult step(FrameIndex action) override {
    const auto reply = exchange({{"cmd", "step"}, {"action", action.value}});
    StepResult r{parse_state(reply, "state"), false};
    if (!reply.contains("done") || !reply["done"].is_boolean()) throw ProtocolError("step reply lacks \"done\"", last_);
    r.done = reply["done"];
    return r;
  }

  QualityVector observe(ObservationMode mode) override {
    const auto reply = exchange({{"cmd", "observe"}, {"mode", to_string(mode)}});
    try {
      return reply.at("quality").get<QualityVector>();
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("observe reply lacks a numeric \"quality\" array", last_);
    }
  }

 private:
  nlohmann::json exchange(const nlohmann::json& request) {
    channel_->write_line(request.dump());
    last_ = channel_->read_line(timeout_);
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(last_);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("malformed reply", last_);
    }
    if (!reply.is_object()) throw ProtocolError("reply is not an object", last_);
    if (reply.contains("error")) {
      const auto& e = reply["error"];
      throw RemoteError(e.value("kind", std::string("unknown")), e.value("message", std::string("(no message)")));
    }
    return reply;
  }

  AgentState parse_state(const nlohmann::json& reply, const char* key) const {
    try {
      const auto& s = reply.at(key);
      return observed_state(s.at("quality").get<QualityVector>(), s.at("history").get<HistoryVector>(),
                            s.at("round").get<int>());
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError(std::string("reply lacks a well-formed \"") + key + "\"", last_);
    } catch (const ConsistencyError& e) {
      throw ProtocolError(std::string("inconsistent state: ") + e.what(), last_);
    } catch (const DomainError& e) {
      throw ProtocolError(std::string("invalid state: ") + e.what(), last_);
    } catch (const DimensionError& e) {
      throw ProtocolError(std::string("invalid state: ") + e.what(), last_);
    }
  }

  std::unique_ptr<LineChannel> channel_;
  std::chrono::milliseconds timeout_;
  std::string last_;
};

inline std::unique_ptr<ExternalEnv> loopback_env(std::unique_ptr<Environment> inner = std::make_unique<SimEnv>()) {
  return std::make_unique<ExternalEnv>(std::make_unique<LoopbackChannel>(std::move(inner)));
}

}  // namespace framepick
