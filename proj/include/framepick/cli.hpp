#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
// failure. Option precedence: flags, then FRAMEPICK_* environment variables,
// then the JSON file given with --config, then built-in defaults.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "framepick/error.hpp"
#include "framepick/eval.hpp"
#include "framepick/gradcheck.hpp"
#include "framepick/policies.hpp"
#include "framepick/protocol.hpp"
#include "framepick/qnet.hpp"
#include "framepick/reward.hpp"
#include "framepick/suite.hpp"
#include "framepick/trainer.hpp"
#include "framepick/version.hpp"
#include "framepick/service.hpp"

namespace framepick {

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace cli {

inline std::string env_name(const std::string& flag) {
  std::string e = "FRAMEPICK_";
  for (char c : flag) e += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

// Registers --name bound to `var` with a FRAMEPICK_NAME override.
template <typename T>
CLI::Option* opt(CLI::App* app, const std::string& name, T& var, const std::string& help) {
  return app->add_option("--" + name, var, help)->envname(env_name(name))->capture_default_str();
}

inline CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& help) {
  return app->add_flag("--" + name, var, help)->envname(env_name(name));
}

// Fills options that were given neither as flags nor through the
// environment from a JSON object. Keys may use snake_case or kebab-case.
inline void apply_config_file(CLI::App* app, const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path.string() + " must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (auto& c : name)
      if (c == '_') c = '-';
    CLI::Option* o = nullptr;
    try {
      o = app->get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("config file " + path.string() + ": unknown setting '" + key + "'");
    }
    if (o->count() > 0) continue;
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else {
      text = value.dump();
    }
    o->add_result(text);
    o->run_callback();
  }
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::vector<PolicySpec> build_policies(const std::string& list, ObservationMode mode,
                                              const std::string& checkpoint) {
  std::vector<PolicySpec> out;
  std::stringstream ss(list);
  std::string name;
  std::shared_ptr<const Checkpoint> ck;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    if (name == "agent") {
      if (checkpoint.empty()) throw UsageError("policy 'agent' requested but no --checkpoint given");
      if (!ck) ck = std::make_shared<const Checkpoint>(load_checkpoint(checkpoint));
      out.push_back({name, Policy::agent(ck), mode});
    } else if (name == "random") {
      out.push_back({name, Policy::random(0), mode});
    } else if (name == "linspace") {
      out.push_back({name, Policy::linspace(), mode});
    } else if (name == "worst-oracle") {
      out.push_back({name, Policy::worst_oracle(), ObservationMode::Oracle});
    } else if (name == "worst-wild") {
      out.push_back({name, Policy::worst_wild(), ObservationMode::Wild});
    } else {
      throw UsageError("unknown policy '" + name + "' (expected agent, random, linspace, worst-oracle, worst-wild)");
    }
  }
  if (out.empty()) throw UsageError("no policies selected");
  return out;
}

inline void print_summary(const ComparisonReport& rep, std::ostream& out) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %-7s %9s %9s\n", "policy", "mode", "mean_auc", "std");
  out << buf;
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%-14s %-7s %9.5f %9.5f\n", r.name.c_str(), r.mode.c_str(), r.mean_auc, r.std_auc);
    out << buf;
  }
  for (const auto& w : rep.wins) {
    std::snprintf(buf, sizeof buf, "win %-14s >= %-14s %.3f [%.3f, %.3f]\n", w.a.c_str(), w.b.c_str(), w.fraction,
                  w.ci_low, w.ci_high);
    out << buf;
  }
}

}  // namespace cli

/// Runs the CLI on `args` (without the program name).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"framepick: frame recommendation for interactive video segmentation", "framepick"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string config_path;

  // gen
  auto* gen = app.add_subcommand("gen", "write a benchmark episode suite");
  GeneratorParams gp;
  std::string gen_out;
  opt(gen, "n", gp.episodes, "number of episodes");
  opt(gen, "seed", gp.seed, "generator seed");
  opt(gen, "min-frames", gp.min_frames, "minimum frames per episode");
  opt(gen, "max-frames", gp.max_frames, "maximum frames per episode");
  opt(gen, "min-segments", gp.min_segments, "minimum shots per episode");
  opt(gen, "max-segments", gp.max_segments, "maximum shots per episode");
  opt(gen, "target-pcc", gp.target_pcc, "observation-noise calibration target (0 disables)");
  opt(gen, "out", gen_out, "output suite file")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "precompute random-policy statistics for a suite");
  std::string stats_suite, stats_out;
  int stats_horizon = kTestHorizon, stats_runs = kRandomRuns;
  std::uint64_t stats_seed = 0;
  opt(stats, "suite", stats_suite, "episode suite file")->required();
  opt(stats, "out", stats_out, "statistics cache file (merged if it exists)")->required();
  opt(stats, "horizon", stats_horizon, "largest horizon");
  opt(stats, "runs", stats_runs, "random rollouts per horizon");
  opt(stats, "seed", stats_seed, "rollout seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the Q-network agent");
  TrainConfig tc = TrainConfig::desk_preset();
  std::string preset = "desk", train_suite, train_val, train_out, train_log, train_cache, reward = "final",
              state_parts = "full";
  bool no_decomp = false;
  opt(train_cmd, "suite", train_suite, "training episode suite")->required();
  opt(train_cmd, "validation", train_val, "validation suite for periodic evaluation");
  opt(train_cmd, "out", train_out, "checkpoint file")->required();
  opt(train_cmd, "log", train_log, "training log (JSON lines, appended)");
  opt(train_cmd, "stats-cache", train_cache, "random-policy statistics cache (loaded and updated)");
  opt(train_cmd, "preset", preset, "desk or reference")->check(CLI::IsMember({"desk", "reference"}));
  opt(train_cmd, "lr", tc.lr, "Adam learning rate");
  opt(train_cmd, "batch-size", tc.batch_size, "mini-batch size");
  opt(train_cmd, "episodes", tc.episodes, "training episodes");
  opt(train_cmd, "eps-start", tc.eps_start, "initial exploration rate");
  opt(train_cmd, "eps-end", tc.eps_end, "final exploration rate");
  opt(train_cmd, "eps-steps", tc.eps_steps, "steps of exponential decay");
  opt(train_cmd, "target-sync-period", tc.target_sync_period, "updates between target syncs");
  opt(train_cmd, "t-train", tc.t_train, "interactions per training episode");
  opt(train_cmd, "subseq-len", tc.subseq_len, "training window length");
  opt(train_cmd, "replay-capacity", tc.replay_capacity, "replay buffer size");
  opt(train_cmd, "warm-fill", tc.warm_fill, "transitions before learning starts (0: 10 batches)");
  opt(train_cmd, "random-runs", tc.random_runs, "random rollouts for reward statistics");
  opt(train_cmd, "seed", tc.seed, "training seed");
  opt(train_cmd, "reward", reward, "goal reward variant")->check(CLI::IsMember({"naive", "final"}));
  opt(train_cmd, "goal-weight", tc.weights.goal, "goal reward weight");
  opt(train_cmd, "aux-weight", tc.weights.aux, "auxiliary reward weight");
  flag(train_cmd, "no-task-decomposition", no_decomp, "train only the full-horizon task");
  opt(train_cmd, "state", state_parts, "state components: full, quality or history")
      ->check(CLI::IsMember({"full", "quality", "history"}));
  opt(train_cmd, "embed", tc.shape.embed, "embedding width");
  opt(train_cmd, "hidden", tc.shape.hidden, "LSTM hidden width per direction");
  opt(train_cmd, "head", tc.shape.head, "head hidden width");
  opt(train_cmd, "eval-interval", tc.eval_interval, "episodes between validation runs (0: never)");
  flag(train_cmd, "keep-best", tc.keep_best, "return the best validated parameters");
  opt(train_cmd, "checkpoint-interval", tc.checkpoint_interval, "episodes between checkpoint writes");

  // eval and compare share their options.
  struct ReportArgs {
    std::string suite, checkpoint, out, mode = "oracle", format = "csv", policies;
    int horizon = kTestHorizon, repeats = 5;
    std::uint64_t seed = 0;
  };
  ReportArgs ev, cmp;
  ev.policies = "agent,worst-oracle,worst-wild,linspace,random";
  cmp.policies = "worst-oracle,worst-wild,linspace,random";
  auto add_report = [&](CLI::App* sub, ReportArgs& a) {
    opt(sub, "suite", a.suite, "episode suite file")->required();
    opt(sub, "checkpoint", a.checkpoint, "agent parameter file");
    opt(sub, "policies", a.policies, "comma-separated policies");
    opt(sub, "mode", a.mode, "observation setting")->check(CLI::IsMember({"oracle", "wild"}));
    opt(sub, "horizon", a.horizon, "interactions per episode");
    opt(sub, "repeats", a.repeats, "random-policy repeats");
    opt(sub, "seed", a.seed, "comparison seed");
    opt(sub, "format", a.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    opt(sub, "out", a.out, "report file");
  };
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained agent against the baselines");
  add_report(eval_cmd, ev);
  auto* compare_cmd = app.add_subcommand("compare", "compare frame-selection policies");
  add_report(compare_cmd, cmp);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "verify analytic gradients against finite differences");
  GradCheckOptions gco;
  double gc_tol = 1e-4;
  opt(gc, "draws", gco.draws, "random parameter/state draws");
  opt(gc, "step", gco.step, "finite-difference step");
  opt(gc, "tolerance", gc_tol, "maximum allowed relative error");
  opt(gc, "seed", gco.seed, "draw seed");
  opt(gc, "embed", gco.shape.embed, "embedding width");
  opt(gc, "hidden", gco.shape.hidden, "LSTM hidden width per direction");
  opt(gc, "head", gco.shape.head, "head hidden width");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP session service for human play");
  std::string serve_suite, serve_ck, serve_log, serve_static, host = "127.0.0.1";
  int port = 8080, serve_horizon = kTestHorizon;
  std::uint64_t serve_seed = 0;
  opt(serve, "suite", serve_suite, "episode suite file")->required();
  opt(serve, "checkpoint", serve_ck, "agent parameter file for the agent baseline");
  opt(serve, "host", host, "bind address");
  opt(serve, "port", port, "bind port (0 picks a free one)");
  opt(serve, "session-log", serve_log, "append-only log of completed sessions");
  opt(serve, "static-dir", serve_static, "directory served at / (browser client)");
  opt(serve, "horizon", serve_horizon, "interactions per session");
  opt(serve, "seed", serve_seed, "session seed");

  // env-serve
  app.add_subcommand("env-serve", "answer the environment line protocol on stdin/stdout with the simulator");

  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "JSON file with option defaults")->envname("FRAMEPICK_CONFIG");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    if (!config_path.empty()) apply_config_file(active, config_path);

    if (active == gen) {
      const auto text = serialize_suite(generate_suite(gp));
      write_file(gen_out, text);
      out << "wrote " << gp.episodes << " episodes to " << gen_out << " (hash " << hex64(fnv1a64(text)) << ")\n";
    } else if (active == stats) {
      const auto suite = load_suite(stats_suite);
      StatsCache cache;
      if (std::filesystem::exists(stats_out)) cache.load(stats_out);
      for (const auto& c : suite.episodes) cache.get_all(c, stats_horizon, stats_runs, stats_seed);
      cache.save(stats_out);
      out << "cached " << cache.size() << " entries in " << stats_out << "\n";
    } else if (active == train_cmd) {
      if (preset == "reference") {
        // Reference values apply wherever no explicit setting was given.
        const TrainConfig ref;
        if (train_cmd->get_option("--lr")->count() == 0) tc.lr = ref.lr;
        if (train_cmd->get_option("--subseq-len")->count() == 0) tc.subseq_len = ref.subseq_len;
      }
      tc.variant = parse_goal_variant(reward);
      tc.task_decomposition = !no_decomp;
      tc.use_quality = state_parts != "history";
      tc.use_history = state_parts != "quality";
      try {
        tc.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const auto suite = load_suite(train_suite);
      std::vector<EpisodeConfig> validation;
      if (!train_val.empty()) validation = load_suite(train_val).episodes;
      if (tc.eval_interval > 0 && validation.empty()) throw UsageError("--eval-interval needs --validation");
      if (tc.checkpoint_interval > 0) tc.checkpoint_path = train_out;
      StatsCache cache;
      if (!train_cache.empty() && std::filesystem::exists(train_cache)) cache.load(train_cache);
      std::unique_ptr<std::ofstream> log;
      if (!train_log.empty()) {
        log = std::make_unique<std::ofstream>(train_log, std::ios::app);
        if (!*log) throw Error("cannot open training log " + train_log);
      }
      const auto result = train(tc, suite.episodes, validation, [&](const LogEntry& e) {
        if (log) *log << e.to_json().dump() << '\n' << std::flush;
        if (e.validated) out << "episode " << e.episode + 1 << " validation_auc " << e.eval_auc << "\n" << std::flush;
      }, &cache);
      save_params(result.params, train_out, result.features);
      if (!train_cache.empty()) cache.save(train_cache);
      out << "trained " << tc.episodes << " episodes, " << result.log.entries.back().updates << " updates";
      if (result.log.best_validation_auc) {
        out << ", best validation_auc " << *result.log.best_validation_auc << " at episode "
            << result.log.best_episode + 1;
      }
      out << "\nwrote " << train_out << "\n";
    } else if (active == eval_cmd || active == compare_cmd) {
      const ReportArgs& a = active == eval_cmd ? ev : cmp;
      std::string policies = a.policies;
      if (active == compare_cmd && !a.checkpoint.empty() && compare_cmd->get_option("--policies")->count() == 0) {
        policies = "agent," + policies;
      }
      const auto mode = parse_observation_mode(a.mode);
      auto specs = build_policies(policies, mode, a.checkpoint);
      const auto suite = load_suite(a.suite);
      const auto rep = compare(suite.episodes, std::move(specs), a.horizon, a.repeats, a.seed, suite.hash);
      print_summary(rep, out);
      if (!a.out.empty()) {
        emit_report(rep, parse_report_format(a.format), a.out);
        out << "wrote " << a.out << "\n";
      }
    } else if (active == gc) {
      const auto r = gradient_check(gco);
      out << "max_relative_error " << format_real(r.max_relative_error) << " over " << r.coordinates
          << " coordinates\n";
      if (!(r.max_relative_error <= gc_tol)) {
        err << "gradient check failed: " << r.max_relative_error << " > " << gc_tol << "\n";
        return 2;
      }
    } else if (active == serve) {
      ServiceConfig sc;
      const auto suite = load_suite(serve_suite);
      sc.suite = suite.episodes;
      sc.suite_hash = suite.hash;
      if (!serve_ck.empty()) sc.agent = std::make_shared<const Checkpoint>(load_checkpoint(serve_ck));
      sc.session_log = serve_log;
      sc.horizon = serve_horizon;
      sc.seed = serve_seed;
      std::optional<std::filesystem::path> dir;
      if (!serve_static.empty()) dir = serve_static;
      HttpService service(std::move(sc), dir);
      const int bound = service.bind(host, port);
      out << "listening on http://" << host << ":" << bound << "\n" << std::flush;
      service.listen_after_bind();
    } else {
      SimEnv env;
      serve_environment(env, std::cin, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace framepick
