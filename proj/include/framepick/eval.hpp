#pragma once

// Episode rollouts, AUC and multi-policy comparison reports.
//
// Scoring always uses true quality; the observation mode only changes what
// the selector sees.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/policies.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"
#include "framepick/suite.hpp"
#include "framepick/version.hpp"

namespace framepick {

inline constexpr int kTestHorizon = 8;

// Mean of the per-round scores; proportional to the area under the
// quality-vs-round curve.
inline double auc(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("AUC of an empty curve");
  double s = 0.0;
  for (double x : scores) s += x;
  return s / static_cast<double>(scores.size());
}

inline EpisodeResult run_episode(Environment& env, const EpisodeConfig& config, Policy& policy,
                                 int horizon = kTestHorizon, ObservationMode mode = ObservationMode::Oracle) {
  EpisodeConfig c = config;
  c.horizon = horizon;
  AgentState s = env.reset(c);
  const auto view = policy.observation_mode(mode);
  EpisodeResult r;
  for (int t = 0; t < horizon; ++t) {
    const QualityVector obs = env.observe(view);
    const FrameIndex a = policy.select(obs, s.history(), s.round(), c.n_frames, horizon);
    auto step = env.step(a);
    s = std::move(step.state);
    r.actions.push_back(a);
    r.scores.push_back(mean_quality(s.quality()));
  }
  r.auc = auc(r.scores);
  return r;
}

inline EpisodeResult run_episode(const EpisodeConfig& config, Policy& policy, int horizon = kTestHorizon,
                                 ObservationMode mode = ObservationMode::Oracle) {
  SimEnv env;
  return run_episode(env, config, policy, horizon, mode);
}

struct PolicySpec {
  std::string name;
  Policy policy;
  ObservationMode mode = ObservationMode::Oracle;
};

struct RunRecord {
  std::string policy;
  int episode = 0;
  int repeat = 0;
  EpisodeResult result;
};

struct PolicyRow {
  std::string name;
  std::string kind;
  std::string mode;
  int repeats = 1;
  double mean_auc = 0.0;
  // Sample std over repeats of the suite-mean AUC; 0 with a single repeat.
  double std_auc = 0.0;
  std::vector<double> curve;          // per-round mean score
  std::vector<double> episode_auc;    // per episode, averaged over repeats
};

struct WinFraction {
  std::string a, b;
  double fraction = 0.0;  // share of episodes with AUC(a) >= AUC(b)
  double ci_low = 0.0, ci_high = 0.0;
};

struct ComparisonReport {
  std::uint64_t suite_hash = 0;
  int horizon = kTestHorizon;
  std::vector<PolicyRow> rows;      // sorted by name
  std::vector<RunRecord> runs;      // ordered by (policy, episode, repeat)
  std::vector<WinFraction> wins;    // every ordered pair

  const PolicyRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw ConfigError("no policy named '" + name + "' in report");
  }
  const WinFraction& win(const std::string& a, const std::string& b) const {
    for (const auto& w : wins)
      if (w.a == a && w.b == b) return w;
    throw ConfigError("no win fraction for " + a + " vs " + b);
  }
};

inline constexpr int kBootstrapResamples = 10000;

/// Fraction of episodes where a >= b, with a percentile bootstrap 95% CI
/// from resampling episodes.
inline WinFraction win_fraction(const std::vector<double>& a, const std::vector<double>& b, std::uint64_t seed,
                                int resamples = kBootstrapResamples) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("win fraction needs equal, non-empty samples");
  const std::size_t n = a.size();
  std::vector<int> wins(n);
  for (std::size_t i = 0; i < n; ++i) wins[i] = a[i] >= b[i] ? 1 : 0;
  WinFraction w;
  w.fraction = std::accumulate(wins.begin(), wins.end(), 0.0) / static_cast<double>(n);
  Rng rng(seed);
  std::vector<double> boot(resamples);
  for (int r = 0; r < resamples; ++r) {
    int hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += wins[uniform_index(rng, n)];
    boot[r] = static_cast<double>(hits) / static_cast<double>(n);
  }
  std::sort(boot.begin(), boot.end());
  auto at = [&](double p) { return boot[static_cast<std::size_t>(std::clamp(p * (resamples - 1), 0.0, resamples - 1.0))]; };
  w.ci_low = at(0.025);
  w.ci_high = at(0.975);
  return w;
}

/// Runs every policy on every episode. Random policies run `random_repeats`
/// times per episode with derived seeds.
inline ComparisonReport compare(const std::vector<EpisodeConfig>& suite, std::vector<PolicySpec> policies,
                                int horizon = kTestHorizon, int random_repeats = 5, std::uint64_t seed = 0,
                                std::uint64_t suite_hash = 0) {
  if (suite.empty()) throw ConfigError("comparison needs a non-empty suite");
  if (policies.empty()) throw ConfigError("comparison needs at least one policy");
  if (random_repeats < 1) throw ConfigError("random_repeats must be >= 1");
  std::sort(policies.begin(), policies.end(), [](const auto& x, const auto& y) { return x.name < y.name; });
  for (std::size_t i = 1; i < policies.size(); ++i)
    if (policies[i].name == policies[i - 1].name) throw ConfigError("duplicate policy name '" + policies[i].name + "'");

  ComparisonReport rep;
  rep.suite_hash = suite_hash;
  rep.horizon = horizon;
  SimEnv env;
  for (auto& spec : policies) {
    const bool randomized = spec.policy.kind() == PolicyKind::Random;
    const int repeats = randomized ? random_repeats : 1;
    PolicyRow row;
    row.name = spec.name;
    row.kind = spec.policy.name();
    row.mode = to_string(spec.mode);
    row.repeats = repeats;
    row.curve.assign(horizon, 0.0);
    row.episode_auc.assign(suite.size(), 0.0);
    std::vector<double> repeat_means(repeats, 0.0);
    for (std::size_t e = 0; e < suite.size(); ++e) {
      for (int r = 0; r < repeats; ++r) {
        if (randomized) spec.policy.reseed(derive_seed(seed, {fnv1a64(spec.name), e, static_cast<std::uint64_t>(r)}));
        auto res = run_episode(env, suite[e], spec.policy, horizon, spec.mode);
        row.episode_auc[e] += res.auc / repeats;
        repeat_means[r] += res.auc / static_cast<double>(suite.size());
        for (int t = 0; t < horizon; ++t) row.curve[t] += res.scores[t] / (repeats * static_cast<double>(suite.size()));
        rep.runs.push_back({spec.name, static_cast<int>(e), r, std::move(res)});
      }
    }
    row.mean_auc = std::accumulate(repeat_means.begin(), repeat_means.end(), 0.0) / repeats;
    if (repeats > 1) {
      double ss = 0.0;
      for (double m : repeat_means) ss += (m - row.mean_auc) * (m - row.mean_auc);
      row.std_auc = std::sqrt(ss / (repeats - 1));
    }
    rep.rows.push_back(std::move(row));
  }
  for (const auto& a : rep.rows) {
    for (const auto& b : rep.rows) {
      if (a.name == b.name) continue;
      auto w = win_fraction(a.episode_auc, b.episode_auc, derive_seed(seed, {fnv1a64(a.name), fnv1a64(b.name)}));
      w.a = a.name;
      w.b = b.name;
      rep.wins.push_back(std::move(w));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report files

enum class ReportFormat { Csv, Json };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + s + "' (expected csv or json)");
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_header(int horizon) {
  std::string h = "policy,episode,repeat,auc";
  for (int t = 1; t <= horizon; ++t) h += ",s" + std::to_string(t);
  return h;
}

/// One metadata comment line, then the header, then one row per
/// (policy, episode, repeat).
inline std::string report_csv(const ComparisonReport& rep) {
  std::ostringstream os;
  os << "# framepick " << kVersion << " suite_hash=" << hex64(rep.suite_hash) << "\n";
  os << csv_header(rep.horizon) << "\n";
  for (const auto& run : rep.runs) {
    os << run.policy << ',' << run.episode << ',' << run.repeat << ',' << format_real(run.result.auc);
    for (double s : run.result.scores) os << ',' << format_real(s);
    os << "\n";
  }
  return os.str();
}

inline nlohmann::json report_json(const ComparisonReport& rep) {
  using nlohmann::json;
  json j;
  j["tool_version"] = kVersion;
  j["suite_hash"] = hex64(rep.suite_hash);
  j["horizon"] = rep.horizon;
  j["policies"] = json::array();
  for (const auto& r : rep.rows) {
    j["policies"].push_back({{"name", r.name},
                             {"kind", r.kind},
                             {"mode", r.mode},
                             {"repeats", r.repeats},
                             {"mean_auc", r.mean_auc},
                             {"std_auc", r.std_auc},
                             {"curve", r.curve},
                             {"episode_auc", r.episode_auc}});
  }
  j["runs"] = json::array();
  for (const auto& run : rep.runs) {
    std::vector<std::size_t> actions;
    for (auto a : run.result.actions) actions.push_back(a.value);
    j["runs"].push_back({{"policy", run.policy},
                         {"episode", run.episode},
                         {"repeat", run.repeat},
                         {"auc", run.result.auc},
                         {"scores", run.result.scores},
                         {"actions", actions}});
  }
  j["wins"] = json::array();
  for (const auto& w : rep.wins) {
    j["wins"].push_back({{"a", w.a}, {"b", w.b}, {"fraction", w.fraction}, {"ci_low", w.ci_low}, {"ci_high", w.ci_high}});
  }
  return j;
}

inline void emit_report(const ComparisonReport& rep, ReportFormat format, const std::filesystem::path& path) {
  if (rep.rows.empty() || rep.runs.empty()) throw ConfigError("refusing to write an empty comparison report");
  const std::string body = format == ReportFormat::Csv ? report_csv(rep) : report_json(rep).dump(1) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write report " + path.string());
  out << body;
  if (!out) throw Error("write failed for report " + path.string());
}

struct CsvRow {
  std::string policy;
  int episode = 0;
  int repeat = 0;
  double auc = 0.0;
  std::vector<double> scores;
};

inline std::vector<CsvRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CsvRow> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("policy,episode,repeat,auc", 0) != 0) throw FormatError("unexpected CSV header: " + line);
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw FormatError("short CSV row: " + line);
    CsvRow r;
    r.policy = cells[0];
    r.episode = std::stoi(cells[1]);
    r.repeat = std::stoi(cells[2]);
    r.auc = std::stod(cells[3]);
    for (std::size_t i = 4; i < cells.size(); ++i) r.scores.push_back(std::stod(cells[i]));
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw FormatError("CSV has no header");
  return rows;
}

}  // namespace framepick
