#pragma once

// Episode suites: JSON (de)serialization of EpisodeConfig, the benchmark
// generator, content hashing and training-window cropping.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/rng.hpp"
#include "framepick/sim_env.hpp"

namespace framepick {

using json = nlohmann::json;

inline void to_json(json& j, const EpisodeConfig& c) {
  j = json{{"n_frames", c.n_frames},
           {"horizon", c.horizon},
           {"n_objects", c.n_objects},
           {"segment_boundaries", c.segment_boundaries},
           {"difficulty", c.difficulty},
           {"info_value", c.info_value},
           {"propagation_scale", c.propagation_scale},
           {"env_gain", c.env_gain},
           {"novelty_decay", c.novelty_decay},
           {"cross_segment_attenuation", c.cross_segment_attenuation},
           {"obs_noise_sigma", c.obs_noise_sigma},
           {"seed", c.seed},
           {"transition_noise", c.transition_noise}};
}

inline void from_json(const json& j, EpisodeConfig& c) {
  try {
    j.at("n_frames").get_to(c.n_frames);
    c.horizon = j.value("horizon", 8);
    c.n_objects = j.value("n_objects", 1);
    c.segment_boundaries = j.value("segment_boundaries", std::vector<int>{0});
    j.at("difficulty").get_to(c.difficulty);
    j.at("info_value").get_to(c.info_value);
    j.at("propagation_scale").get_to(c.propagation_scale);
    j.at("env_gain").get_to(c.env_gain);
    j.at("novelty_decay").get_to(c.novelty_decay);
    j.at("cross_segment_attenuation").get_to(c.cross_segment_attenuation);
    c.obs_noise_sigma = j.value("obs_noise_sigma", 0.0);
    c.seed = j.value("seed", std::uint64_t{0});
    c.transition_noise = j.value("transition_noise", true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad episode config: ") + e.what());
  }
}

// FNV-1a, used for suite file and config content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const EpisodeConfig& c) { return fnv1a64(json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

struct Suite {
  std::vector<EpisodeConfig> episodes;
  std::uint64_t hash = 0;  // of the serialized file contents
};

inline std::string serialize_suite(const std::vector<EpisodeConfig>& episodes) {
  return json(episodes).dump(1) + "\n";
}

inline Suite parse_suite(const std::string& text) {
  Suite s;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("suite is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw ConfigError("suite must be a JSON array of episode configs");
  for (const auto& item : j) {
    auto c = item.get<EpisodeConfig>();
    c.validate();
    s.episodes.push_back(std::move(c));
  }
  s.hash = fnv1a64(text);
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << contents;
  if (!out) throw Error("write failed for " + path.string());
}

inline Suite load_suite(const std::filesystem::path& path) { return parse_suite(read_file(path)); }

struct GeneratorParams {
  int episodes = 50;
  std::uint64_t seed = 7;
  int min_frames = 25;
  int max_frames = 100;
  int min_segments = 1;
  int max_segments = 4;
  int min_segment_length = 5;
  int horizon = 8;
  int max_objects = 3;
  double min_propagation_scale = 8.0;
  double max_propagation_scale = 16.0;
  double min_env_gain = 0.3;
  double max_env_gain = 0.6;
  double min_novelty_decay = 0.4;
  double max_novelty_decay = 0.7;
  double min_attenuation = 0.3;
  double max_attenuation = 0.7;
  // Gaussian-copula correlation between difficulty and info value: hard
  // frames carry more new information when annotated.
  double info_difficulty_correlation = 0.6;
  // Wild observation noise is calibrated per episode to this correlation;
  // 0 disables calibration (sigma = 0).
  double target_pcc = 0.51;
};

/// Draws one benchmark episode. Difficulty and info value both have
/// Beta(2,2) marginals.
inline EpisodeConfig generate_episode(const GeneratorParams& p, Rng& rng) {
  EpisodeConfig c;
  c.n_frames = p.min_frames + static_cast<int>(uniform_index(rng, p.max_frames - p.min_frames + 1));
  c.horizon = p.horizon;
  c.n_objects = 1 + static_cast<int>(uniform_index(rng, p.max_objects));

  const int n_segments = p.min_segments + static_cast<int>(uniform_index(rng, p.max_segments - p.min_segments + 1));
  c.segment_boundaries = {0};
  // Rejection-sample interior boundaries respecting the minimum segment length.
  for (int attempt = 0; attempt < 1000 && static_cast<int>(c.segment_boundaries.size()) < n_segments; ++attempt) {
    std::vector<int> cand{0};
    for (int k = 1; k < n_segments; ++k) {
      cand.push_back(p.min_segment_length +
                     static_cast<int>(uniform_index(rng, c.n_frames - 2 * p.min_segment_length + 1)));
    }
    std::sort(cand.begin(), cand.end());
    bool ok = true;
    for (std::size_t i = 1; i < cand.size(); ++i) ok = ok && cand[i] - cand[i - 1] >= p.min_segment_length;
    ok = ok && c.n_frames - cand.back() >= p.min_segment_length;
    if (ok) c.segment_boundaries = cand;
  }

  const double rho = p.info_difficulty_correlation;
  c.difficulty.resize(c.n_frames);
  c.info_value.resize(c.n_frames);
  for (int i = 0; i < c.n_frames; ++i) {
    const double zd = normal(rng);
    const double zv = rho * zd + std::sqrt(1.0 - rho * rho) * normal(rng);
    c.difficulty[i] = beta22_quantile(standard_normal_cdf(zd));
    c.info_value[i] = std::clamp(beta22_quantile(standard_normal_cdf(zv)), 1e-3, 1.0);
  }
  c.propagation_scale = uniform(rng, p.min_propagation_scale, p.max_propagation_scale);
  c.env_gain = uniform(rng, p.min_env_gain, p.max_env_gain);
  c.novelty_decay = uniform(rng, p.min_novelty_decay, p.max_novelty_decay);
  c.cross_segment_attenuation = uniform(rng, p.min_attenuation, p.max_attenuation);
  c.seed = rng();
  c.obs_noise_sigma = 0.0;
  if (p.target_pcc > 0.0) c.obs_noise_sigma = calibrate_noise(p.target_pcc, c);
  return c;
}

inline std::vector<EpisodeConfig> generate_suite(const GeneratorParams& p) {
  if (p.episodes < 1) throw ConfigError("suite needs at least one episode");
  if (p.min_frames < 2 || p.max_frames < p.min_frames) throw ConfigError("bad frame-count range");
  if (p.min_segments < 1 || p.max_segments < p.min_segments) throw ConfigError("bad segment-count range");
  if (p.max_segments * p.min_segment_length > p.min_frames) throw ConfigError("segments do not fit the shortest episode");
  Rng rng(p.seed);
  std::vector<EpisodeConfig> out;
  out.reserve(p.episodes);
  for (int i = 0; i < p.episodes; ++i) out.push_back(generate_episode(p, rng));
  return out;
}

// `length` consecutive frames starting at `start`, as a standalone episode.
inline EpisodeConfig crop_window(const EpisodeConfig& c, int start, int length, std::uint64_t seed) {
  if (length < 2 || start < 0 || start + length > c.n_frames) throw ConfigError("crop window out of range");
  EpisodeConfig w = c;
  w.n_frames = length;
  w.difficulty.assign(c.difficulty.begin() + start, c.difficulty.begin() + start + length);
  w.info_value.assign(c.info_value.begin() + start, c.info_value.begin() + start + length);
  w.segment_boundaries = {0};
  for (int b : c.segment_boundaries) {
    if (b > start && b < start + length) w.segment_boundaries.push_back(b - start);
  }
  w.seed = seed;
  return w;
}

}  // namespace framepick
