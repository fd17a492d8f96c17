#pragma once

// Central-difference verification of the analytic Q-network gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "framepick/episode.hpp"
#include "framepick/qnet.hpp"
#include "framepick/rng.hpp"

namespace framepick {

struct GradCheckOptions {
  NetworkShape shape;
  int draws = 100;
  int coords_per_block = 6;  // sampled coordinates in each parameter block
  int max_frames = 12;
  double step = 1e-5;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  long long coordinates = 0;
};

// |a - n| / max(|a|, |n|, 1e-6).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline GradCheckResult gradient_check(const GradCheckOptions& opt) {
  Rng rng(opt.seed);
  GradCheckResult out;
  for (int draw = 0; draw < opt.draws; ++draw) {
    auto params = init_params(opt.shape, rng());
    const auto n = 1 + uniform_index(rng, static_cast<std::size_t>(opt.max_frames));
    QualityVector q(n);
    for (auto& x : q) x = uniform01(rng);
    HistoryVector h(n, 0);
    const int rounds = static_cast<int>(uniform_index(rng, 6));
    for (int r = 0; r < rounds; ++r) ++h[uniform_index(rng, n)];
    const AgentState s = make_state(q, h, rounds);
    const FrameIndex a{uniform_index(rng, n)};
    const double target = normal(rng);
    const auto analytic = loss_and_grad(params, s, a, target).grads;

    auto loss_at = [&] {
      const double e = forward(params, s)[a.value] - target;
      return e * e;
    };
    const auto o = opt.shape.offsets();
    const std::size_t bounds[] = {o.we, o.be, o.cell[0], o.cell[1], o.w1, o.b1, o.w2, o.b2, o.total};
    for (std::size_t b = 0; b + 1 < std::size(bounds); ++b) {
      for (int k = 0; k < opt.coords_per_block; ++k) {
        const auto i = static_cast<Eigen::Index>(bounds[b] + uniform_index(rng, bounds[b + 1] - bounds[b]));
        const double saved = params.values()(i);
        params.values()(i) = saved + opt.step;
        const double up = loss_at();
        params.values()(i) = saved - opt.step;
        const double down = loss_at();
        params.values()(i) = saved;
        const double numeric = (up - down) / (2.0 * opt.step);
        out.max_relative_error = std::max(out.max_relative_error, relative_error(analytic.values()(i), numeric));
        ++out.coordinates;
      }
    }
  }
  return out;
}

}  // namespace framepick
