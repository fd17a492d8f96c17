#pragma once

// Bidirectional LSTM Q-network over the frame axis.
//
//   x_n  = (q_n, h_n / history_scale)            per-frame features (F = 2)
//   z_n  = We x_n + be                            embedding (E)
//   fwd  = LSTM over n = 0..N-1,  bwd = LSTM over n = N-1..0   (H each)
//   Q_n  = w2 . tanh(W1 [fwd_n; bwd_n] + b1) + b2
//
// Weights are shared across frames, so one set of parameters scores any N.
// All parameters live in one flat vector; the accessors below are views
// into it. Layout (each matrix column-major):
//   We(E x F) be(E) | fwd: Wx(4H x E) Wh(4H x H) b(4H) | bwd: same |
//   W1(D x 2H) b1(D) w2(1 x D) b2(1)
// Gate blocks inside the 4H rows are ordered input, forget, cell, output.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framepick/episode.hpp"
#include "framepick/error.hpp"
#include "framepick/rng.hpp"

namespace framepick {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatMap = Eigen::Map<MatrixXd>;
using ConstMatMap = Eigen::Map<const MatrixXd>;
using VecMap = Eigen::Map<VectorXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;

struct NetworkShape {
  int features = 2;
  int embed = 32;
  int hidden = 64;
  int head = 64;

  bool operator==(const NetworkShape&) const = default;

  struct Offsets {
    std::size_t we, be, cell[2], w1, b1, w2, b2, total;
  };

  Offsets offsets() const {
    const std::size_t F = features, E = embed, H = hidden, D = head;
    const std::size_t cell_size = 4 * H * E + 4 * H * H + 4 * H;
    Offsets o{};
    o.we = 0;
    o.be = o.we + E * F;
    o.cell[0] = o.be + E;
    o.cell[1] = o.cell[0] + cell_size;
    o.w1 = o.cell[1] + cell_size;
    o.b1 = o.w1 + D * 2 * H;
    o.w2 = o.b1 + D;
    o.b2 = o.w2 + D;
    o.total = o.b2 + 1;
    return o;
  }

  std::size_t parameter_count() const { return offsets().total; }

  void validate() const {
    if (features != 2) throw DimensionError("feature dimension must be 2");
    if (embed < 1 || hidden < 1 || head < 1) throw DimensionError("layer sizes must be positive");
  }
};

// Which state components reach the network, and how history is normalized.
struct FeatureSpec {
  double history_scale = 5.0;
  bool use_quality = true;
  bool use_history = true;

  bool operator==(const FeatureSpec&) const = default;
};

template <typename Storage>
class ParamViews {
 public:
  static constexpr bool kConst = std::is_const_v<std::remove_pointer_t<Storage>>;
  using M = std::conditional_t<kConst, ConstMatMap, MatMap>;
  using V = std::conditional_t<kConst, ConstVecMap, VecMap>;

  ParamViews(Storage data, const NetworkShape& s) : d_(data), s_(s), o_(s.offsets()) {}

  M embed_w() const { return M(d_ + o_.we, s_.embed, s_.features); }
  V embed_b() const { return V(d_ + o_.be, s_.embed); }
  M wx(int dir) const { return M(d_ + o_.cell[dir], 4 * s_.hidden, s_.embed); }
  M wh(int dir) const { return M(d_ + o_.cell[dir] + 4 * s_.hidden * s_.embed, 4 * s_.hidden, s_.hidden); }
  V b(int dir) const {
    return V(d_ + o_.cell[dir] + 4 * s_.hidden * s_.embed + 4 * s_.hidden * s_.hidden, 4 * s_.hidden);
  }
  M w1() const { return M(d_ + o_.w1, s_.head, 2 * s_.hidden); }
  V b1() const { return V(d_ + o_.b1, s_.head); }
  V w2() const { return V(d_ + o_.w2, s_.head); }
  auto& b2() const { return d_[o_.b2]; }

 private:
  Storage d_;
  NetworkShape s_;
  NetworkShape::Offsets o_;
};

class QNetworkParams {
 public:
  QNetworkParams() : QNetworkParams(NetworkShape{}) {}
  explicit QNetworkParams(const NetworkShape& shape) : shape_(shape) {
    shape_.validate();
    values_ = VectorXd::Zero(static_cast<Eigen::Index>(shape_.parameter_count()));
  }

  const NetworkShape& shape() const noexcept { return shape_; }
  VectorXd& values() noexcept { return values_; }
  const VectorXd& values() const noexcept { return values_; }

  ParamViews<double*> views() { return {values_.data(), shape_}; }
  ParamViews<const double*> views() const { return {values_.data(), shape_}; }

  bool operator==(const QNetworkParams& o) const { return shape_ == o.shape_ && values_ == o.values_; }

 private:
  NetworkShape shape_;
  VectorXd values_;
};

// Same layout as the parameters.
using GradientBundle = QNetworkParams;

/// Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1.
inline QNetworkParams init_params(const NetworkShape& shape, std::uint64_t seed) {
  QNetworkParams p(shape);
  Rng rng(seed);
  auto fill = [&](auto&& block, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < block.cols(); ++j)
      for (Eigen::Index i = 0; i < block.rows(); ++i) block(i, j) = uniform(rng, -bound, bound);
  };
  auto v = p.views();
  fill(v.embed_w(), shape.features);
  fill(v.embed_b(), shape.features);
  for (int dir = 0; dir < 2; ++dir) {
    fill(v.wx(dir), shape.embed);
    fill(v.wh(dir), shape.hidden);
    fill(v.b(dir), shape.hidden);
    v.b(dir).segment(shape.hidden, shape.hidden).setConstant(1.0);
  }
  fill(v.w1(), 2.0 * shape.hidden);
  fill(v.b1(), 2.0 * shape.hidden);
  fill(v.w2(), shape.head);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.head));
  v.b2() = uniform(rng, -bound, bound);
  return p;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct DirectionCache {
  MatrixXd gates;  // 4H x N, post-activation
  MatrixXd c;      // H x N
  MatrixXd h;      // H x N
};

struct ForwardCache {
  MatrixXd x;  // F x N
  MatrixXd z;  // E x N
  std::array<DirectionCache, 2> dir;
};

inline MatrixXd features(const AgentState& s, const FeatureSpec& spec) {
  const auto n = static_cast<Eigen::Index>(s.n_frames());
  MatrixXd x(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = s.quality()[i];
    const double h = static_cast<double>(s.history()[i]) / spec.history_scale;
    if (!std::isfinite(q) || !std::isfinite(h)) throw NumericError("input", "frame " + std::to_string(i));
    x(0, i) = spec.use_quality ? q : 0.0;
    x(1, i) = spec.use_history ? h : 0.0;
  }
  return x;
}

inline void run_direction(const ParamViews<const double*>& v, int dir, const MatrixXd& z, DirectionCache& out) {
  const Eigen::Index n = z.cols();
  const Eigen::Index H = v.wh(dir).cols();
  MatrixXd pre = v.wx(dir) * z;
  pre.colwise() += v.b(dir);
  out.gates.resize(4 * H, n);
  out.c.resize(H, n);
  out.h.resize(H, n);
  VectorXd h_prev = VectorXd::Zero(H), c_prev = VectorXd::Zero(H), a(4 * H);
  for (Eigen::Index step = 0; step < n; ++step) {
    const Eigen::Index t = dir == 0 ? step : n - 1 - step;
    a.noalias() = pre.col(t);
    a.noalias() += v.wh(dir) * h_prev;
    auto g = out.gates.col(t);
    for (Eigen::Index k = 0; k < H; ++k) {
      g(k) = sigmoid(a(k));
      g(H + k) = sigmoid(a(H + k));
      g(2 * H + k) = std::tanh(a(2 * H + k));
      g(3 * H + k) = sigmoid(a(3 * H + k));
      const double c = g(H + k) * c_prev(k) + g(k) * g(2 * H + k);
      out.c(k, t) = c;
      out.h(k, t) = g(3 * H + k) * std::tanh(c);
    }
    h_prev = out.h.col(t);
    c_prev = out.c.col(t);
  }
}

inline ForwardCache encode(const QNetworkParams& params, const AgentState& state, const FeatureSpec& spec) {
  if (state.n_frames() == 0) throw DimensionError("state has no frames");
  const auto v = params.views();
  ForwardCache cache;
  cache.x = features(state, spec);
  cache.z = v.embed_w() * cache.x;
  cache.z.colwise() += v.embed_b();
  run_direction(v, 0, cache.z, cache.dir[0]);
  run_direction(v, 1, cache.z, cache.dir[1]);
  return cache;
}

}  // namespace detail

/// Q-value for every frame of `state`.
inline std::vector<double> forward(const QNetworkParams& params, const AgentState& state,
                                   const FeatureSpec& spec = {}) {
  const auto cache = detail::encode(params, state, spec);
  const auto v = params.views();
  const Eigen::Index H = params.shape().hidden;
  const Eigen::Index n = cache.z.cols();
  MatrixXd u = v.w1().leftCols(H) * cache.dir[0].h;
  u.noalias() += v.w1().rightCols(H) * cache.dir[1].h;
  u.colwise() += v.b1();
  std::vector<double> q(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    q[i] = v.w2().dot(u.col(i).array().tanh().matrix()) + v.b2();
    if (!std::isfinite(q[i])) throw NumericError("head", "Q value for frame " + std::to_string(i));
  }
  return q;
}

// Lowest index wins ties.
inline FrameIndex argmax_frame(const std::vector<double>& values) {
  if (values.empty()) throw DimensionError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return FrameIndex{best};
}

/// Squared error of Q(state)[action] against `target`; reverse-mode
/// gradients are accumulated into `grads` scaled by `weight`. Returns the
/// unweighted loss.
inline double accumulate_loss_and_grad(const QNetworkParams& params, const AgentState& state, FrameIndex action,
                                       double target, GradientBundle& grads, double weight = 1.0,
                                       const FeatureSpec& spec = {}) {
  if (!(grads.shape() == params.shape())) throw DimensionError("gradient shape mismatch");
  if (action.value >= state.n_frames()) throw IndexError("action out of range");
  const auto cache = detail::encode(params, state, spec);
  const auto v = params.views();
  auto gv = grads.views();
  const Eigen::Index H = params.shape().hidden;
  const Eigen::Index n = cache.z.cols();
  const Eigen::Index a = static_cast<Eigen::Index>(action.value);

  VectorXd hcat(2 * H);
  hcat << cache.dir[0].h.col(a), cache.dir[1].h.col(a);
  const VectorXd t = (v.w1() * hcat + v.b1()).array().tanh().matrix();
  const double q = v.w2().dot(t) + v.b2();
  if (!std::isfinite(q)) throw NumericError("head", "Q value for selected frame");
  const double err = q - target;
  const double loss = err * err;
  const double dq = weight * 2.0 * err;

  gv.w2() += dq * t;
  gv.b2() += dq;
  const VectorXd du = (dq * v.w2()).cwiseProduct((1.0 - t.array().square()).matrix());
  gv.w1().noalias() += du * hcat.transpose();
  gv.b1() += du;
  const VectorXd dh_cat = v.w1().transpose() * du;

  MatrixXd dz = MatrixXd::Zero(cache.z.rows(), n);
  for (int dir = 0; dir < 2; ++dir) {
    const auto& dc_cache = cache.dir[dir];
    // Steps that influence position a: 0..a forward, a..N-1 backward.
    const Eigen::Index first = dir == 0 ? 0 : a;
    const Eigen::Index count = dir == 0 ? a + 1 : n - a;
    MatrixXd da = MatrixXd::Zero(4 * H, n);
    MatrixXd h_prev = MatrixXd::Zero(H, n);
    VectorXd dh = dh_cat.segment(dir * H, H);
    VectorXd dc = VectorXd::Zero(H);
    for (Eigen::Index k = 0; k < count; ++k) {
      const Eigen::Index tt = dir == 0 ? a - k : a + k;
      const Eigen::Index prev = dir == 0 ? tt - 1 : tt + 1;
      const bool has_prev = prev >= 0 && prev < n;
      const auto g = dc_cache.gates.col(tt);
      for (Eigen::Index j = 0; j < H; ++j) {
        const double i_g = g(j), f_g = g(H + j), c_g = g(2 * H + j), o_g = g(3 * H + j);
        const double tc = std::tanh(dc_cache.c(j, tt));
        const double c_prev = has_prev ? dc_cache.c(j, prev) : 0.0;
        const double d_o = dh(j) * tc;
        dc(j) += dh(j) * o_g * (1.0 - tc * tc);
        da(j, tt) = dc(j) * c_g * i_g * (1.0 - i_g);
        da(H + j, tt) = dc(j) * c_prev * f_g * (1.0 - f_g);
        da(2 * H + j, tt) = dc(j) * i_g * (1.0 - c_g * c_g);
        da(3 * H + j, tt) = d_o * o_g * (1.0 - o_g);
        dc(j) *= f_g;
      }
      if (has_prev) h_prev.col(tt) = dc_cache.h.col(prev);
      dh.noalias() = v.wh(dir).transpose() * da.col(tt);
    }
    const auto block = da.middleCols(first, count);
    gv.wx(dir).noalias() += block * cache.z.middleCols(first, count).transpose();
    gv.wh(dir).noalias() += block * h_prev.middleCols(first, count).transpose();
    gv.b(dir) += block.rowwise().sum();
    dz.middleCols(first, count).noalias() += v.wx(dir).transpose() * block;
  }
  gv.embed_w().noalias() += dz * cache.x.transpose();
  gv.embed_b() += dz.rowwise().sum();
  if (!grads.values().allFinite()) throw NumericError("gradient", "non-finite parameter gradient");
  return loss;
}

struct LossAndGrad {
  double loss = 0.0;
  GradientBundle grads;
};

inline LossAndGrad loss_and_grad(const QNetworkParams& params, const AgentState& state, FrameIndex action,
                                 double target, const FeatureSpec& spec = {}) {
  LossAndGrad out{0.0, GradientBundle(params.shape())};
  out.loss = accumulate_loss_and_grad(params, state, action, target, out.grads, 1.0, spec);
  return out;
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  VectorXd first_moment;
  VectorXd second_moment;
  long long step_count = 0;

  AdamState() = default;
  explicit AdamState(const NetworkShape& shape)
      : first_moment(VectorXd::Zero(static_cast<Eigen::Index>(shape.parameter_count()))),
        second_moment(VectorXd::Zero(static_cast<Eigen::Index>(shape.parameter_count()))) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(QNetworkParams& params, const GradientBundle& grads, AdamState& adam, double lr) {
  const auto n = params.values().size();
  if (grads.values().size() != n || adam.first_moment.size() != n || adam.second_moment.size() != n) {
    throw DimensionError("adam_step: parameter, gradient and moment sizes differ");
  }
  ++adam.step_count;
  const auto& g = grads.values();
  adam.first_moment = kAdamBeta1 * adam.first_moment + (1.0 - kAdamBeta1) * g;
  adam.second_moment = kAdamBeta2 * adam.second_moment + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step_count));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step_count));
  params.values().array() -=
      lr * (adam.first_moment.array() / c1) / ((adam.second_moment.array() / c2).sqrt() + kAdamEpsilon);
}

// ---------------------------------------------------------------------------
// Parameter files. Little-endian throughout:
//   char[4] "FPQN" | u32 version (1) | u32 F | u32 E | u32 H | u32 D (head)
//   u32 feature flags (bit0 quality, bit1 history) | f64 history scale
//   u64 parameter count | f64[count] values in the flat layout above

inline constexpr std::array<char, 4> kParamMagic{'F', 'P', 'Q', 'N'};
inline constexpr std::uint32_t kParamVersion = 1;

struct Checkpoint {
  QNetworkParams params;
  FeatureSpec features;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class LeReader {
 public:
  explicit LeReader(const std::string& bytes) : b_(bytes) {}
  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > b_.size()) throw FormatError(std::string("parameter file truncated reading ") + what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::size_t pos_ = 0;

 private:
  const std::string& b_;
};

}  // namespace detail

inline std::string encode_params(const QNetworkParams& params, const FeatureSpec& spec = {}) {
  std::string out(kParamMagic.begin(), kParamMagic.end());
  const auto& s = params.shape();
  detail::put_le<std::uint32_t>(out, kParamVersion);
  detail::put_le<std::uint32_t>(out, s.features);
  detail::put_le<std::uint32_t>(out, s.embed);
  detail::put_le<std::uint32_t>(out, s.hidden);
  detail::put_le<std::uint32_t>(out, s.head);
  detail::put_le<std::uint32_t>(out, (spec.use_quality ? 1u : 0u) | (spec.use_history ? 2u : 0u));
  detail::put_le<double>(out, spec.history_scale);
  detail::put_le<std::uint64_t>(out, params.values().size());
  for (Eigen::Index i = 0; i < params.values().size(); ++i) detail::put_le<double>(out, params.values()[i]);
  return out;
}

inline Checkpoint decode_params(const std::string& bytes) {
  if (bytes.size() < 4 || !std::equal(kParamMagic.begin(), kParamMagic.end(), bytes.begin())) {
    throw FormatError("bad magic: expected \"FPQN\"");
  }
  detail::LeReader r(bytes);
  r.pos_ = 4;
  const auto version = r.get<std::uint32_t>("version");
  if (version != kParamVersion) throw FormatError("unsupported parameter file version " + std::to_string(version));
  NetworkShape shape;
  shape.features = static_cast<int>(r.get<std::uint32_t>("F"));
  shape.embed = static_cast<int>(r.get<std::uint32_t>("E"));
  shape.hidden = static_cast<int>(r.get<std::uint32_t>("H"));
  shape.head = static_cast<int>(r.get<std::uint32_t>("head width"));
  try {
    shape.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("bad shape in parameter file: ") + e.what());
  }
  const auto flags = r.get<std::uint32_t>("feature flags");
  FeatureSpec spec;
  spec.use_quality = flags & 1u;
  spec.use_history = flags & 2u;
  spec.history_scale = r.get<double>("history scale");
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != shape.parameter_count()) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match shape (" +
                      std::to_string(shape.parameter_count()) + ")");
  }
  Checkpoint ck{QNetworkParams(shape), spec};
  for (std::uint64_t i = 0; i < count; ++i) ck.params.values()[static_cast<Eigen::Index>(i)] = r.get<double>("values");
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameters");
  return ck;
}

inline void save_params(const QNetworkParams& params, const std::filesystem::path& path, const FeatureSpec& spec = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_params(params, spec);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

inline QNetworkParams load_params(const std::filesystem::path& path) { return load_checkpoint(path).params; }

}  // namespace framepick
