#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flforge/excite.hpp"
#include "flforge/matrix.hpp"
#include "flforge/tape.hpp"

namespace flforge {

struct ModelShape {
  int n = 2;        // state dimension
  int hidden = 32;  // units per hidden layer
  int depth = 2;    // hidden layers per net
  int blocks = 1;   // coupling blocks in the state transform
  double T = 1e-3;  // sampling period the linear pair is tied to

  bool operator==(const ModelShape&) const = default;
};

/// Standard: v = (u - alpha(x)) / beta(x).
/// TwoStage: the alpha slot holds gamma, v = u / beta(x) + gamma(x).
enum class ModelVariant { Standard, TwoStage };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

inline int ff_param_count(int in, int hidden, int depth) {
  return hidden * in + hidden + (depth - 1) * (hidden * hidden + hidden) + hidden + 1;
}

/// Offsets of every named tensor inside the flat parameter vector. Order:
/// alpha net, beta net, coupling nets (block-major, s then t per component),
/// W_l, b_l, A, B.
struct ParamLayout {
  explicit ParamLayout(const ModelShape& shape);

  ModelShape shape;
  int net_params = 0;     // alpha/beta net size
  int st_net_params = 0;  // per s or t net
  int alpha_off = 0;
  int beta_off = 0;
  int st_off = 0;
  int wl_off = 0;
  int bl_off = 0;
  int a_off = 0;
  int b_off = 0;
  int total = 0;

  int s_net_off(int block, int i) const { return st_off + (block * 2 * shape.n + 2 * i) * st_net_params; }
  int t_net_off(int block, int i) const { return st_off + (block * 2 * shape.n + 2 * i + 1) * st_net_params; }
};

struct ModelParameters {
  ModelShape shape;
  ModelVariant variant = ModelVariant::Standard;
  std::uint64_t seed = 0;
  double eps1 = 1e-2;  // beta clamp; part of the model's function
  std::vector<double> theta;
};

/// Uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) net weights, zeroed final
/// layers for every s/t net (so the state transform starts as the identity),
/// W_l = I, b_l = 0, and (A, B) the zero-order-hold discretization of the
/// continuous Brunovsky chain at period T.
ModelParameters init_params(const ModelShape& shape, std::uint64_t seed,
                            ModelVariant variant = ModelVariant::Standard);

/// ZOH discretization of the Brunovsky integrator chain: A[i][k] =
/// T^(k-i)/(k-i)! for k >= i, B[i] = T^(n-i)/(n-i)! (0-based rows).
void brunovsky_zoh(int n, double T, Matd& A, std::vector<double>& B);

// ---- templated model evaluation (S = double or Value) ----------------------

template <class S>
S ff_eval(std::span<const S> params, std::span<const S> input, int hidden, int depth) {
  std::vector<S> cur(input.begin(), input.end());
  std::size_t p = 0;
  for (int layer = 0; layer <= depth; ++layer) {
    const int width = (layer == depth) ? 1 : hidden;
    std::vector<S> next;
    next.reserve(static_cast<std::size_t>(width));
    const int fan = static_cast<int>(cur.size());
    for (int jj = 0; jj < width; ++jj) {
      S acc = params[p + static_cast<std::size_t>(width) * fan + static_cast<std::size_t>(jj)];  // bias
      for (int kk = 0; kk < fan; ++kk)
        acc = muladd(params[p + static_cast<std::size_t>(jj) * fan + static_cast<std::size_t>(kk)],
                     cur[static_cast<std::size_t>(kk)], acc);
      next.push_back(layer == depth ? acc : silu(acc));
    }
    p += static_cast<std::size_t>(width) * fan + static_cast<std::size_t>(width);
    cur = std::move(next);
  }
  return cur[0];
}

/// p(a) = sgn(a) * max(|a|, eps1); sgn(0) = +1, so the result is never 0.
template <class S>
S clamp_away_from_zero(const S& a, double eps1, [[maybe_unused]] Tape* tape) {
  if constexpr (std::is_same_v<S, Value>) {
    return sign(a) * max(tape->constant(eps1), abs(a));
  } else {
    return sign(a) * max(eps1, std::fabs(a));
  }
}

template <class S>
struct ParamsView {
  std::span<const S> theta;
  const ParamLayout* layout;

  std::span<const S> alpha_net() const { return theta.subspan(static_cast<std::size_t>(layout->alpha_off), static_cast<std::size_t>(layout->net_params)); }
  std::span<const S> beta_net() const { return theta.subspan(static_cast<std::size_t>(layout->beta_off), static_cast<std::size_t>(layout->net_params)); }
  std::span<const S> s_net(int b, int i) const { return theta.subspan(static_cast<std::size_t>(layout->s_net_off(b, i)), static_cast<std::size_t>(layout->st_net_params)); }
  std::span<const S> t_net(int b, int i) const { return theta.subspan(static_cast<std::size_t>(layout->t_net_off(b, i)), static_cast<std::size_t>(layout->st_net_params)); }
  Mat<S> wl() const {
    const int n = layout->shape.n;
    Mat<S> out(n, n);
    for (int i = 0; i < n * n; ++i) out.m[static_cast<std::size_t>(i)] = theta[static_cast<std::size_t>(layout->wl_off + i)];
    return out;
  }
  std::span<const S> bl() const { return theta.subspan(static_cast<std::size_t>(layout->bl_off), static_cast<std::size_t>(layout->shape.n)); }
  Mat<S> a_mat() const {
    const int n = layout->shape.n;
    Mat<S> out(n, n);
    for (int i = 0; i < n * n; ++i) out.m[static_cast<std::size_t>(i)] = theta[static_cast<std::size_t>(layout->a_off + i)];
    return out;
  }
  std::span<const S> b_vec() const { return theta.subspan(static_cast<std::size_t>(layout->b_off), static_cast<std::size_t>(layout->shape.n)); }
};

template <class S>
std::vector<S> phi_forward(const ParamsView<S>& pv, std::span<const S> x) {
  const ModelShape& sh = pv.layout->shape;
  const int n = sh.n;
  std::vector<S> a(x.begin(), x.end());
  for (int b = 0; b < sh.blocks; ++b) {
    std::vector<S> z(static_cast<std::size_t>(n));
    std::vector<S> args;
    args.reserve(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
      args.clear();
      for (int k = i + 1; k < n; ++k) args.push_back(a[static_cast<std::size_t>(k)]);
      for (int k = 0; k < i; ++k) args.push_back(z[static_cast<std::size_t>(k)]);
      const S s_i = tanh(ff_eval<S>(pv.s_net(b, i), args, sh.hidden, sh.depth));
      const S t_i = ff_eval<S>(pv.t_net(b, i), args, sh.hidden, sh.depth);
      z[static_cast<std::size_t>(i)] = muladd(a[static_cast<std::size_t>(i)], exp(s_i), t_i);
    }
    a = std::move(z);
  }
  // affine output layer
  const Mat<S> wl = pv.wl();
  const std::span<const S> bl = pv.bl();
  std::vector<S> zbar(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    S acc = bl[static_cast<std::size_t>(i)];
    for (int k = 0; k < n; ++k) acc = muladd(wl.at(i, k), a[static_cast<std::size_t>(k)], acc);
    zbar[static_cast<std::size_t>(i)] = acc;
  }
  return zbar;
}

template <class S>
std::vector<S> phi_inverse(const ParamsView<S>& pv, std::span<const S> zbar) {
  const ModelShape& sh = pv.layout->shape;
  const int n = sh.n;
  const Mat<S> wl = pv.wl();
  const std::span<const S> bl = pv.bl();
  std::vector<S> rhs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rhs[static_cast<std::size_t>(i)] = zbar[static_cast<std::size_t>(i)] - bl[static_cast<std::size_t>(i)];
  // Branch-free Cramer solve so the structure is safe to bake into a tape.
  std::vector<S> z = solve_cramer<S>(wl, rhs);
  for (int b = sh.blocks - 1; b >= 0; --b) {
    std::vector<S> a(static_cast<std::size_t>(n));
    std::vector<S> args;
    args.reserve(static_cast<std::size_t>(n - 1));
    for (int i = n - 1; i >= 0; --i) {
      args.clear();
      for (int k = i + 1; k < n; ++k) args.push_back(a[static_cast<std::size_t>(k)]);
      for (int k = 0; k < i; ++k) args.push_back(z[static_cast<std::size_t>(k)]);
      const S s_i = tanh(ff_eval<S>(pv.s_net(b, i), args, sh.hidden, sh.depth));
      const S t_i = ff_eval<S>(pv.t_net(b, i), args, sh.hidden, sh.depth);
      a[static_cast<std::size_t>(i)] = (z[static_cast<std::size_t>(i)] - t_i) * exp(-s_i);
    }
    z = std::move(a);
  }
  return z;
}

// ---- loss configuration -----------------------------------------------------

struct LossConfig {
  double eps1 = 1e-2;  // beta clamp
  double eps2 = 1e-4;  // controllability / affine-layer determinant floor
  double eps3 = 10.0;  // new-input magnitude floor; should exceed max |u|
  double a1 = 1.0;
  double a2 = 1e-3;
  double a3 = 1e-3;
  double a4 = 0.0;   // |det A| - 1 regularizer; 1e-2 for the eigenvalue study
  double aW = 1e-3;  // affine-layer invertibility penalty
  std::vector<double> state_weights;  // empty = all ones

  std::vector<double> weights_for(int n) const;
  void validate() const;  // warns when a2 or a3 are not << a1
};

// ---- plain-double convenience evaluation ------------------------------------

double alpha_eval(const ModelParameters& p, std::span<const double> x);      // raw alpha (or gamma) net
double beta_eval(const ModelParameters& p, std::span<const double> x);       // clamped, never 0
std::vector<double> phi_forward(const ModelParameters& p, std::span<const double> x);
std::vector<double> phi_inverse(const ModelParameters& p, std::span<const double> z);
double input_transform(const ModelParameters& p, std::span<const double> x, double u);

/// Double-level view of a linearization; the gauge transform wraps it.
struct LinearizingMap {
  int n = 0;
  std::function<double(std::span<const double>)> alpha;  // raw feedforward value
  std::function<double(std::span<const double>)> beta;   // clamped
  std::function<std::vector<double>(std::span<const double>)> phi;
  std::function<std::vector<double>(std::span<const double>)> phi_inv;
  Matd A;
  std::vector<double> B;
  std::function<double(std::span<const double>, double)> v;  // input transform
};

LinearizingMap make_map(const ModelParameters& p);

/// (phi, alpha + K phi beta, mu beta, A + B K, mu B): the equivalent family
/// of linearizations.
LinearizingMap gauge_transform(const LinearizingMap& base, std::span<const double> K, double mu);

/// Algorithm-style window prediction: v at every step comes from the
/// measured states; returns predictions for steps 1..m.
std::vector<std::vector<double>> predict_window(const LinearizingMap& map, const Window& w);
std::vector<std::vector<double>> predict_window(const ModelParameters& p, const Window& w);

/// Open-loop rollout: v is recomputed from the predicted states, so errors
/// accumulate; used for multi-step drift evaluation.
std::vector<std::vector<double>> predict_open_loop(const LinearizingMap& map, std::span<const double> x0,
                                                   std::span<const double> u);
std::vector<std::vector<double>> predict_open_loop(const ModelParameters& p, std::span<const double> x0,
                                                   std::span<const double> u);

// ---- standalone losses (double level, mirrored inside WindowProgram) --------

double loss_l1(const Window& w, const std::vector<std::vector<double>>& xhat, std::span<const double> weights);
double loss_l2(const Matd& A, std::span<const double> B, double eps2);
double loss_l3(std::span<const double> v, double eps3);
double loss_l4(const Matd& A);
double loss_wl(const Matd& Wl, double eps2);
Matd controllability_matrix(const Matd& A, std::span<const double> B);

// ---- compiled training program ----------------------------------------------

/// Fixed computation for one window: Algorithm-style prediction, the full
/// loss, and reverse-mode gradients for every parameter, recorded once and
/// replayed per window. Leaf order: theta, then u (m entries; absent in
/// StageOne), then x ((m+1)*n entries).
class WindowProgram {
 public:
  enum class Mode { Standard, StageOne, StageTwo };

  struct Outputs {
    double l1 = 0, l2 = 0, l3 = 0, l4 = 0, lw = 0, total = 0;
    double det_gamma = 0, det_wl = 0, max_v = 0;
  };

  WindowProgram(const ModelShape& shape, int m, const LossConfig& cfg, Mode mode = Mode::Standard);

  int m() const { return m_; }
  int param_count() const { return layout_.total; }
  const ParamLayout& layout() const { return layout_; }
  std::int64_t node_count() const { return tape_.node_count(); }

  /// Loss and gradient for a batch of windows. grads has one param_count()
  /// stripe per window; windows are processed in lane groups of 8, parallel
  /// across groups, results independent of the thread count.
  void run_batch(std::span<const double> theta, std::span<const Window> windows, std::vector<double>& grads,
                 std::vector<Outputs>& outs, int threads) const;

  /// Loss terms only (no gradient replay) for one window.
  Outputs eval_window(std::span<const double> theta, const Window& w) const;

  /// Max relative error of the recorded gradient against central differences
  /// over every parameter: max |g_ad - g_fd| / max(1, |g_fd|).
  double check_gradient_fd(std::span<const double> theta, const Window& w, double h) const;

 private:
  void fill_leaves(std::span<const double> theta, const Window& w, int lane, std::span<double> leaf_buf) const;
  Outputs extract(std::span<const double> ws, int lane, int lanes) const;

  std::uint64_t prog_id_ = 0;  // distinguishes thread-local workspaces
  ModelShape shape_;
  int m_;
  LossConfig cfg_;
  Mode mode_;
  ParamLayout layout_;
  Tape tape_;
  int n_leaves_ = 0;
  std::int32_t loss_end_ = 0;  // replay bound when only the loss is needed
  // output node ids
  std::int32_t id_l1_ = -1, id_l2_ = -1, id_l3_ = -1, id_l4_ = -1, id_lw_ = -1, id_total_ = -1;
  std::int32_t id_detg_ = -1, id_detwl_ = -1, id_maxv_ = -1;
  std::vector<std::int32_t> id_grads_;
};

}  // namespace flforge
