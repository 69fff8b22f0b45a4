#include "flforge/flmodel.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>

#include "flforge/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flforge {

std::string to_string(ModelVariant v) { return v == ModelVariant::Standard ? "standard" : "two_stage"; }

ModelVariant variant_from_string(const std::string& s) {
  if (s == "standard") return ModelVariant::Standard;
  if (s == "two_stage") return ModelVariant::TwoStage;
  throw std::invalid_argument("unknown model variant: " + s);
}

ParamLayout::ParamLayout(const ModelShape& sh) : shape(sh) {
  net_params = ff_param_count(sh.n, sh.hidden, sh.depth);
  st_net_params = ff_param_count(sh.n - 1, sh.hidden, sh.depth);
  alpha_off = 0;
  beta_off = alpha_off + net_params;
  st_off = beta_off + net_params;
  wl_off = st_off + sh.blocks * 2 * sh.n * st_net_params;
  bl_off = wl_off + sh.n * sh.n;
  a_off = bl_off + sh.n;
  b_off = a_off + sh.n * sh.n;
  total = b_off + sh.n;
}

void brunovsky_zoh(int n, double T, Matd& A, std::vector<double>& B) {
  A = Matd(n, n);
  B.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double f = 1.0;
    for (int k = i; k < n; ++k) {
      if (k > i) f *= T / (k - i);
      A.at(i, k) = f;
    }
    double bf = 1.0;
    for (int p = 1; p <= n - i; ++p) bf *= T / p;
    B[static_cast<std::size_t>(i)] = bf;
  }
}

namespace {

// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) layer by
// layer; the draw sequence is fixed even for zeroed layers so seeds stay
// comparable across variants.
void init_net(std::span<double> params, int in, int hidden, int depth, Rng& rng, bool zero_final) {
  std::size_t p = 0;
  int fan = in;
  for (int layer = 0; layer <= depth; ++layer) {
    const int width = (layer == depth) ? 1 : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
    const bool zero = zero_final && layer == depth;
    for (int i = 0; i < width * fan + width; ++i) {
      const double v = uniform(rng, -bound, bound);
      params[p++] = zero ? 0.0 : v;
    }
    fan = width;
  }
}

}  // namespace

ModelParameters init_params(const ModelShape& shape, std::uint64_t seed, ModelVariant variant) {
  if (shape.n < 2 || shape.n > 4) throw std::invalid_argument("init_params: n must be 2..4");
  if (shape.T <= 0.0) throw std::invalid_argument("init_params: T must be positive");
  ParamLayout layout(shape);
  ModelParameters p;
  p.shape = shape;
  p.variant = variant;
  p.seed = seed;
  p.theta.assign(static_cast<std::size_t>(layout.total), 0.0);
  Rng rng(seed);

  std::span<double> theta(p.theta);
  init_net(theta.subspan(static_cast<std::size_t>(layout.alpha_off)), shape.n, shape.hidden, shape.depth, rng, false);
  init_net(theta.subspan(static_cast<std::size_t>(layout.beta_off)), shape.n, shape.hidden, shape.depth, rng, false);
  for (int b = 0; b < shape.blocks; ++b)
    for (int i = 0; i < shape.n; ++i) {
      init_net(theta.subspan(static_cast<std::size_t>(layout.s_net_off(b, i))), shape.n - 1, shape.hidden, shape.depth,
               rng, true);
      init_net(theta.subspan(static_cast<std::size_t>(layout.t_net_off(b, i))), shape.n - 1, shape.hidden, shape.depth,
               rng, true);
    }
  for (int i = 0; i < shape.n; ++i) p.theta[static_cast<std::size_t>(layout.wl_off + i * shape.n + i)] = 1.0;

  Matd A;
  std::vector<double> B;
  brunovsky_zoh(shape.n, shape.T, A, B);
  for (int i = 0; i < shape.n * shape.n; ++i)
    p.theta[static_cast<std::size_t>(layout.a_off + i)] = A.m[static_cast<std::size_t>(i)];
  for (int i = 0; i < shape.n; ++i) p.theta[static_cast<std::size_t>(layout.b_off + i)] = B[static_cast<std::size_t>(i)];
  return p;
}

std::vector<double> LossConfig::weights_for(int n) const {
  if (state_weights.empty()) return std::vector<double>(static_cast<std::size_t>(n), 1.0);
  if (static_cast<int>(state_weights.size()) != n)
    throw std::invalid_argument("LossConfig: state_weights size must match n");
  for (double w : state_weights)
    if (w <= 0.0) throw std::invalid_argument("LossConfig: state_weights must be positive");
  return state_weights;
}

void LossConfig::validate() const {
  if (eps1 <= 0.0 || eps1 >= 1.0 || eps2 <= 0.0 || eps2 >= 1.0 || eps3 <= 0.0)
    throw std::invalid_argument("LossConfig: eps1/eps2 must be in (0,1) and eps3 positive");
  if (a1 < 0.0 || a2 < 0.0 || a3 < 0.0 || a4 < 0.0 || aW < 0.0)
    throw std::invalid_argument("LossConfig: weights must be non-negative");
  if (a1 > 0.0 && (a2 > 0.1 * a1 || a3 > 0.1 * a1))
    std::cerr << "warning: a2 and a3 are expected to be much smaller than a1\n";
}

// ---- plain-double evaluation -------------------------------------------------

double alpha_eval(const ModelParameters& p, std::span<const double> x) {
  ParamLayout layout(p.shape);
  ParamsView<double> pv{p.theta, &layout};
  return ff_eval<double>(pv.alpha_net(), x, p.shape.hidden, p.shape.depth);
}

double beta_eval(const ModelParameters& p, std::span<const double> x) {
  ParamLayout layout(p.shape);
  ParamsView<double> pv{p.theta, &layout};
  const double raw = ff_eval<double>(pv.beta_net(), x, p.shape.hidden, p.shape.depth);
  return clamp_away_from_zero<double>(raw, p.eps1, nullptr);
}

std::vector<double> phi_forward(const ModelParameters& p, std::span<const double> x) {
  ParamLayout layout(p.shape);
  ParamsView<double> pv{p.theta, &layout};
  return phi_forward<double>(pv, x);
}

std::vector<double> phi_inverse(const ModelParameters& p, std::span<const double> z) {
  ParamLayout layout(p.shape);
  ParamsView<double> pv{p.theta, &layout};
  return phi_inverse<double>(pv, z);
}

double input_transform(const ModelParameters& p, std::span<const double> x, double u) {
  return make_map(p).v(x, u);
}

LinearizingMap make_map(const ModelParameters& p) {
  LinearizingMap map;
  map.n = p.shape.n;
  const ModelParameters copy = p;  // owned by the closures
  map.beta = [copy](std::span<const double> x) { return beta_eval(copy, x); };
  map.phi = [copy](std::span<const double> x) { return phi_forward(copy, x); };
  map.phi_inv = [copy](std::span<const double> z) { return phi_inverse(copy, z); };
  ParamLayout layout(p.shape);
  ParamsView<double> pv{p.theta, &layout};
  map.A = pv.a_mat();
  map.B.assign(pv.b_vec().begin(), pv.b_vec().end());
  if (p.variant == ModelVariant::Standard) {
    map.alpha = [copy](std::span<const double> x) { return alpha_eval(copy, x); };
    map.v = [copy](std::span<const double> x, double u) {
      return (u - alpha_eval(copy, x)) / beta_eval(copy, x);
    };
  } else {
    // alpha slot holds gamma; v = u/beta + gamma, equivalent to alpha = -beta*gamma.
    map.alpha = [copy](std::span<const double> x) { return -beta_eval(copy, x) * alpha_eval(copy, x); };
    map.v = [copy](std::span<const double> x, double u) {
      return u / beta_eval(copy, x) + alpha_eval(copy, x);
    };
  }
  return map;
}

LinearizingMap gauge_transform(const LinearizingMap& base, std::span<const double> K, double mu) {
  if (mu == 0.0) throw std::invalid_argument("gauge_transform: mu must be nonzero");
  if (static_cast<int>(K.size()) != base.n) throw std::invalid_argument("gauge_transform: K dimension mismatch");
  LinearizingMap out = base;
  const std::vector<double> k(K.begin(), K.end());
  out.alpha = [base, k](std::span<const double> x) {
    const std::vector<double> z = base.phi(x);
    double kz = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) kz += k[i] * z[i];
    return base.alpha(x) + kz * base.beta(x);
  };
  out.beta = [base, mu](std::span<const double> x) { return mu * base.beta(x); };
  LinearizingMap snap = out;  // capture transformed alpha/beta by value
  out.v = [snap](std::span<const double> x, double u) { return (u - snap.alpha(x)) / snap.beta(x); };
  const int n = base.n;
  out.A = base.A;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.A.at(i, j) += base.B[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(j)];
  out.B = base.B;
  for (double& b : out.B) b *= mu;
  return out;
}

std::vector<std::vector<double>> predict_window(const LinearizingMap& map, const Window& w) {
  std::vector<double> z = map.phi(w.state(0));
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(w.m));
  for (int i = 0; i < w.m; ++i) {
    const double v = map.v(w.state(i), w.input(i));
    std::vector<double> zn = matvec<double>(map.A, z);
    for (int d = 0; d < map.n; ++d) zn[static_cast<std::size_t>(d)] += map.B[static_cast<std::size_t>(d)] * v;
    z = std::move(zn);
    out.push_back(map.phi_inv(z));
  }
  return out;
}

std::vector<std::vector<double>> predict_window(const ModelParameters& p, const Window& w) {
  return predict_window(make_map(p), w);
}

std::vector<std::vector<double>> predict_open_loop(const LinearizingMap& map, std::span<const double> x0,
                                                   std::span<const double> u) {
  std::vector<double> z = map.phi(x0);
  std::vector<double> xhat(x0.begin(), x0.end());
  std::vector<std::vector<double>> out;
  out.reserve(u.size());
  for (double uk : u) {
    const double v = map.v(xhat, uk);
    std::vector<double> zn = matvec<double>(map.A, z);
    for (int d = 0; d < map.n; ++d) zn[static_cast<std::size_t>(d)] += map.B[static_cast<std::size_t>(d)] * v;
    z = std::move(zn);
    xhat = map.phi_inv(z);
    out.push_back(xhat);
  }
  return out;
}

std::vector<std::vector<double>> predict_open_loop(const ModelParameters& p, std::span<const double> x0,
                                                   std::span<const double> u) {
  return predict_open_loop(make_map(p), x0, u);
}

// ---- standalone losses -------------------------------------------------------

double loss_l1(const Window& w, const std::vector<std::vector<double>>& xhat, std::span<const double> weights) {
  if (static_cast<int>(xhat.size()) != w.m) throw std::invalid_argument("loss_l1: prediction length mismatch");
  const int n = static_cast<int>(weights.size());
  double acc = 0.0;
  for (int i = 0; i < w.m; ++i) {
    const std::span<const double> xt = w.state(i + 1);
    for (int d = 0; d < n; ++d) {
      const double e = xhat[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] - xt[static_cast<std::size_t>(d)];
      acc += weights[static_cast<std::size_t>(d)] * e * e;
    }
  }
  return acc / w.m;
}

Matd controllability_matrix(const Matd& A, std::span<const double> B) {
  const int n = A.rows;
  Matd gamma(n, n);
  std::vector<double> col(B.begin(), B.end());
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) gamma.at(i, j) = col[static_cast<std::size_t>(i)];
    if (j + 1 < n) col = matvec<double>(A, col);
  }
  return gamma;
}

double loss_l2(const Matd& A, std::span<const double> B, double eps2) {
  const double d = std::fabs(det(controllability_matrix(A, B)));
  const double floor = min(eps2, d);
  return floor > 0.0 ? 1.0 / floor : std::numeric_limits<double>::infinity();
}

double loss_l3(std::span<const double> v, double eps3) {
  double acc = 0.0;
  for (double vi : v) acc += max(eps3, std::fabs(vi));
  return acc / static_cast<double>(v.size());
}

double loss_l4(const Matd& A) { return std::fabs(std::fabs(det(A)) - 1.0); }

double loss_wl(const Matd& Wl, double eps2) {
  const double d = std::fabs(det(Wl));
  const double floor = min(eps2, d);
  return floor > 0.0 ? 1.0 / floor : std::numeric_limits<double>::infinity();
}

// ---- compiled window program ---------------------------------------------------

WindowProgram::WindowProgram(const ModelShape& shape, int m, const LossConfig& cfg, Mode mode)
    : shape_(shape), m_(m), cfg_(cfg), mode_(mode), layout_(shape) {
  static std::atomic<std::uint64_t> next_id{1};
  prog_id_ = next_id.fetch_add(1);
  if (m < 1) throw std::invalid_argument("WindowProgram: m must be >= 1");
  cfg_.validate();
  const int n = shape.n;
  const std::vector<double> w = cfg_.weights_for(n);

  // Record-time leaf values must keep everything finite (the Cramer solve
  // divides by det W_l), so leaves are created with identity-init values.
  const ModelParameters seed_params = init_params(shape, 0);

  std::vector<Value> theta_leaves;
  theta_leaves.reserve(static_cast<std::size_t>(layout_.total));
  for (int i = 0; i < layout_.total; ++i) theta_leaves.push_back(tape_.leaf(seed_params.theta[static_cast<std::size_t>(i)]));
  std::vector<Value> u_leaves;
  if (mode_ != Mode::StageOne)
    for (int i = 0; i < m; ++i) u_leaves.push_back(tape_.leaf(0.0));
  std::vector<Value> x_leaves;
  for (int i = 0; i <= m; ++i)
    for (int d = 0; d < n; ++d) x_leaves.push_back(tape_.leaf(0.1 * (d + 1)));
  n_leaves_ = tape_.leaf_count();

  ParamsView<Value> pv{theta_leaves, &layout_};
  auto x_row = [&](int i) {
    return std::span<const Value>(x_leaves.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n));
  };

  const Mat<Value> A = pv.a_mat();
  const std::span<const Value> B = pv.b_vec();
  const Mat<Value> Wl = pv.wl();

  // Prediction recursion (Algorithm-style: v from the measured states).
  std::vector<Value> z = phi_forward<Value>(pv, x_row(0));
  std::vector<Value> vs;
  vs.reserve(static_cast<std::size_t>(m));
  Value l1_acc;
  for (int i = 0; i < m; ++i) {
    const std::span<const Value> xi = x_row(i);
    Value v;
    if (mode_ == Mode::Standard) {
      const Value a = ff_eval<Value>(pv.alpha_net(), xi, shape.hidden, shape.depth);
      const Value b_raw = ff_eval<Value>(pv.beta_net(), xi, shape.hidden, shape.depth);
      const Value b = clamp_away_from_zero<Value>(b_raw, cfg_.eps1, &tape_);
      v = (u_leaves[static_cast<std::size_t>(i)] - a) / b;
    } else if (mode_ == Mode::StageOne) {
      v = ff_eval<Value>(pv.alpha_net(), xi, shape.hidden, shape.depth);  // gamma
    } else {
      const Value g = ff_eval<Value>(pv.alpha_net(), xi, shape.hidden, shape.depth);  // gamma (frozen)
      const Value b_raw = ff_eval<Value>(pv.beta_net(), xi, shape.hidden, shape.depth);
      const Value b = clamp_away_from_zero<Value>(b_raw, cfg_.eps1, &tape_);
      v = u_leaves[static_cast<std::size_t>(i)] / b + g;
    }
    vs.push_back(v);

    std::vector<Value> zn(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      Value acc = A.at(r, 0) * z[0];
      for (int k = 1; k < n; ++k) acc = muladd(A.at(r, k), z[static_cast<std::size_t>(k)], acc);
      zn[static_cast<std::size_t>(r)] = muladd(B[static_cast<std::size_t>(r)], v, acc);
    }
    z = std::move(zn);
    const std::vector<Value> xhat = phi_inverse<Value>(pv, z);

    const std::span<const Value> xt = x_row(i + 1);
    for (int d = 0; d < n; ++d) {
      const Value e = xhat[static_cast<std::size_t>(d)] - xt[static_cast<std::size_t>(d)];
      const Value e2 = e * e;
      const Value term = (w[static_cast<std::size_t>(d)] == 1.0) ? e2 : e2 * w[static_cast<std::size_t>(d)];
      l1_acc = l1_acc.valid() ? l1_acc + term : term;
    }
  }
  const Value l1 = l1_acc / static_cast<double>(m);

  // L3: epsilon first so the flat branch routes its (zero) gradient to the
  // constant, keeping the Remark-2 gradient exactly zero.
  const Value eps3 = tape_.constant(cfg_.eps3);
  Value l3_acc;
  Value maxv;
  for (const Value& v : vs) {
    const Value av = abs(v);
    const Value t = max(eps3, av);
    l3_acc = l3_acc.valid() ? l3_acc + t : t;
    maxv = maxv.valid() ? max(maxv, av) : av;
  }
  const Value l3 = l3_acc / static_cast<double>(m);

  // L2 on the controllability matrix, same epsilon-first layout (Remark 1).
  Mat<Value> gamma(n, n);
  {
    std::vector<Value> col(B.begin(), B.end());
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) gamma.at(i, j) = col[static_cast<std::size_t>(i)];
      if (j + 1 < n) {
        std::vector<Value> nc(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) {
          Value acc = A.at(r, 0) * col[0];
          for (int k = 1; k < n; ++k) acc = muladd(A.at(r, k), col[static_cast<std::size_t>(k)], acc);
          nc[static_cast<std::size_t>(r)] = acc;
        }
        col = std::move(nc);
      }
    }
  }
  const Value det_gamma = abs(det(gamma));
  const Value eps2 = tape_.constant(cfg_.eps2);
  const Value l2 = 1.0 / min(eps2, det_gamma);

  const Value det_a = abs(det(A));
  const Value l4 = abs(det_a - 1.0);

  const Value det_wl = abs(det(Wl));
  const Value lw = 1.0 / min(eps2, det_wl);

  // Weighted sum; zero-weight terms stay out so an infinite sentinel in an
  // unused term can never poison the total.
  Value total = cfg_.a1 == 0.0 ? tape_.constant(0.0) : l1 * cfg_.a1;
  if (cfg_.a2 != 0.0) total = total + l2 * cfg_.a2;
  if (cfg_.a3 != 0.0) total = total + l3 * cfg_.a3;
  if (cfg_.a4 != 0.0) total = total + l4 * cfg_.a4;
  if (cfg_.aW != 0.0) total = total + lw * cfg_.aW;

  id_l1_ = l1.idx;
  id_l2_ = l2.idx;
  id_l3_ = l3.idx;
  id_l4_ = l4.idx;
  id_lw_ = lw.idx;
  id_total_ = total.idx;
  id_detg_ = det_gamma.idx;
  id_detwl_ = det_wl.idx;
  id_maxv_ = maxv.idx;
  loss_end_ = tape_.node_count();

  const std::vector<Value> grads = tape_.gradient(total, theta_leaves);
  id_grads_.reserve(grads.size());
  for (const Value& g : grads) id_grads_.push_back(g.idx);
}

void WindowProgram::fill_leaves(std::span<const double> theta, const Window& w, int lane,
                                std::span<double> leaf_buf) const {
  const int L = Tape::kLanes;
  const int n = shape_.n;
  std::size_t ord = 0;
  for (int i = 0; i < layout_.total; ++i, ++ord) leaf_buf[ord * L + static_cast<std::size_t>(lane)] = theta[static_cast<std::size_t>(i)];
  if (mode_ != Mode::StageOne)
    for (int i = 0; i < m_; ++i, ++ord) leaf_buf[ord * L + static_cast<std::size_t>(lane)] = w.input(i);
  for (int i = 0; i <= m_; ++i) {
    const std::span<const double> xi = w.state(i);
    for (int d = 0; d < n; ++d, ++ord) leaf_buf[ord * L + static_cast<std::size_t>(lane)] = xi[static_cast<std::size_t>(d)];
  }
}

WindowProgram::Outputs WindowProgram::extract(std::span<const double> ws, int lane, int lanes) const {
  auto get = [&](std::int32_t id) { return ws[static_cast<std::size_t>(id) * static_cast<std::size_t>(lanes) + static_cast<std::size_t>(lane)]; };
  Outputs o;
  o.l1 = get(id_l1_);
  o.l2 = get(id_l2_);
  o.l3 = get(id_l3_);
  o.l4 = get(id_l4_);
  o.lw = get(id_lw_);
  o.total = get(id_total_);
  o.det_gamma = get(id_detg_);
  o.det_wl = get(id_detwl_);
  o.max_v = get(id_maxv_);
  return o;
}

void WindowProgram::run_batch(std::span<const double> theta, std::span<const Window> windows,
                              std::vector<double>& grads, std::vector<Outputs>& outs, int threads) const {
  const int count = static_cast<int>(windows.size());
  const int L = Tape::kLanes;
  const int groups = (count + L - 1) / L;
  const std::size_t P = static_cast<std::size_t>(layout_.total);
  grads.assign(static_cast<std::size_t>(count) * P, 0.0);
  outs.assign(static_cast<std::size_t>(count), Outputs{});

  par::for_index(groups, threads, [&](std::int64_t g) {
    static thread_local std::vector<double> ws;
    static thread_local std::vector<double> leaf_buf;
    static thread_local std::uint64_t ws_owner = 0;
    if (ws_owner != prog_id_) {
      ws = tape_.make_workspace(L);
      ws_owner = prog_id_;
    }
    leaf_buf.assign(static_cast<std::size_t>(n_leaves_) * L, 0.0);

    const int base = static_cast<int>(g) * L;
    const int in_group = std::min(L, count - base);
    for (int l = 0; l < in_group; ++l) fill_leaves(theta, windows[static_cast<std::size_t>(base + l)], l, leaf_buf);
    // Spare lanes replay the first window of the group; results are ignored.
    for (int l = in_group; l < L; ++l) fill_leaves(theta, windows[static_cast<std::size_t>(base)], l, leaf_buf);

    tape_.replay_lanes8(leaf_buf, ws);
    for (int l = 0; l < in_group; ++l) {
      const int widx = base + l;
      outs[static_cast<std::size_t>(widx)] = extract(ws, l, L);
      double* gdst = grads.data() + static_cast<std::size_t>(widx) * P;
      for (std::size_t i = 0; i < P; ++i)
        gdst[i] = ws[static_cast<std::size_t>(id_grads_[i]) * L + static_cast<std::size_t>(l)];
    }
  });
}

WindowProgram::Outputs WindowProgram::eval_window(std::span<const double> theta, const Window& w) const {
  static thread_local std::vector<double> ws;
  static thread_local std::uint64_t ws_owner = 0;
  if (ws_owner != prog_id_) {
    ws = tape_.make_workspace(1);
    ws_owner = prog_id_;
  }
  std::vector<double> leaf_buf(static_cast<std::size_t>(n_leaves_), 0.0);
  const int n = shape_.n;
  std::size_t ord = 0;
  for (int i = 0; i < layout_.total; ++i, ++ord) leaf_buf[ord] = theta[static_cast<std::size_t>(i)];
  if (mode_ != Mode::StageOne)
    for (int i = 0; i < m_; ++i, ++ord) leaf_buf[ord] = w.input(i);
  for (int i = 0; i <= m_; ++i) {
    const std::span<const double> xi = w.state(i);
    for (int d = 0; d < n; ++d, ++ord) leaf_buf[ord] = xi[static_cast<std::size_t>(d)];
  }
  tape_.replay(leaf_buf, ws, loss_end_);
  return extract(ws, 0, 1);
}

double WindowProgram::check_gradient_fd(std::span<const double> theta, const Window& w, double h) const {
  // Reference gradient from one full replay.
  std::vector<double> grads;
  std::vector<Outputs> outs;
  const Window ws_[1] = {w};
  run_batch(theta, ws_, grads, outs, 1);

  std::vector<double> ws = tape_.make_workspace(1);
  std::vector<double> leaf_buf(static_cast<std::size_t>(n_leaves_), 0.0);
  const int n = shape_.n;
  std::size_t ord = 0;
  for (int i = 0; i < layout_.total; ++i, ++ord) leaf_buf[ord] = theta[static_cast<std::size_t>(i)];
  if (mode_ != Mode::StageOne)
    for (int i = 0; i < m_; ++i, ++ord) leaf_buf[ord] = w.input(i);
  for (int i = 0; i <= m_; ++i) {
    const std::span<const double> xi = w.state(i);
    for (int d = 0; d < n; ++d, ++ord) leaf_buf[ord] = xi[static_cast<std::size_t>(d)];
  }

  double worst = 0.0;
  for (int pidx = 0; pidx < layout_.total; ++pidx) {
    const double x0 = leaf_buf[static_cast<std::size_t>(pidx)];
    leaf_buf[static_cast<std::size_t>(pidx)] = x0 + h;
    tape_.replay(leaf_buf, ws, loss_end_);
    const double fp = ws[static_cast<std::size_t>(id_total_)];
    leaf_buf[static_cast<std::size_t>(pidx)] = x0 - h;
    tape_.replay(leaf_buf, ws, loss_end_);
    const double fm = ws[static_cast<std::size_t>(id_total_)];
    leaf_buf[static_cast<std::size_t>(pidx)] = x0;
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::fabs(grads[static_cast<std::size_t>(pidx)] - fd) / max(1.0, std::fabs(fd));
    worst = max(worst, rel);
  }
  return worst;
}

}  // namespace flforge
