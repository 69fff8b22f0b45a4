#include "flforge/analytic.hpp"

#include <atomic>
#include <cmath>

#include "flforge/ode.hpp"

namespace flforge {

PlantSpec perturbed_nominal(const PlantSpec& spec) {
  PlantSpec p = spec;
  switch (spec.id) {
    case PlantId::C1:
      p.c1.d1 = -0.255;
      p.c1.d3 = -0.255;
      p.c1.d2 = 0.0;  // treated as unknown
      break;
    case PlantId::C2:
      p.c2.d1 = 0.27;
      p.c2.d2 = 0.27;
      p.c2.d3 = 0.0;  // treated as unknown
      break;
    case PlantId::C3:
      p.c3.f_v = 0.0;
      p.c3.f_c = 0.0;
      p.c3.f_s = 0.0;  // frictional torque assumed zero
      break;
  }
  return p;
}

AnalyticModel::AnalyticModel(const PlantSpec& nominal) : spec_(nominal) {
  spec_.validate();
  static std::atomic<std::uint64_t> next_id{1};
  model_id_ = next_id.fetch_add(1);
  const int n = spec_.n;

  // Record-time point: away from the C3 friction kinks so every recorded
  // value is finite (branching ops re-evaluate on replay).
  std::vector<Value> x;
  x.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    x.push_back(tape_.leaf(0.3 + 0.1 * i));
    x_leaf_ids_.push_back(x.back().idx);
  }

  std::vector<Value> f(static_cast<std::size_t>(n));
  plant_rhs<Value, double>(spec_, x, 0.0, f);
  const std::vector<double> g = input_channel(spec_);
  jac_ids_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), -1);

  Value e = x[0];  // h = x1
  ek_ids_.push_back(e.idx);
  for (int k = 0; k <= n; ++k) {
    const std::vector<Value> grad = tape_.gradient(e, x);
    if (k < n) {
      for (int i = 0; i < n; ++i)
        jac_ids_[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)] = grad[static_cast<std::size_t>(i)].idx;
    }
    // g has a single nonzero component (the last one) for all three plants.
    const Value lglf = grad[static_cast<std::size_t>(n - 1)] * g[static_cast<std::size_t>(n - 1)];
    lglf_ids_.push_back(lglf.idx);
    if (k < n) {
      Value next = grad[0] * f[0];
      for (int i = 1; i < n; ++i) next = muladd(grad[static_cast<std::size_t>(i)], f[static_cast<std::size_t>(i)], next);
      e = next;
      ek_ids_.push_back(e.idx);
    }
  }
  for (int k = 0; k < n; ++k) z_ids_.push_back(ek_ids_[static_cast<std::size_t>(k)]);

  const Value denom{&tape_, lglf_ids_[static_cast<std::size_t>(n - 1)]};
  const Value efull{&tape_, ek_ids_[static_cast<std::size_t>(n)]};
  const Value alpha = -efull / denom;
  const Value beta = 1.0 / denom;
  alpha_id_ = alpha.idx;
  beta_id_ = beta.idx;
  denom_id_ = denom.idx;
}

std::span<double> AnalyticModel::workspace() const {
  static thread_local std::vector<double> ws;
  static thread_local std::uint64_t owner = 0;
  if (owner != model_id_) {
    ws = tape_.make_workspace(1);
    owner = model_id_;
  }
  return ws;
}

void AnalyticModel::replay_at(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != spec_.n) throw std::invalid_argument("AnalyticModel: state dimension mismatch");
  tape_.replay(x, workspace());
}

AnalyticModel::Eval AnalyticModel::eval(std::span<const double> x, double denom_tol) const {
  replay_at(x);
  const std::span<const double> ws = workspace();
  Eval out;
  const int n = spec_.n;
  out.z.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.z[static_cast<std::size_t>(i)] = ws[static_cast<std::size_t>(z_ids_[static_cast<std::size_t>(i)])];
  out.denom = ws[static_cast<std::size_t>(denom_id_)];
  if (std::fabs(out.denom) <= denom_tol) {
    std::string msg = "relative-degree degeneracy: |L_g L_f^{n-1} h| <= tolerance at x = (";
    for (int i = 0; i < n; ++i) msg += std::to_string(x[static_cast<std::size_t>(i)]) + (i + 1 < n ? ", " : ")");
    throw RelativeDegreeError(msg);
  }
  out.alpha = ws[static_cast<std::size_t>(alpha_id_)];
  out.beta = ws[static_cast<std::size_t>(beta_id_)];
  out.jac = Matd(n, n);
  for (int i = 0; i < n * n; ++i) out.jac.m[static_cast<std::size_t>(i)] = ws[static_cast<std::size_t>(jac_ids_[static_cast<std::size_t>(i)])];
  return out;
}

std::pair<double, double> AnalyticModel::lie_derivative(std::span<const double> x, int k) const {
  if (k < 0 || k > spec_.n) throw std::invalid_argument("lie_derivative: order must be in 0..n");
  replay_at(x);
  const std::span<const double> ws = workspace();
  return {ws[static_cast<std::size_t>(ek_ids_[static_cast<std::size_t>(k)])],
          ws[static_cast<std::size_t>(lglf_ids_[static_cast<std::size_t>(k)])]};
}

std::vector<double> AnalyticModel::analytic_phi(std::span<const double> x) const { return eval(x).z; }
double AnalyticModel::analytic_alpha(std::span<const double> x) const { return eval(x).alpha; }
double AnalyticModel::analytic_beta(std::span<const double> x) const { return eval(x).beta; }

std::vector<double> AnalyticModel::phi_inverse_newton(std::span<const double> z, std::span<const double> x_guess,
                                                      int max_iter, double tol) const {
  const int n = spec_.n;
  if (static_cast<int>(z.size()) != n || static_cast<int>(x_guess.size()) != n)
    throw std::invalid_argument("phi_inverse_newton: dimension mismatch");
  std::vector<double> x(x_guess.begin(), x_guess.end());
  double res = 0.0;
  for (int it = 0; it <= max_iter; ++it) {
    const Eval ev = eval(x);
    std::vector<double> r(static_cast<std::size_t>(n));
    res = 0.0;
    for (int i = 0; i < n; ++i) {
      r[static_cast<std::size_t>(i)] = ev.z[static_cast<std::size_t>(i)] - z[static_cast<std::size_t>(i)];
      res = std::fmax(res, std::fabs(r[static_cast<std::size_t>(i)]));
    }
    if (res <= tol) return x;
    if (it == max_iter) break;
    const std::vector<double> dx = solve_linear(ev.jac, r);
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] -= dx[static_cast<std::size_t>(i)];
  }
  throw NewtonError("phi_inverse_newton: no convergence within iteration limit (residual " + std::to_string(res) + ")",
                    res);
}

std::vector<std::vector<double>> AnalyticModel::rollout(std::span<const double> u, std::span<const double> x0,
                                                        double T, double rtol, double atol) const {
  const int n = spec_.n;
  if (static_cast<int>(x0.size()) != n) throw std::invalid_argument("rollout: x0 dimension mismatch");
  std::vector<std::vector<double>> out;
  if (u.empty()) return out;
  out.reserve(u.size());

  std::vector<double> z = analytic_phi(x0);
  std::vector<double> x_warm(x0.begin(), x0.end());

  AdaptiveOptions opt;
  opt.rtol = rtol;
  opt.atol = atol;
  Dopri5 stepper(opt);

  double t = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double uk = u[k];
    auto rhs = [&](double, std::span<const double> zz, std::span<double> dz) {
      x_warm = phi_inverse_newton(zz, x_warm);
      const Eval ev = eval(x_warm);
      const double v = (uk - ev.alpha) / ev.beta;
      for (int i = 0; i + 1 < n; ++i) dz[static_cast<std::size_t>(i)] = zz[static_cast<std::size_t>(i) + 1];
      dz[static_cast<std::size_t>(n - 1)] = v;
    };
    stepper.integrate(rhs, t, z, static_cast<double>(k + 1) * T);
    x_warm = phi_inverse_newton(z, x_warm);
    out.push_back(x_warm);
  }
  return out;
}

}  // namespace flforge
