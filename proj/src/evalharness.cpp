#include "flforge/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "flforge/parallel.hpp"

namespace flforge {

double EvaluationReport::final_mean() const {
  if (steps == 0) return 0.0;
  double acc = 0.0;
  for (int d = 0; d < n; ++d) acc += mean_at(steps - 1, d);
  return acc / n;
}

void recompute_aggregates(EvaluationReport& report) {
  const std::size_t cells = static_cast<std::size_t>(report.steps) * static_cast<std::size_t>(report.n);
  report.mean_abs.assign(cells, 0.0);
  report.std_abs.assign(cells, 0.0);
  if (report.trajectories == 0) return;
  for (int tr = 0; tr < report.trajectories; ++tr)
    for (std::size_t c = 0; c < cells; ++c)
      report.mean_abs[c] += report.per_traj[static_cast<std::size_t>(tr) * cells + c];
  for (std::size_t c = 0; c < cells; ++c) report.mean_abs[c] /= report.trajectories;
  for (int tr = 0; tr < report.trajectories; ++tr)
    for (std::size_t c = 0; c < cells; ++c) {
      const double d = report.per_traj[static_cast<std::size_t>(tr) * cells + c] - report.mean_abs[c];
      report.std_abs[c] += d * d;
    }
  for (std::size_t c = 0; c < cells; ++c) report.std_abs[c] = std::sqrt(report.std_abs[c] / report.trajectories);
}

void write_report_csv(std::span<const EvaluationReport> reports, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write report: " + path);
  std::fprintf(f, "t,state,mean_abs_err,std_abs_err,variant\n");
  for (const EvaluationReport& r : reports)
    for (int k = 0; k < r.steps; ++k)
      for (int d = 0; d < r.n; ++d)
        std::fprintf(f, "%.17g,x%d,%.17g,%.17g,%s\n", (k + 1) * r.T, d + 1, r.mean_at(k, d),
                     r.std_abs[static_cast<std::size_t>(k) * r.n + d], r.variant.c_str());
  std::fclose(f);
}

// ---- single step -----------------------------------------------------------

void sample_single_step_inputs(int n, int count, double box, double u_max, std::uint64_t seed,
                               std::vector<double>& x0s, std::vector<double>& u0s) {
  Rng rng(seed);
  x0s.resize(static_cast<std::size_t>(count) * static_cast<std::size_t>(n));
  u0s.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    for (int d = 0; d < n; ++d) x0s[static_cast<std::size_t>(i) * n + d] = uniform(rng, -box, box);
    u0s[static_cast<std::size_t>(i)] = uniform(rng, -u_max, u_max);
  }
}

SingleStepResult single_step_eval(const ModelParameters& model, const PlantSpec& plant,
                                  std::span<const double> x0s, std::span<const double> u0s, double T) {
  const int n = plant.n;
  if (model.shape.n != n) throw std::invalid_argument("single_step_eval: model/plant dimension mismatch");
  const int count = static_cast<int>(u0s.size());
  const LinearizingMap map = make_map(model);

  SingleStepResult res;
  res.x0.assign(x0s.begin(), x0s.end());
  res.u0.assign(u0s.begin(), u0s.end());
  res.abs_err.resize(static_cast<std::size_t>(count) * n);
  res.mean_per_state.assign(static_cast<std::size_t>(n), 0.0);

  for (int i = 0; i < count; ++i) {
    const std::span<const double> x0(x0s.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n));
    const double u0 = u0s[static_cast<std::size_t>(i)];
    const std::vector<double> truth = rk4_plant_step(plant, x0, u0, T);
    std::vector<double> z = map.phi(x0);
    const double v = map.v(x0, u0);
    std::vector<double> zn = matvec<double>(map.A, z);
    for (int d = 0; d < n; ++d) zn[static_cast<std::size_t>(d)] += map.B[static_cast<std::size_t>(d)] * v;
    const std::vector<double> xhat = map.phi_inv(zn);
    for (int d = 0; d < n; ++d) {
      const double e = std::fabs(xhat[static_cast<std::size_t>(d)] - truth[static_cast<std::size_t>(d)]);
      res.abs_err[static_cast<std::size_t>(i) * n + d] = e;
      res.mean_per_state[static_cast<std::size_t>(d)] += e;
    }
  }
  if (count > 0)
    for (double& v : res.mean_per_state) v /= count;
  return res;
}

// ---- rollouts ---------------------------------------------------------------

namespace {

struct TrajCase {
  SampledTrajectory traj;
};

std::vector<TrajCase> make_cases(const PlantSpec& plant, const RolloutSpec& spec) {
  std::vector<TrajCase> cases(static_cast<std::size_t>(spec.n_traj));
  par::for_index(spec.n_traj, spec.threads, [&](std::int64_t i) {
    Rng rng = substream(spec.seed, static_cast<std::uint64_t>(i));
    const std::vector<double> x0 = sample_initial_condition(plant.id, rng);
    const std::uint64_t sig_seed = rng();
    InputSignal sig(spec.signal, sig_seed, spec.T);
    NoiseSpec noise = spec.noise;
    noise.seed = spec.noise.seed ^ static_cast<std::uint64_t>(i);
    cases[static_cast<std::size_t>(i)].traj =
        simulate_sampled(plant, x0, [&](double t) { return sig(t); }, spec.duration, spec.T, noise);
  });
  return cases;
}

EvaluationReport blank_report(const std::string& variant, int n, int steps, double T, int n_traj) {
  EvaluationReport r;
  r.variant = variant;
  r.n = n;
  r.steps = steps;
  r.T = T;
  r.trajectories = n_traj;
  r.per_traj.assign(static_cast<std::size_t>(n_traj) * static_cast<std::size_t>(steps) * static_cast<std::size_t>(n), 0.0);
  return r;
}

void fill_errors(EvaluationReport& rep, int traj_idx, const SampledTrajectory& truth,
                 const std::vector<std::vector<double>>& pred) {
  const int n = rep.n;
  const std::size_t cells = static_cast<std::size_t>(rep.steps) * static_cast<std::size_t>(n);
  double* dst = rep.per_traj.data() + static_cast<std::size_t>(traj_idx) * cells;
  for (int k = 0; k < rep.steps; ++k) {
    const std::span<const double> xt = truth.true_state(k + 1);
    for (int d = 0; d < n; ++d)
      dst[static_cast<std::size_t>(k) * n + d] =
          std::fabs(pred[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] - xt[static_cast<std::size_t>(d)]);
  }
}

}  // namespace

std::vector<EvaluationReport> rollout_eval(const ModelParameters& model, const PlantSpec& plant,
                                           const RolloutSpec& spec) {
  if (model.shape.n != plant.n) throw std::invalid_argument("rollout_eval: model/plant dimension mismatch");
  const int steps = static_cast<int>(std::llround(spec.duration / spec.T));
  std::vector<EvaluationReport> reports;
  if (steps == 0 || spec.n_traj == 0) return reports;

  const std::vector<TrajCase> cases = make_cases(plant, spec);

  const std::string learned_tag = spec.mode == PredictionMode::OpenLoop ? "learned" : "learned-measured";
  reports.push_back(blank_report(learned_tag, plant.n, steps, spec.T, spec.n_traj));
  int exact_idx = -1, pert_idx = -1;
  if (spec.with_exact_analytic) {
    reports.push_back(blank_report("analytic-exact", plant.n, steps, spec.T, spec.n_traj));
    exact_idx = static_cast<int>(reports.size()) - 1;
  }
  if (spec.with_perturbed_analytic) {
    reports.push_back(blank_report("analytic-perturbed", plant.n, steps, spec.T, spec.n_traj));
    pert_idx = static_cast<int>(reports.size()) - 1;
  }

  const LinearizingMap map = make_map(model);
  // Shared compiled transforms; evaluation uses per-thread workspaces.
  std::optional<AnalyticModel> exact_storage;
  std::optional<AnalyticModel> pert_storage;
  if (spec.with_exact_analytic) exact_storage.emplace(plant);
  if (spec.with_perturbed_analytic) pert_storage.emplace(perturbed_nominal(plant));
  const AnalyticModel* exact_model = exact_storage ? &*exact_storage : nullptr;
  const AnalyticModel* pert_model = pert_storage ? &*pert_storage : nullptr;

  par::for_index(spec.n_traj, spec.threads, [&](std::int64_t i) {
    const SampledTrajectory& tr = cases[static_cast<std::size_t>(i)].traj;
    const std::span<const double> u(tr.u.data(), static_cast<std::size_t>(steps));
    const std::span<const double> x0 = tr.state(0);  // measured initial state

    std::vector<std::vector<double>> pred;
    if (spec.mode == PredictionMode::OpenLoop) {
      pred = predict_open_loop(map, x0, u);
    } else {
      Window w{&tr, 0, steps};
      pred = predict_window(map, w);
    }
    fill_errors(reports[0], static_cast<int>(i), tr, pred);

    if (exact_model != nullptr)
      fill_errors(reports[static_cast<std::size_t>(exact_idx)], static_cast<int>(i), tr,
                  exact_model->rollout(u, x0, spec.T));
    if (pert_model != nullptr)
      fill_errors(reports[static_cast<std::size_t>(pert_idx)], static_cast<int>(i), tr,
                  pert_model->rollout(u, x0, spec.T));
  });

  for (EvaluationReport& r : reports) recompute_aggregates(r);
  return reports;
}

std::vector<EvaluationReport> noise_eval(const ModelParameters& model, const PlantSpec& plant, double variance,
                                         bool measurement_mode, const RolloutSpec& base) {
  RolloutSpec spec = base;
  spec.noise.measurement_variance = measurement_mode ? variance : 0.0;
  spec.noise.process_variance = measurement_mode ? 0.0 : variance;
  spec.with_exact_analytic = true;  // baseline keeps full knowledge of the dynamics
  spec.with_perturbed_analytic = false;
  return rollout_eval(model, plant, spec);
}

// ---- eigenvalues / pole placement ------------------------------------------

namespace {

/// Monic characteristic polynomial coefficients c[0..n-1] for
/// p(x) = x^n + c[0] x^(n-1) + ... + c[n-1], via Faddeev-LeVerrier.
std::vector<double> char_poly(const Matd& A) {
  const int n = A.rows;
  std::vector<double> c(static_cast<std::size_t>(n), 0.0);
  Matd M = Matd::identity(n);  // M_1 pre-multiplication state
  Matd AM = A;
  for (int k = 1; k <= n; ++k) {
    if (k > 1) {
      // M_k = A * M_{k-1} + c_{k-1} I
      AM = matmul(A, M);
    }
    double tr = 0.0;
    Matd Mk = (k == 1) ? A : AM;
    if (k > 1)
      for (int i = 0; i < n; ++i) Mk.at(i, i) += c[static_cast<std::size_t>(k - 2)];
    for (int i = 0; i < n; ++i) tr += Mk.at(i, i);
    c[static_cast<std::size_t>(k - 1)] = -tr / k;
    M = Mk;
  }
  return c;
}

std::complex<double> poly_eval(std::span<const double> c, std::complex<double> x) {
  std::complex<double> acc(1.0, 0.0);
  for (double ck : c) acc = acc * x + ck;
  return acc;
}

}  // namespace

std::vector<std::complex<double>> eigenvalues(const Matd& A) {
  const int n = A.rows;
  if (n != A.cols) throw DimensionError("eigenvalues: matrix not square");
  if (n > 4) throw DimensionError("eigenvalues: supported for n <= 4");
  std::vector<std::complex<double>> out;
  if (n == 1) {
    out.emplace_back(A.at(0, 0), 0.0);
    return out;
  }
  const std::vector<double> c = char_poly(A);
  if (n == 2) {
    const double b = c[0], cc = c[1];
    const std::complex<double> disc = std::sqrt(std::complex<double>(b * b - 4.0 * cc, 0.0));
    out.push_back((-b + disc) / 2.0);
    out.push_back((-b - disc) / 2.0);
  } else {
    // Durand-Kerner on the monic characteristic polynomial.
    std::vector<std::complex<double>> z(static_cast<std::size_t>(n));
    const std::complex<double> g(0.4, 0.9);
    std::complex<double> p(1.0, 0.0);
    for (int i = 0; i < n; ++i) {
      p *= g;
      z[static_cast<std::size_t>(i)] = p;
    }
    for (int it = 0; it < 500; ++it) {
      double moved = 0.0;
      for (int i = 0; i < n; ++i) {
        std::complex<double> denom(1.0, 0.0);
        for (int j = 0; j < n; ++j)
          if (j != i) denom *= z[static_cast<std::size_t>(i)] - z[static_cast<std::size_t>(j)];
        const std::complex<double> step = poly_eval(c, z[static_cast<std::size_t>(i)]) / denom;
        z[static_cast<std::size_t>(i)] -= step;
        moved = std::fmax(moved, std::abs(step));
      }
      if (moved < 1e-15) break;
    }
    out = z;
  }
  std::sort(out.begin(), out.end(), [](const std::complex<double>& a, const std::complex<double>& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  return out;
}

LinearReport linear_report(const Matd& A, std::span<const double> B) {
  LinearReport rep;
  rep.eigs = eigenvalues(A);
  rep.det_gamma_abs = std::fabs(det(controllability_matrix(A, B)));
  rep.det_a_abs = std::fabs(det(A));
  return rep;
}

LinearReport linear_report(const ModelParameters& model) {
  ParamLayout layout(model.shape);
  ParamsView<double> pv{model.theta, &layout};
  const std::vector<double> B(pv.b_vec().begin(), pv.b_vec().end());
  return linear_report(pv.a_mat(), B);
}

std::vector<double> pole_place(const Matd& A, std::span<const double> B,
                               std::span<const std::complex<double>> poles) {
  const int n = A.rows;
  if (static_cast<int>(poles.size()) != n) throw std::invalid_argument("pole_place: need n poles");
  // Conjugate symmetry check: the multiset must equal its conjugate.
  {
    std::vector<std::complex<double>> a(poles.begin(), poles.end()), b;
    for (const auto& p : a) b.push_back(std::conj(p));
    auto key = [](const std::complex<double>& x, const std::complex<double>& y) {
      if (x.real() != y.real()) return x.real() < y.real();
      return x.imag() < y.imag();
    };
    std::sort(a.begin(), a.end(), key);
    std::sort(b.begin(), b.end(), key);
    for (int i = 0; i < n; ++i)
      if (std::abs(a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]) > 1e-12)
        throw std::invalid_argument("pole_place: pole set must be conjugate symmetric");
  }

  const Matd gamma = controllability_matrix(A, B);
  if (std::fabs(det(gamma)) <= 1e-12)
    throw SingularMatrixError("pole_place: pair (A, B) is not controllable to tolerance");

  // Desired monic polynomial coefficients (real by conjugate symmetry).
  std::vector<std::complex<double>> coef{1.0};
  for (const auto& p : poles) {
    std::vector<std::complex<double>> next(coef.size() + 1, 0.0);
    for (std::size_t i = 0; i < coef.size(); ++i) {
      next[i] += coef[i];
      next[i + 1] -= coef[i] * p;
    }
    coef = std::move(next);
  }
  std::vector<double> c(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) c[static_cast<std::size_t>(i - 1)] = coef[static_cast<std::size_t>(i)].real();

  // chi(A) by Horner.
  Matd R = Matd::identity(n);
  for (int k = 0; k < n; ++k) {
    R = matmul(A, R);
    for (int i = 0; i < n; ++i) R.at(i, i) += c[static_cast<std::size_t>(k)];
  }

  // Ackermann: K = -e_n^T Gamma^{-1} chi(A)  (sign for the v = +K z loop).
  const Matd gamma_inv = invert(gamma);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = gamma_inv.at(n - 1, j);
  std::vector<double> K(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += row[static_cast<std::size_t>(k)] * R.at(k, j);
    K[static_cast<std::size_t>(j)] = -acc;
  }
  return K;
}

// ---- closed loop ---------------------------------------------------------------

ClosedLoopResult closed_loop_sim(const ModelParameters& model, const PlantSpec& plant, const ClosedLoopSpec& spec) {
  if (model.shape.n != plant.n) throw std::invalid_argument("closed_loop_sim: model/plant dimension mismatch");
  if (static_cast<int>(spec.x_eq.size()) != plant.n || static_cast<int>(spec.x0.size()) != plant.n)
    throw std::invalid_argument("closed_loop_sim: x0/x_eq dimension mismatch");
  const int steps = static_cast<int>(std::llround(spec.horizon / spec.T));

  const LinearizingMap map = make_map(model);
  ClosedLoopResult res;
  if (!spec.poles.empty()) {
    res.K = pole_place(map.A, map.B, spec.poles);
  } else {
    res.K.assign(static_cast<std::size_t>(plant.n), 0.0);
  }
  const std::vector<double> z_eq = map.phi(spec.x_eq);

  SampledTrajectory& tr = res.trajectory;
  tr.T = spec.T;
  tr.n = plant.n;

  std::vector<double> x(spec.x0.begin(), spec.x0.end());
  for (int k = 0; k <= steps; ++k) {
    const double t = k * spec.T;
    const std::vector<double> z = map.phi(x);
    double kz = 0.0;
    for (int d = 0; d < plant.n; ++d)
      kz += res.K[static_cast<std::size_t>(d)] * (z[static_cast<std::size_t>(d)] - z_eq[static_cast<std::size_t>(d)]);
    const double u = map.alpha(x) + map.beta(x) * kz;

    tr.t.push_back(t);
    tr.u.push_back(u);
    for (double xv : x) tr.x.push_back(xv);

    double dist = 0.0;
    for (int d = 0; d < plant.n; ++d) {
      const double e = x[static_cast<std::size_t>(d)] - spec.x_eq[static_cast<std::size_t>(d)];
      dist += e * e;
    }
    dist = std::sqrt(dist);
    if (res.settling_time < 0.0 && dist < spec.settle_radius) res.settling_time = t;
    if (k == steps) {
      res.final_norm = dist;
      break;
    }

    try {
      x = rk4_plant_step(plant, x, u, spec.T);
    } catch (const OdeDivergenceError&) {
      res.diverged = true;
      res.final_norm = dist;
      break;
    }
  }
  return res;
}

void write_closed_loop_metrics(const ClosedLoopResult& result, const ClosedLoopSpec& spec, const std::string& path) {
  nlohmann::json j;
  j["settling_time"] = result.settling_time;
  j["final_norm"] = result.final_norm;
  j["diverged"] = result.diverged;
  j["horizon"] = spec.horizon;
  j["T"] = spec.T;
  j["settle_radius"] = spec.settle_radius;
  j["K"] = result.K;
  nlohmann::json poles = nlohmann::json::array();
  for (const auto& p : spec.poles) poles.push_back({{"re", p.real()}, {"im", p.imag()}});
  j["poles"] = poles;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace flforge
