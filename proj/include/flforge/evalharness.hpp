#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "flforge/analytic.hpp"
#include "flforge/excite.hpp"
#include "flforge/flmodel.hpp"

namespace flforge {

/// Per-step, per-state mean/std of absolute prediction error across a set of
/// trajectories. Per-trajectory errors are retained so aggregates can be
/// recomputed and re-checked.
struct EvaluationReport {
  std::string variant;  // "learned", "learned-measured", "analytic-exact", "analytic-perturbed"
  int n = 0;
  int steps = 0;  // predictions at t = T .. steps*T
  double T = 0.0;
  int trajectories = 0;
  std::vector<double> mean_abs;  // [step * n + state]
  std::vector<double> std_abs;   // [step * n + state]
  std::vector<double> per_traj;  // [traj * steps * n + step * n + state], |error|

  double mean_at(int step, int state) const { return mean_abs[static_cast<std::size_t>(step) * n + state]; }
  /// Mean over states of the final-step mean absolute error.
  double final_mean() const;
};

void write_report_csv(std::span<const EvaluationReport> reports, const std::string& path);

/// Recompute mean/std from the retained per-trajectory errors (consistency
/// oracle for the aggregation).
void recompute_aggregates(EvaluationReport& report);

// ---- single-step -----------------------------------------------------------

struct SingleStepResult {
  std::vector<double> x0, u0;        // samples (x0 row-major)
  std::vector<double> abs_err;       // [sample * n + state]
  std::vector<double> mean_per_state;
};

/// One Algorithm-style step against one plant step for each (x(0), u(0)).
SingleStepResult single_step_eval(const ModelParameters& model, const PlantSpec& plant,
                                  std::span<const double> x0s, std::span<const double> u0s, double T);

/// Uniform sample generator on a centered box with u ~ U(-u_max, u_max).
void sample_single_step_inputs(int n, int count, double box, double u_max, std::uint64_t seed,
                               std::vector<double>& x0s, std::vector<double>& u0s);

// ---- rollouts ---------------------------------------------------------------

enum class PredictionMode { OpenLoop, MeasuredStates };

struct RolloutSpec {
  int n_traj = 50;
  double duration = 2.0;
  double T = 1e-3;
  NoiseSpec noise;
  SignalSpec signal;
  std::uint64_t seed = 1234;
  PredictionMode mode = PredictionMode::OpenLoop;
  bool with_exact_analytic = false;
  bool with_perturbed_analytic = false;
  int threads = 1;
};

/// Fresh trajectories (inputs and initial conditions drawn as in training);
/// the learned predictor runs open loop by default, with the Algorithm-style
/// measured-state mode available; analytic baselines integrate the
/// continuous chain. Errors are measured against the true (noise-free)
/// states.
std::vector<EvaluationReport> rollout_eval(const ModelParameters& model, const PlantSpec& plant,
                                           const RolloutSpec& spec);

/// Noise study: variance applied to measurement or process; the analytic
/// baseline keeps exact parameters.
std::vector<EvaluationReport> noise_eval(const ModelParameters& model, const PlantSpec& plant, double variance,
                                         bool measurement_mode, const RolloutSpec& base);

// ---- linear-system reports ----------------------------------------------------

std::vector<std::complex<double>> eigenvalues(const Matd& A);

struct LinearReport {
  std::vector<std::complex<double>> eigs;
  double det_gamma_abs = 0.0;
  double det_a_abs = 0.0;
};

LinearReport linear_report(const Matd& A, std::span<const double> B);
LinearReport linear_report(const ModelParameters& model);

/// Ackermann gain for v = K z with closed loop A + B K; desired poles must
/// form a conjugate-symmetric set.
std::vector<double> pole_place(const Matd& A, std::span<const double> B,
                               std::span<const std::complex<double>> poles);

// ---- closed loop ---------------------------------------------------------------

struct ClosedLoopSpec {
  std::vector<double> x0;    // initial plant state
  std::vector<double> x_eq;  // target equilibrium
  std::vector<std::complex<double>> poles;  // empty runs the v = 0 law
  double horizon = 5.0;
  double T = 1e-3;
  double settle_radius = 0.1;
};

struct ClosedLoopResult {
  SampledTrajectory trajectory;
  std::vector<double> K;
  double settling_time = -1.0;  // first time ||x - x_eq|| < settle_radius, -1 if never
  double final_norm = 0.0;
  bool diverged = false;
};

/// True plant under u = alpha(x) + beta(x) K (phi(x) - phi(x_eq)), updated
/// every T and held between samples. An empty pole list runs the v = 0 law.
ClosedLoopResult closed_loop_sim(const ModelParameters& model, const PlantSpec& plant, const ClosedLoopSpec& spec);

void write_closed_loop_metrics(const ClosedLoopResult& result, const ClosedLoopSpec& spec, const std::string& path);

}  // namespace flforge
