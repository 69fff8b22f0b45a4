#pragma once

#include <span>
#include <string>
#include <vector>

#include "flforge/matrix.hpp"
#include "flforge/plants.hpp"
#include "flforge/tape.hpp"

namespace flforge {

/// Documented parameter perturbations for the uncertain-model baselines.
/// C1: d1 = d3 = -0.255 and the d2*x1 term dropped; C2: d1 = d2 = 0.27 and
/// the d3*sin(x1)*cos(x2) term dropped; C3: friction torque assumed zero.
PlantSpec perturbed_nominal(const PlantSpec& spec);

struct RelativeDegreeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NewtonError : std::runtime_error {
  NewtonError(const std::string& what, double res) : std::runtime_error(what), residual(res) {}
  double residual;
};

/// Lie-derivative feedback linearization of a nominal model with output
/// h = x1. The chain z = (h, L_f h, ..., L_f^{n-1} h), the transform
/// coefficients, and the Jacobian of z are recorded once on a tape through
/// nested reverse-mode differentiation and replayed per evaluation.
class AnalyticModel {
 public:
  explicit AnalyticModel(const PlantSpec& nominal);

  int n() const { return spec_.n; }
  const PlantSpec& nominal() const { return spec_; }

  struct Eval {
    std::vector<double> z;      // (h, L_f h, ..., L_f^{n-1} h)
    double alpha = 0.0;         // -L_f^n h / (L_g L_f^{n-1} h)
    double beta = 0.0;          // 1 / (L_g L_f^{n-1} h)
    double denom = 0.0;         // L_g L_f^{n-1} h
    Matd jac;                   // dz/dx
  };

  /// Replay the compiled transform at x. Throws RelativeDegreeError when the
  /// decoupling term |L_g L_f^{n-1} h| falls below `denom_tol`.
  Eval eval(std::span<const double> x, double denom_tol = 1e-9) const;

  /// (L_f^k h, L_g L_f^k h) at x, for k = 0..n.
  std::pair<double, double> lie_derivative(std::span<const double> x, int k) const;

  std::vector<double> analytic_phi(std::span<const double> x) const;
  double analytic_alpha(std::span<const double> x) const;
  double analytic_beta(std::span<const double> x) const;

  /// Newton inversion of the analytic transform with an autodiff Jacobian.
  std::vector<double> phi_inverse_newton(std::span<const double> z, std::span<const double> x_guess,
                                         int max_iter = 50, double tol = 1e-10) const;

  /// Continuous-time baseline prediction: integrates the Brunovsky chain
  /// with the transform evaluated inside the adaptive-step loop; inputs are
  /// held over each period. Returns predictions at t = T, 2T, ..., KT.
  std::vector<std::vector<double>> rollout(std::span<const double> u, std::span<const double> x0, double T,
                                           double rtol = 1e-8, double atol = 1e-10) const;

 private:
  PlantSpec spec_;
  Tape tape_;
  std::uint64_t model_id_ = 0;
  std::vector<std::int32_t> x_leaf_ids_;
  std::vector<std::int32_t> z_ids_;     // e_0 .. e_{n-1}
  std::vector<std::int32_t> ek_ids_;    // e_0 .. e_n
  std::vector<std::int32_t> lglf_ids_;  // L_g L_f^k h, k = 0..n
  std::vector<std::int32_t> jac_ids_;   // row-major n x n
  std::int32_t alpha_id_ = -1;
  std::int32_t beta_id_ = -1;
  std::int32_t denom_id_ = -1;

  std::span<double> workspace() const;
  void replay_at(std::span<const double> x) const;
};

}  // namespace flforge
