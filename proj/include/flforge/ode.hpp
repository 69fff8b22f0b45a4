#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flforge {

inline constexpr int kMaxOdeDim = 8;

struct StiffnessError : std::runtime_error {
  explicit StiffnessError(double at_t)
      : std::runtime_error("adaptive integrator: step size underflow at t = " + std::to_string(at_t)), t(at_t) {}
  double t;
};

struct OdeDivergenceError : std::runtime_error {
  OdeDivergenceError(double at_t, std::span<const double> state)
      : std::runtime_error("trajectory diverged at t = " + std::to_string(at_t)), t(at_t), x(state.begin(), state.end()) {}
  double t;
  std::vector<double> x;
};

/// Classical 4th-order Runge-Kutta step, in place. The callable sees the
/// same t-dependence the caller encodes (inputs are usually held constant).
template <class RHS>
void rk4_step(RHS&& rhs, double t, std::span<double> x, double dt) {
  const int n = static_cast<int>(x.size());
  std::array<double, kMaxOdeDim> k1{}, k2{}, k3{}, k4{}, tmp{};
  std::span<double> s1(k1.data(), x.size()), s2(k2.data(), x.size()), s3(k3.data(), x.size()),
      s4(k4.data(), x.size()), st(tmp.data(), x.size());

  rhs(t, x, s1);
  for (int i = 0; i < n; ++i) st[i] = x[i] + 0.5 * dt * s1[i];
  rhs(t + 0.5 * dt, st, s2);
  for (int i = 0; i < n; ++i) st[i] = x[i] + 0.5 * dt * s2[i];
  rhs(t + 0.5 * dt, st, s3);
  for (int i = 0; i < n; ++i) st[i] = x[i] + dt * s3[i];
  rhs(t + dt, st, s4);
  for (int i = 0; i < n; ++i) x[i] += dt / 6.0 * (s1[i] + 2.0 * s2[i] + 2.0 * s3[i] + s4[i]);
}

struct AdaptiveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double h_min = 1e-14;
  double h_max = std::numeric_limits<double>::infinity();
};

/// Dormand-Prince 5(4) with PI step-size control. Advances the state in
/// place to an exact target time (last step is clipped), so callers can
/// stop at every sample instant where a held input changes.
class Dopri5 {
 public:
  explicit Dopri5(AdaptiveOptions opt = {}) : opt_(opt) {}

  void reset() { h_ = 0.0; }

  template <class RHS>
  void integrate(RHS&& rhs, double& t, std::span<double> y, double t_end) {
    const int n = static_cast<int>(y.size());
    if (t_end <= t) return;
    std::array<std::array<double, kMaxOdeDim>, 7> k{};
    std::array<double, kMaxOdeDim> ytmp{}, y5{};

    if (h_ <= 0.0) h_ = (t_end - t) / 100.0;

    auto eval = [&](double tt, const double* yy, double* out) {
      rhs(tt, std::span<const double>(yy, y.size()), std::span<double>(out, y.size()));
    };

    while (t < t_end) {
      double h = std::fmin(h_, std::fmin(opt_.h_max, t_end - t));
      if (h < opt_.h_min) throw StiffnessError(t);

      eval(t, y.data(), k[0].data());
      bool accepted = false;
      while (!accepted) {
        for (int s = 1; s < 7; ++s) {
          for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < s; ++j) acc += kA[s][j] * k[j][static_cast<std::size_t>(i)];
            ytmp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] + h * acc;
          }
          eval(t + kC[s] * h, ytmp.data(), k[s].data());
        }
        // 5th-order solution sits in stage 7's abscissa (FSAL layout).
        double err = 0.0;
        for (int i = 0; i < n; ++i) {
          double acc5 = 0.0, acce = 0.0;
          for (int s = 0; s < 7; ++s) {
            acc5 += kB5[s] * k[s][static_cast<std::size_t>(i)];
            acce += (kB5[s] - kB4[s]) * k[s][static_cast<std::size_t>(i)];
          }
          y5[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] + h * acc5;
          const double sc = opt_.atol + opt_.rtol * std::fmax(std::fabs(y[static_cast<std::size_t>(i)]),
                                                              std::fabs(y5[static_cast<std::size_t>(i)]));
          const double e = h * acce / sc;
          err += e * e;
        }
        err = std::sqrt(err / n);
        if (!std::isfinite(err)) {
          throw OdeDivergenceError(t, std::span<const double>(y.data(), y.size()));
        }

        if (err <= 1.0) {
          for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = y5[static_cast<std::size_t>(i)];
          t += h;
          const double facold = std::fmax(err_prev_, 1e-4);
          double fac = 0.9 * std::pow(std::fmax(err, 1e-16), -0.17) * std::pow(facold, 0.08);
          fac = std::fmin(5.0, std::fmax(0.2, fac));
          h_ = h * fac;
          err_prev_ = std::fmax(err, 1e-4);
          accepted = true;
        } else {
          h *= std::fmax(0.1, 0.9 * std::pow(err, -0.2));
          if (h < opt_.h_min) throw StiffnessError(t);
        }
      }
    }
  }

 private:
  AdaptiveOptions opt_;
  double h_ = 0.0;
  double err_prev_ = 1e-4;

  static constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double kA[7][6] = {
      {0, 0, 0, 0, 0, 0},
      {1.0 / 5, 0, 0, 0, 0, 0},
      {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
      {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
  };
  static constexpr double kB5[7] = {35.0 / 384,      0.0,        500.0 / 1113, 125.0 / 192,
                                    -2187.0 / 6784,  11.0 / 84,  0.0};
  static constexpr double kB4[7] = {5179.0 / 57600,    0.0,          7571.0 / 16695, 393.0 / 640,
                                    -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
};

}  // namespace flforge
