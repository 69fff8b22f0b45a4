#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flforge/ode.hpp"
#include "flforge/rng.hpp"
#include "flforge/tape.hpp"

namespace flforge {

enum class PlantId { C1, C2, C3 };

std::string to_string(PlantId id);
PlantId plant_id_from_string(const std::string& s);

struct C1Params {
  double d1 = -0.25;
  double d2 = -0.01;
  double d3 = -0.25;
};

struct C2Params {
  double d1 = 0.25;
  double d2 = 0.25;
  double d3 = 0.25;
};

struct C3Params {
  double M = 1.0;       // link mass [kg]
  double g = 9.8;       // gravity [m/s^2]
  double l = 1.0;       // distance to center of mass [m]
  double I = 1.0;       // link inertia [kg m^2]
  double J = 0.2;       // actuator inertia [kg m^2]
  double f_v = 0.2;     // viscous friction [N m s]
  double f_c = 0.7;     // Coulomb friction [N m]
  double f_s = 0.9;     // static friction [N m]
  double omega_s = 0.06;  // Stribeck velocity [1/s]
  double k1 = 5.0;      // spring coefficients [N m]
  double k2 = 2.0;
  double k3 = 1.0;
};

struct PlantSpec {
  PlantId id = PlantId::C1;
  int n = 2;
  C1Params c1;
  C2Params c2;
  C3Params c3;
  // The Stribeck term is implemented as written, without a sgn(x4) factor,
  // so friction is nonzero at rest. stribeck_signed = true multiplies it by
  // sgn(x4) instead.
  bool stribeck_signed = false;

  static PlantSpec make(PlantId id);
  void validate() const;
};

// sgn with sgn(0) = 0, as used in the plant models (Coulomb friction and the
// spring torque vanish at zero argument).
inline double sgn0(double a) { return (a > 0.0) ? 1.0 : (a < 0.0 ? -1.0 : 0.0); }
inline Value sgn0(Value a) { return (sign(a) - sign(-a)) * 0.5; }

/// Plant right-hand side, templated so the same definitions serve the
/// simulators (double) and the analytic baseline's tape (Value).
template <class S, class U>
void plant_rhs(const PlantSpec& spec, std::span<const S> x, const U& u, std::span<S> dx) {
  if (static_cast<int>(x.size()) != spec.n || static_cast<int>(dx.size()) != spec.n)
    throw std::invalid_argument("plant_rhs: state dimension mismatch for " + to_string(spec.id));
  switch (spec.id) {
    case PlantId::C1: {
      const auto& p = spec.c1;
      dx[0] = x[1] + p.d1 * x[0] * x[0] * x[0] + p.d2 * x[0];
      dx[1] = u + p.d3 * x[0] * sin(x[1]);
      break;
    }
    case PlantId::C2: {
      const auto& p = spec.c2;
      dx[0] = p.d1 * x[1] + sin(x[0]);
      dx[1] = p.d2 * x[2] + p.d3 * sin(x[0]) * cos(x[1]);
      dx[2] = u - x[0] * x[1] * cos(x[2]);
      break;
    }
    case PlantId::C3: {
      const auto& p = spec.c3;
      const S d = x[0] - x[2];
      const S sg = sgn0(d);
      const S tau_spring = p.k1 * d + p.k2 * sg * d * d + p.k3 * d * d * d;
      S stribeck = (p.f_s - p.f_v) * exp(-(x[3] / p.omega_s) * (x[3] / p.omega_s));
      if (spec.stribeck_signed) stribeck = stribeck * sgn0(x[3]);
      const S tau_friction = p.f_v * x[3] + p.f_c * sgn0(x[3]) + stribeck;
      dx[0] = x[1];
      dx[1] = -(p.M * p.g * p.l / p.I) * sin(x[0]) - tau_spring * (1.0 / p.I);
      dx[2] = x[3];
      dx[3] = (tau_spring + u - tau_friction) * (1.0 / p.J);
      break;
    }
  }
}

/// Input channel g(x) of the control-affine form; constant for all three
/// systems.
std::vector<double> input_channel(const PlantSpec& spec);

std::vector<double> rhs(const PlantSpec& spec, std::span<const double> x, double u);

/// One classical RK4 step with the input held constant over [t, t+T].
std::vector<double> rk4_plant_step(const PlantSpec& spec, std::span<const double> x, double u_held, double T);

struct NoiseSpec {
  double process_variance = 0.0;
  double measurement_variance = 0.0;
  std::uint64_t seed = 0;
};

struct SampledTrajectory {
  double T = 0.0;
  int n = 0;
  std::vector<double> t;  // t[k] = t0 + k*T
  std::vector<double> u;  // applied (held) input at t[k]; last entry unused by windows
  std::vector<double> x;  // row-major [k * n + d], measured states
  // Noise-free states, kept in memory for evaluation; empty after loading
  // from disk (only measurements are persisted).
  std::vector<double> x_true;

  int samples() const { return static_cast<int>(t.size()); }
  std::span<const double> state(int k) const { return {x.data() + static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n)}; }
  std::span<const double> true_state(int k) const {
    const std::vector<double>& src = x_true.empty() ? x : x_true;
    return {src.data() + static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n)};
  }
};

/// Dense integration with Dormand-Prince 5(4); returns states at the
/// requested sample times (the first entry must equal t0).
std::vector<std::vector<double>> integrate_adaptive(const PlantSpec& spec, std::span<const double> x0,
                                                    const std::function<double(double)>& input, double t0,
                                                    std::span<const double> sample_times, double rtol, double atol);

/// Zero-order-hold sampled simulation: true state advances by rk4 steps of
/// length T; process noise perturbs the derivative (constant over each
/// period), measurement noise perturbs each recorded state.
SampledTrajectory simulate_sampled(const PlantSpec& spec, std::span<const double> x0,
                                   const std::function<double(double)>& input, double duration, double T,
                                   const NoiseSpec& noise);

void write_trajectory_csv(const SampledTrajectory& traj, const std::string& path);
SampledTrajectory read_trajectory_csv(const std::string& path);

}  // namespace flforge
