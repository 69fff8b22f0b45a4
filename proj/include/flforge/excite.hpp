#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flforge/plants.hpp"
#include "flforge/rng.hpp"

namespace flforge {

struct SignalSpec {
  int L = 3;                        // sinusoids per segment
  double amp_mean = 1.0;            // M_i ~ N(amp_mean, amp_stddev^2)
  double amp_stddev = 1.0;
  double freq_lo = 0.5;             // omega_i ~ U(freq_lo, freq_hi) [rad/s]
  double freq_hi = 1.5;
  double resegment_interval = 0.5;  // [s]; parameters redrawn every interval
  double lowpass_tau = 0.05;        // [s]; 0 disables the filter
  std::uint64_t seed = 0;

  void validate() const;
};

/// Piecewise sum-of-sines excitation. Segment parameters are redrawn from
/// one sequential stream every resegment_interval; the first-order low-pass
/// y_k = y_{k-1} + (T/tau)(u_k - y_{k-1}) runs on the sampling grid and its
/// state carries across segment boundaries, which removes the jumps the raw
/// signal has there. Between grid points the filtered value is held (the
/// plant sees zero-order-hold inputs anyway).
class InputSignal {
 public:
  InputSignal(const SignalSpec& spec, std::uint64_t seed, double sample_period);

  double raw(double t) const;        // unfiltered sum of sines
  double at_sample(int k) const;     // filtered value at t = k*T
  double operator()(double t) const; // filtered via the grid; raw when tau == 0

 private:
  struct Segment {
    std::vector<double> amp, freq, phase;
  };
  const Segment& segment(int s) const;
  void ensure_samples(int k) const;

  SignalSpec spec_;
  double T_;
  mutable Rng rng_;
  mutable std::vector<Segment> segments_;
  mutable std::vector<double> filtered_;  // filtered_[k] = u at t = k*T
};

/// Per-plant initial-condition draw: C1 uniform (-10,10)^2, C2 the
/// origin-centered cube of side 20, C3 angles from (-pi,pi) and velocities
/// from (-3,3).
std::vector<double> sample_initial_condition(PlantId id, Rng& rng);

struct DatasetManifest {
  std::string plant;
  double T = 0.0;
  double duration = 0.0;
  int n_traj = 0;
  std::uint64_t seed = 0;
  SignalSpec signal;
  NoiseSpec noise;
  bool zero_input = false;
  std::vector<int> diverged;  // indices of aborted trajectories
};

struct Dataset {
  PlantSpec plant;
  DatasetManifest manifest;
  std::vector<SampledTrajectory> trajectories;

  double T() const { return manifest.T; }
  int n() const { return plant.n; }
  /// Number of (u, x) transition pairs: sum over trajectories of samples-1.
  std::int64_t pair_count() const;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Samples n_traj independent trajectories; trajectory k uses substreams
/// seed^k for its initial condition/signal and noise.seed^k for noise, so
/// generation parallelizes without changing results. Fails if more than 1%
/// of trajectories diverge.
Dataset generate_dataset(const PlantSpec& plant, const SignalSpec& signal, int n_traj, double duration, double T,
                         const NoiseSpec& noise, std::uint64_t seed, int threads = 1, bool zero_input = false);

/// Contiguous slice of one stored trajectory: states at j..j+m, inputs at
/// j..j+m-1. Holds views, not copies.
struct Window {
  const SampledTrajectory* traj = nullptr;
  int j = 0;
  int m = 0;

  std::span<const double> state(int i) const { return traj->state(j + i); }  // i in [0, m]
  double input(int i) const { return traj->u[static_cast<std::size_t>(j + i)]; }  // i in [0, m)
};

/// Epoch-based window enumeration: each epoch visits every valid (trajectory,
/// start) pair exactly once in an order shuffled by seed^epoch.
class WindowSampler {
 public:
  WindowSampler(const Dataset& dataset, int m, std::uint64_t seed);

  int windows_per_epoch() const { return static_cast<int>(index_.size()); }
  std::vector<Window> epoch(int e) const;

 private:
  const Dataset* dataset_;
  int m_;
  std::uint64_t seed_;
  std::vector<std::pair<int, int>> index_;  // (trajectory, start)
};

void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace flforge
