// Compares the serial reference loops against the OpenMP kernels on the three
// data-parallel hot spots: dataset generation, batch gradient evaluation, and
// rollout evaluation.
#include <chrono>
#include <cstdio>

#include "flforge/evalharness.hpp"
#include "flforge/excite.hpp"
#include "flforge/flmodel.hpp"
#include "flforge/parallel.hpp"
#include "flforge/trainer.hpp"

using namespace flforge;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const char* name, double serial_s, double parallel_s, int threads) {
  std::printf("%-24s serial %8.3f s   %d threads %8.3f s   speedup %.2fx\n", name, serial_s, threads, parallel_s,
              serial_s / parallel_s);
}

}  // namespace

int main() {
  const int threads = par::hardware_threads();
  std::printf("hardware threads: %d\n", threads);

  const PlantSpec plant = PlantSpec::make(PlantId::C1);
  SignalSpec signal;
  signal.seed = 1;

  // Dataset generation.
  double gen_serial = 0.0, gen_parallel = 0.0;
  {
    auto t0 = Clock::now();
    Dataset ds = generate_dataset(plant, signal, 60, 2.0, 5e-3, NoiseSpec{}, 9, 1);
    gen_serial = seconds_since(t0);
    t0 = Clock::now();
    Dataset dsp = generate_dataset(plant, signal, 60, 2.0, 5e-3, NoiseSpec{}, 9, threads);
    gen_parallel = seconds_since(t0);
    if (ds.trajectories[5].x != dsp.trajectories[5].x) {
      std::printf("MISMATCH: parallel dataset differs from serial reference\n");
      return 1;
    }
  }
  report("dataset generation", gen_serial, gen_parallel, threads);

  // Batch gradients.
  {
    Dataset ds = generate_dataset(plant, signal, 4, 2.0, 5e-3, NoiseSpec{}, 9, threads);
    ModelShape shape{plant.n, 16, 2, 1, 5e-3};
    LossConfig loss;
    WindowProgram program(shape, 16, loss);
    ModelParameters params = init_params(shape, 3);
    WindowSampler sampler(ds, 16, 5);
    std::vector<Window> windows = sampler.epoch(0);
    windows.resize(256);
    std::vector<double> g1, gp;
    std::vector<WindowProgram::Outputs> o1, op;

    auto t0 = Clock::now();
    program.run_batch(params.theta, windows, g1, o1, 1);
    const double s = seconds_since(t0);
    t0 = Clock::now();
    program.run_batch(params.theta, windows, gp, op, threads);
    const double p = seconds_since(t0);
    if (g1 != gp) {
      std::printf("MISMATCH: parallel gradients differ from serial reference\n");
      return 1;
    }
    report("batch gradients (256)", s, p, threads);
    std::printf("  program nodes: %lld, windows/s serial: %.0f\n", static_cast<long long>(program.node_count()),
                256.0 / s);
  }

  // Rollout evaluation.
  {
    ModelShape shape{plant.n, 16, 2, 1, 5e-3};
    ModelParameters params = init_params(shape, 3);
    RolloutSpec spec;
    spec.n_traj = 24;
    spec.duration = 1.0;
    spec.T = 5e-3;
    spec.signal = signal;
    spec.threads = 1;
    auto t0 = Clock::now();
    auto r1 = rollout_eval(params, plant, spec);
    const double s = seconds_since(t0);
    spec.threads = threads;
    t0 = Clock::now();
    auto rp = rollout_eval(params, plant, spec);
    const double p = seconds_since(t0);
    if (r1[0].mean_abs != rp[0].mean_abs) {
      std::printf("MISMATCH: parallel rollout differs from serial reference\n");
      return 1;
    }
    report("rollout eval (24 traj)", s, p, threads);
  }
  return 0;
}
