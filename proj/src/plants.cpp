#include "flforge/plants.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace flforge {

std::string to_string(PlantId id) {
  switch (id) {
    case PlantId::C1: return "C1";
    case PlantId::C2: return "C2";
    case PlantId::C3: return "C3";
  }
  return "?";
}

PlantId plant_id_from_string(const std::string& s) {
  if (s == "C1") return PlantId::C1;
  if (s == "C2") return PlantId::C2;
  if (s == "C3") return PlantId::C3;
  throw std::invalid_argument("unknown plant id: " + s);
}

PlantSpec PlantSpec::make(PlantId id) {
  PlantSpec spec;
  spec.id = id;
  spec.n = (id == PlantId::C1) ? 2 : (id == PlantId::C2) ? 3 : 4;
  return spec;
}

void PlantSpec::validate() const {
  const int expect = (id == PlantId::C1) ? 2 : (id == PlantId::C2) ? 3 : 4;
  if (n != expect) throw std::invalid_argument("PlantSpec: n does not match plant id");
  if (id == PlantId::C2 && c2.d1 * c2.d2 == 0.0)
    throw std::invalid_argument("PlantSpec: C2 needs d1*d2 != 0 for full relative degree");
  if (id == PlantId::C3 && (c3.I <= 0.0 || c3.J <= 0.0))
    throw std::invalid_argument("PlantSpec: C3 inertias must be positive");
}

std::vector<double> input_channel(const PlantSpec& spec) {
  std::vector<double> g(static_cast<std::size_t>(spec.n), 0.0);
  g.back() = (spec.id == PlantId::C3) ? 1.0 / spec.c3.J : 1.0;
  return g;
}

std::vector<double> rhs(const PlantSpec& spec, std::span<const double> x, double u) {
  std::vector<double> dx(static_cast<std::size_t>(spec.n));
  plant_rhs<double, double>(spec, x, u, dx);
  return dx;
}

std::vector<double> rk4_plant_step(const PlantSpec& spec, std::span<const double> x, double u_held, double T) {
  if (T <= 0.0) throw std::invalid_argument("rk4_plant_step: T must be positive");
  std::vector<double> y(x.begin(), x.end());
  rk4_step(
      [&](double, std::span<const double> s, std::span<double> ds) { plant_rhs<double, double>(spec, s, u_held, ds); },
      0.0, y, T);
  for (double v : y)
    if (!std::isfinite(v)) throw OdeDivergenceError(T, y);
  return y;
}

std::vector<std::vector<double>> integrate_adaptive(const PlantSpec& spec, std::span<const double> x0,
                                                    const std::function<double(double)>& input, double t0,
                                                    std::span<const double> sample_times, double rtol, double atol) {
  if (rtol <= 0.0 || atol <= 0.0) throw std::invalid_argument("integrate_adaptive: tolerances must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(sample_times.size());
  std::vector<double> y(x0.begin(), x0.end());
  double t = t0;
  AdaptiveOptions opt;
  opt.rtol = rtol;
  opt.atol = atol;
  Dopri5 stepper(opt);
  auto f = [&](double tt, std::span<const double> s, std::span<double> ds) {
    plant_rhs<double, double>(spec, s, input(tt), ds);
  };
  for (double ts : sample_times) {
    if (ts < t - 1e-15) throw std::invalid_argument("integrate_adaptive: sample times must be non-decreasing");
    stepper.integrate(f, t, y, ts);
    out.push_back(y);
  }
  return out;
}

SampledTrajectory simulate_sampled(const PlantSpec& spec, std::span<const double> x0,
                                   const std::function<double(double)>& input, double duration, double T,
                                   const NoiseSpec& noise) {
  if (T <= 0.0) throw std::invalid_argument("simulate_sampled: T must be positive");
  const double steps_f = duration / T;
  const int steps = static_cast<int>(std::llround(steps_f));
  if (std::fabs(steps_f - steps) > 1e-9)
    throw std::invalid_argument("simulate_sampled: duration must be a multiple of T");

  Rng rng(noise.seed);
  const double proc_sd = std::sqrt(noise.process_variance);
  const double meas_sd = std::sqrt(noise.measurement_variance);

  SampledTrajectory traj;
  traj.T = T;
  traj.n = spec.n;
  traj.t.reserve(static_cast<std::size_t>(steps) + 1);
  traj.u.reserve(static_cast<std::size_t>(steps) + 1);
  traj.x.reserve((static_cast<std::size_t>(steps) + 1) * static_cast<std::size_t>(spec.n));

  std::vector<double> x_true(x0.begin(), x0.end());
  std::vector<double> w(static_cast<std::size_t>(spec.n), 0.0);

  for (int k = 0; k <= steps; ++k) {
    const double tk = k * T;
    const double uk = input(tk);
    traj.t.push_back(tk);
    traj.u.push_back(uk);
    for (int d = 0; d < spec.n; ++d) {
      const double truth = x_true[static_cast<std::size_t>(d)];
      traj.x_true.push_back(truth);
      traj.x.push_back(truth + (meas_sd > 0.0 ? normal(rng, 0.0, meas_sd) : 0.0));
    }
    if (k == steps) break;

    if (proc_sd > 0.0) {
      for (int d = 0; d < spec.n; ++d) w[static_cast<std::size_t>(d)] = normal(rng, 0.0, proc_sd);
    }
    rk4_step(
        [&](double, std::span<const double> s, std::span<double> ds) {
          plant_rhs<double, double>(spec, s, uk, ds);
          if (proc_sd > 0.0)
            for (int d = 0; d < spec.n; ++d) ds[static_cast<std::size_t>(d)] += w[static_cast<std::size_t>(d)];
        },
        tk, x_true, T);
    for (double v : x_true)
      if (!std::isfinite(v)) throw OdeDivergenceError(tk + T, x_true);
  }
  return traj;
}

void write_trajectory_csv(const SampledTrajectory& traj, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(f, "t,u");
  for (int d = 1; d <= traj.n; ++d) std::fprintf(f, ",x%d", d);
  std::fprintf(f, "\n");
  for (int k = 0; k < traj.samples(); ++k) {
    std::fprintf(f, "%.17g,%.17g", traj.t[static_cast<std::size_t>(k)], traj.u[static_cast<std::size_t>(k)]);
    for (int d = 0; d < traj.n; ++d)
      std::fprintf(f, ",%.17g", traj.x[static_cast<std::size_t>(k) * traj.n + d]);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

SampledTrajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trajectory file: " + path);
  int cols = 1;
  for (char c : line)
    if (c == ',') ++cols;
  SampledTrajectory traj;
  traj.n = cols - 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      const double v = std::strtod(cell.c_str(), nullptr);
      if (col == 0)
        traj.t.push_back(v);
      else if (col == 1)
        traj.u.push_back(v);
      else
        traj.x.push_back(v);
      ++col;
    }
  }
  if (traj.t.size() >= 2) traj.T = traj.t[1] - traj.t[0];
  return traj;
}

}  // namespace flforge
