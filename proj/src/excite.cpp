#include "flforge/excite.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "flforge/parallel.hpp"

namespace flforge {

void SignalSpec::validate() const {
  if (L < 1) throw std::invalid_argument("SignalSpec: L must be >= 1");
  if (resegment_interval <= 0.0) throw std::invalid_argument("SignalSpec: resegment_interval must be positive");
  if (lowpass_tau < 0.0) throw std::invalid_argument("SignalSpec: lowpass_tau must be >= 0");
}

InputSignal::InputSignal(const SignalSpec& spec, std::uint64_t seed, double sample_period)
    : spec_(spec), T_(sample_period), rng_(seed) {
  spec_.validate();
  if (T_ <= 0.0) throw std::invalid_argument("InputSignal: sample period must be positive");
}

const InputSignal::Segment& InputSignal::segment(int s) const {
  while (static_cast<int>(segments_.size()) <= s) {
    Segment seg;
    seg.amp.resize(static_cast<std::size_t>(spec_.L));
    seg.freq.resize(static_cast<std::size_t>(spec_.L));
    seg.phase.resize(static_cast<std::size_t>(spec_.L));
    for (int i = 0; i < spec_.L; ++i) {
      seg.amp[static_cast<std::size_t>(i)] = normal(rng_, spec_.amp_mean, spec_.amp_stddev);
      seg.freq[static_cast<std::size_t>(i)] = uniform(rng_, spec_.freq_lo, spec_.freq_hi);
      seg.phase[static_cast<std::size_t>(i)] = uniform(rng_, -std::numbers::pi, std::numbers::pi);
    }
    segments_.push_back(std::move(seg));
  }
  return segments_[static_cast<std::size_t>(s)];
}

double InputSignal::raw(double t) const {
  const int s = static_cast<int>(std::floor(t / spec_.resegment_interval));
  const Segment& seg = segment(s < 0 ? 0 : s);
  double u = 0.0;
  for (int i = 0; i < spec_.L; ++i)
    u += seg.amp[static_cast<std::size_t>(i)] *
         std::sin(seg.freq[static_cast<std::size_t>(i)] * t + seg.phase[static_cast<std::size_t>(i)]);
  return u;
}

void InputSignal::ensure_samples(int k) const {
  while (static_cast<int>(filtered_.size()) <= k) {
    const int i = static_cast<int>(filtered_.size());
    const double uraw = raw(i * T_);
    if (filtered_.empty()) {
      filtered_.push_back(uraw);  // filter state starts on the signal
    } else {
      const double prev = filtered_.back();
      const double a = T_ / spec_.lowpass_tau;
      filtered_.push_back(prev + a * (uraw - prev));
    }
  }
}

double InputSignal::at_sample(int k) const {
  if (k < 0) throw std::invalid_argument("InputSignal: negative sample index");
  if (spec_.lowpass_tau == 0.0) return raw(k * T_);
  ensure_samples(k);
  return filtered_[static_cast<std::size_t>(k)];
}

double InputSignal::operator()(double t) const {
  if (spec_.lowpass_tau == 0.0) return raw(t);
  return at_sample(static_cast<int>(std::floor(t / T_ + 1e-9)));
}

std::vector<double> sample_initial_condition(PlantId id, Rng& rng) {
  switch (id) {
    case PlantId::C1: return {uniform(rng, -10.0, 10.0), uniform(rng, -10.0, 10.0)};
    case PlantId::C2: return {uniform(rng, -10.0, 10.0), uniform(rng, -10.0, 10.0), uniform(rng, -10.0, 10.0)};
    case PlantId::C3:
      return {uniform(rng, -std::numbers::pi, std::numbers::pi), uniform(rng, -3.0, 3.0),
              uniform(rng, -std::numbers::pi, std::numbers::pi), uniform(rng, -3.0, 3.0)};
  }
  throw std::invalid_argument("sample_initial_condition: unknown plant id");
}

std::int64_t Dataset::pair_count() const {
  std::int64_t total = 0;
  for (const auto& tr : trajectories) total += tr.samples() - 1;
  return total;
}

Dataset generate_dataset(const PlantSpec& plant, const SignalSpec& signal, int n_traj, double duration, double T,
                         const NoiseSpec& noise, std::uint64_t seed, int threads, bool zero_input) {
  plant.validate();
  signal.validate();
  const double steps_f = duration / T;
  if (std::fabs(steps_f - std::llround(steps_f)) > 1e-9)
    throw std::invalid_argument("generate_dataset: duration must be a multiple of T");
  if (n_traj < 1) throw std::invalid_argument("generate_dataset: n_traj must be >= 1");

  Dataset ds;
  ds.plant = plant;
  ds.manifest.plant = to_string(plant.id);
  ds.manifest.T = T;
  ds.manifest.duration = duration;
  ds.manifest.n_traj = n_traj;
  ds.manifest.seed = seed;
  ds.manifest.signal = signal;
  ds.manifest.noise = noise;
  ds.manifest.zero_input = zero_input;
  ds.trajectories.resize(static_cast<std::size_t>(n_traj));

  std::vector<char> failed(static_cast<std::size_t>(n_traj), 0);
  par::for_index(n_traj, threads, [&](std::int64_t k) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(k));
    const std::vector<double> x0 = sample_initial_condition(plant.id, rng);
    const std::uint64_t sig_seed = rng();
    InputSignal sig(signal, sig_seed, T);
    NoiseSpec traj_noise = noise;
    traj_noise.seed = noise.seed ^ static_cast<std::uint64_t>(k);
    auto input = [&](double t) { return zero_input ? 0.0 : sig(t); };
    try {
      ds.trajectories[static_cast<std::size_t>(k)] = simulate_sampled(plant, x0, input, duration, T, traj_noise);
    } catch (const OdeDivergenceError&) {
      failed[static_cast<std::size_t>(k)] = 1;
    }
  });

  for (int k = 0; k < n_traj; ++k)
    if (failed[static_cast<std::size_t>(k)]) ds.manifest.diverged.push_back(k);
  if (!ds.manifest.diverged.empty()) {
    if (100 * static_cast<int>(ds.manifest.diverged.size()) > n_traj)
      throw DatasetError("generate_dataset: more than 1% of trajectories diverged");
    // Drop aborted trajectories but keep the record of their indices.
    std::vector<SampledTrajectory> keep;
    keep.reserve(ds.trajectories.size());
    for (int k = 0; k < n_traj; ++k)
      if (!failed[static_cast<std::size_t>(k)]) keep.push_back(std::move(ds.trajectories[static_cast<std::size_t>(k)]));
    ds.trajectories = std::move(keep);
  }
  return ds;
}

WindowSampler::WindowSampler(const Dataset& dataset, int m, std::uint64_t seed)
    : dataset_(&dataset), m_(m), seed_(seed) {
  if (m < 1) throw std::invalid_argument("WindowSampler: m must be >= 1");
  for (int k = 0; k < static_cast<int>(dataset.trajectories.size()); ++k) {
    const int len = dataset.trajectories[static_cast<std::size_t>(k)].samples();
    if (m + 1 > len) throw std::invalid_argument("WindowSampler: m too large for trajectory length");
    for (int j = 0; j + m < len; ++j) index_.emplace_back(k, j);
  }
}

std::vector<Window> WindowSampler::epoch(int e) const {
  std::vector<std::pair<int, int>> order = index_;
  Rng rng = substream(seed_, static_cast<std::uint64_t>(e));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Window> out;
  out.reserve(order.size());
  for (const auto& [k, j] : order)
    out.push_back(Window{&dataset_->trajectories[static_cast<std::size_t>(k)], j, m_});
  return out;
}

namespace {

nlohmann::json signal_to_json(const SignalSpec& s) {
  return {{"L", s.L},
          {"amp_mean", s.amp_mean},
          {"amp_stddev", s.amp_stddev},
          {"freq_lo", s.freq_lo},
          {"freq_hi", s.freq_hi},
          {"resegment_interval", s.resegment_interval},
          {"lowpass_tau", s.lowpass_tau},
          {"seed", s.seed}};
}

SignalSpec signal_from_json(const nlohmann::json& j) {
  SignalSpec s;
  s.L = j.at("L").get<int>();
  s.amp_mean = j.at("amp_mean").get<double>();
  s.amp_stddev = j.at("amp_stddev").get<double>();
  s.freq_lo = j.at("freq_lo").get<double>();
  s.freq_hi = j.at("freq_hi").get<double>();
  s.resegment_interval = j.at("resegment_interval").get<double>();
  s.lowpass_tau = j.at("lowpass_tau").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

nlohmann::json noise_to_json(const NoiseSpec& s) {
  return {{"process_variance", s.process_variance},
          {"measurement_variance", s.measurement_variance},
          {"seed", s.seed}};
}

NoiseSpec noise_from_json(const nlohmann::json& j) {
  NoiseSpec s;
  s.process_variance = j.at("process_variance").get<double>();
  s.measurement_variance = j.at("measurement_variance").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["plant"] = dataset.manifest.plant;
  j["T"] = dataset.manifest.T;
  j["duration"] = dataset.manifest.duration;
  j["n_traj"] = dataset.manifest.n_traj;
  j["seed"] = dataset.manifest.seed;
  j["signal"] = signal_to_json(dataset.manifest.signal);
  j["noise"] = noise_to_json(dataset.manifest.noise);
  j["zero_input"] = dataset.manifest.zero_input;
  j["diverged"] = dataset.manifest.diverged;
  j["stribeck_signed"] = dataset.plant.stribeck_signed;
  j["stored_trajectories"] = static_cast<int>(dataset.trajectories.size());
  std::ofstream out(dir + "/manifest.json");
  out << j.dump(2) << "\n";
  for (std::size_t k = 0; k < dataset.trajectories.size(); ++k)
    write_trajectory_csv(dataset.trajectories[k], dir + "/traj_" + std::to_string(k) + ".csv");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw DatasetError("load_dataset: missing manifest in " + dir);
  nlohmann::json j;
  in >> j;
  Dataset ds;
  ds.manifest.plant = j.at("plant").get<std::string>();
  ds.manifest.T = j.at("T").get<double>();
  ds.manifest.duration = j.at("duration").get<double>();
  ds.manifest.n_traj = j.at("n_traj").get<int>();
  ds.manifest.seed = j.at("seed").get<std::uint64_t>();
  ds.manifest.signal = signal_from_json(j.at("signal"));
  ds.manifest.noise = noise_from_json(j.at("noise"));
  ds.manifest.zero_input = j.at("zero_input").get<bool>();
  ds.manifest.diverged = j.at("diverged").get<std::vector<int>>();
  ds.plant = PlantSpec::make(plant_id_from_string(ds.manifest.plant));
  ds.plant.stribeck_signed = j.at("stribeck_signed").get<bool>();
  const int stored = j.at("stored_trajectories").get<int>();
  ds.trajectories.reserve(static_cast<std::size_t>(stored));
  for (int k = 0; k < stored; ++k) {
    SampledTrajectory tr = read_trajectory_csv(dir + "/traj_" + std::to_string(k) + ".csv");
    if (tr.n != ds.plant.n) throw DatasetError("load_dataset: trajectory dimension mismatch");
    ds.trajectories.push_back(std::move(tr));
  }
  if (static_cast<int>(ds.trajectories.size()) + static_cast<int>(ds.manifest.diverged.size()) != ds.manifest.n_traj)
    throw DatasetError("load_dataset: manifest count does not match stored trajectories");
  return ds;
}

}  // namespace flforge
