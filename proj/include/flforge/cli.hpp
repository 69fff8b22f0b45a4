#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flforge/evalharness.hpp"
#include "flforge/excite.hpp"
#include "flforge/flmodel.hpp"
#include "flforge/trainer.hpp"

namespace flforge::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalSpecConfig {
  int n_traj = 20;
  double duration = 2.0;
  int samples = 1000;   // single-step sample count
  double box = 5.0;     // single-step state box half-width
  double u_max = 3.0;   // single-step input half-range
};

struct RunConfig {
  PlantSpec plant = PlantSpec::make(PlantId::C1);
  SignalSpec signal;
  int n_traj = 10;
  double duration = 2.0;
  double T = 5e-3;
  bool zero_input = false;
  NoiseSpec noise;
  ModelShape model;  // n/T filled from plant/dataset on resolve
  TrainConfig train;
  EvalSpecConfig eval;
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  int threads = 1;
};

/// Parse with a strict schema: unknown keys anywhere are an error. The
/// FLFORGE_SEED environment variable overrides the seed.
RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);
void write_resolved_config(const RunConfig& cfg, const std::string& dir);

/// Exit codes shared by the CLI: 0 ok, 2 config, 3 simulation, 4 training,
/// 5 evaluation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSimulation = 3;
inline constexpr int kExitTraining = 4;
inline constexpr int kExitEvaluation = 5;

struct CommonFlags {
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const RunConfig& cfg, const CommonFlags& flags);
int cmd_train(const RunConfig& cfg, const std::string& data_dir, const CommonFlags& flags,
              const std::optional<std::string>& resume, bool two_stage);

struct EvalFlags {
  std::string checkpoint;
  std::optional<int> trajectories;
  std::optional<double> variance;
  std::string noise_mode = "measurement";
  std::string prediction_mode = "open";  // or "measured"
  bool with_exact = false;
  bool with_perturbed = false;
  bool perturbed_analytic = false;  // for `eval analytic`
  std::vector<double> poles_re;     // parsed "0.95,0.9"
  std::vector<double> x_eq;
  std::vector<double> x0;
  double horizon = 5.0;
};

int cmd_eval_single_step(const RunConfig& cfg, const EvalFlags& fl, const CommonFlags& flags);
int cmd_eval_rollout(const RunConfig& cfg, const EvalFlags& fl, const CommonFlags& flags);
int cmd_eval_noise(const RunConfig& cfg, const EvalFlags& fl, const CommonFlags& flags);
int cmd_eval_linear_report(const EvalFlags& fl, const CommonFlags& flags);
int cmd_eval_closed_loop(const RunConfig& cfg, const EvalFlags& fl, const CommonFlags& flags);
int cmd_eval_analytic(const RunConfig& cfg, const EvalFlags& fl, const CommonFlags& flags);

}  // namespace flforge::cli
