#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flforge/excite.hpp"
#include "flforge/flmodel.hpp"

namespace flforge {

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 32;     // windows per optimizer step
  int epochs = 100;
  int m = 16;         // rollout window length
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool two_stage = false;
  // stop when the relative improvement of the epoch-mean loss stays below
  // this over `patience` epochs
  double converge_rel = 1e-5;
  int converge_patience = 10;
  std::string checkpoint_dir;  // per-epoch checkpoints when non-empty
  LossConfig loss;

  void validate() const;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double l1 = 0, l2 = 0, l3 = 0, l4 = 0, lw = 0, total = 0;
  double det_gamma = 0, det_wl = 0, max_v = 0;
  double seconds = 0;  // wall time since training start; excluded from determinism checks
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  int epochs_run = 0;
  bool converged = false;
};

struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<double> m1, m2;
  std::int64_t step = 0;
};

/// Bias-corrected Adam update, in place. `frozen` marks parameters that must
/// not move (two-stage fine-tuning); pass an empty span when none are.
void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& state, const TrainConfig& cfg,
               std::span<const char> frozen = {});

/// Global-norm gradient clipping; returns the pre-clip norm.
double clip_gradient(std::vector<double>& grad, double max_norm);

struct TrainResult {
  ModelParameters params;
  TrainLog log;
};

TrainResult train(const Dataset& dataset, const ModelParameters& init, const TrainConfig& cfg);

/// Remark-style two-stage schedule: stage one learns gamma = -alpha/beta on
/// zero-input data (u is never read); stage two freezes gamma and learns
/// beta plus the transform refinement on the full dataset.
TrainResult train_two_stage(const Dataset& zero_input_dataset, const Dataset& dataset, const ModelParameters& init,
                            const TrainConfig& cfg);

/// Mean loss terms of a window set under fixed parameters (held-out check).
WindowProgram::Outputs evaluate_loss(const Dataset& dataset, const ModelParameters& params, const TrainConfig& cfg,
                                     int max_windows = 0);

void save_checkpoint(const ModelParameters& params, const LossConfig& loss, const std::string& path);
struct Checkpoint {
  ModelParameters params;
  LossConfig loss;
};
Checkpoint load_checkpoint(const std::string& path);

void write_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace flforge
