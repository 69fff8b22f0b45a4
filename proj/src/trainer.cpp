#include "flforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace flforge {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (m < 1) throw std::invalid_argument("TrainConfig: m must be >= 1");
  loss.validate();
}

void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& state, const TrainConfig& cfg,
               std::span<const char> frozen) {
  const std::size_t P = theta.size();
  if (grad.size() != P) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (state.m1.size() != P) {
    state.m1.assign(P, 0.0);
    state.m2.assign(P, 0.0);
    state.step = 0;
  }
  for (double g : grad)
    if (!std::isfinite(g)) throw TrainingDivergedError("adam_step: non-finite gradient");

  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < P; ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    const double g = grad[i];
    state.m1[i] = b1 * state.m1[i] + (1.0 - b1) * g;
    state.m2[i] = b2 * state.m2[i] + (1.0 - b2) * g * g;
    const double mhat = state.m1[i] / c1;
    const double vhat = state.m2[i] / c2;
    theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

double clip_gradient(std::vector<double>& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

namespace {

struct EpochStats {
  double mean_total = 0.0;
};

TrainResult train_impl(const Dataset& dataset, const ModelParameters& init, const TrainConfig& cfg,
                       WindowProgram::Mode mode, std::span<const char> frozen) {
  cfg.validate();
  if (dataset.plant.n != init.shape.n)
    throw std::invalid_argument("train: dataset state dimension does not match the model");
  if (dataset.trajectories.empty()) throw std::invalid_argument("train: dataset is empty");

  const auto t_start = std::chrono::steady_clock::now();
  WindowProgram program(init.shape, cfg.m, cfg.loss, mode);
  WindowSampler sampler(dataset, cfg.m, cfg.seed);

  TrainResult result;
  result.params = init;
  result.params.eps1 = cfg.loss.eps1;
  AdamState adam;

  ModelParameters last_good = result.params;
  const std::size_t P = result.params.theta.size();
  std::vector<double> grads;
  std::vector<WindowProgram::Outputs> outs;
  std::vector<double> batch_grad(P);
  std::int64_t step = 0;

  double prev_epoch_mean = std::numeric_limits<double>::infinity();
  int slow_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<Window> windows = sampler.epoch(epoch);
    double epoch_total = 0.0;
    std::int64_t epoch_windows = 0;

    for (std::size_t pos = 0; pos < windows.size(); pos += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), windows.size() - pos);
      const std::span<const Window> batch(windows.data() + pos, take);
      program.run_batch(result.params.theta, batch, grads, outs, cfg.threads);

      // Fixed window-index-order reduction keeps results thread-invariant.
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      WindowProgram::Outputs mean{};
      for (std::size_t w = 0; w < take; ++w) {
        const double* g = grads.data() + w * P;
        for (std::size_t i = 0; i < P; ++i) batch_grad[i] += g[i];
        mean.l1 += outs[w].l1;
        mean.l2 += outs[w].l2;
        mean.l3 += outs[w].l3;
        mean.l4 += outs[w].l4;
        mean.lw += outs[w].lw;
        mean.total += outs[w].total;
        mean.max_v = max(mean.max_v, outs[w].max_v);
      }
      const double inv = 1.0 / static_cast<double>(take);
      for (std::size_t i = 0; i < P; ++i) batch_grad[i] *= inv;
      mean.l1 *= inv;
      mean.l2 *= inv;
      mean.l3 *= inv;
      mean.l4 *= inv;
      mean.lw *= inv;
      mean.total *= inv;
      mean.det_gamma = outs[0].det_gamma;  // parameter-only quantities
      mean.det_wl = outs[0].det_wl;

      if (!std::isfinite(mean.total)) {
        result.params = last_good;
        throw TrainingDivergedError("train: non-finite loss at step " + std::to_string(step) +
                                    " (l1=" + std::to_string(mean.l1) + ", detGamma=" + std::to_string(mean.det_gamma) +
                                    ")");
      }

      clip_gradient(batch_grad, cfg.clip_norm);
      adam_step(result.params.theta, batch_grad, adam, cfg, frozen);
      ++step;

      epoch_total += mean.total * static_cast<double>(take);
      epoch_windows += static_cast<std::int64_t>(take);

      TrainLogRow row;
      row.step = step;
      row.l1 = mean.l1;
      row.l2 = mean.l2;
      row.l3 = mean.l3;
      row.l4 = mean.l4;
      row.lw = mean.lw;
      row.total = mean.total;
      row.det_gamma = mean.det_gamma;
      row.det_wl = mean.det_wl;
      row.max_v = mean.max_v;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      result.log.rows.push_back(row);
    }

    last_good = result.params;
    result.log.epochs_run = epoch + 1;
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint(result.params, cfg.loss, cfg.checkpoint_dir + "/epoch_latest.json");
    }

    const double epoch_mean = epoch_windows > 0 ? epoch_total / static_cast<double>(epoch_windows) : 0.0;
    if (std::isfinite(prev_epoch_mean) && prev_epoch_mean > 0.0) {
      const double rel = (prev_epoch_mean - epoch_mean) / std::fabs(prev_epoch_mean);
      slow_epochs = (rel < cfg.converge_rel) ? slow_epochs + 1 : 0;
      if (slow_epochs >= cfg.converge_patience) {
        result.log.converged = true;
        break;
      }
    }
    prev_epoch_mean = epoch_mean;
  }
  return result;
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelParameters& init, const TrainConfig& cfg) {
  return train_impl(dataset, init, cfg, WindowProgram::Mode::Standard, {});
}

TrainResult train_two_stage(const Dataset& zero_input_dataset, const Dataset& dataset, const ModelParameters& init,
                            const TrainConfig& cfg) {
  if (!zero_input_dataset.manifest.zero_input)
    throw std::invalid_argument("train_two_stage: first dataset must be generated with u = 0");
  ModelParameters stage_init = init;
  stage_init.variant = ModelVariant::TwoStage;

  TrainResult stage1 = train_impl(zero_input_dataset, stage_init, cfg, WindowProgram::Mode::StageOne, {});

  // Stage two: freeze the gamma net (alpha slot).
  ParamLayout layout(init.shape);
  std::vector<char> frozen(static_cast<std::size_t>(layout.total), 0);
  for (int i = layout.alpha_off; i < layout.alpha_off + layout.net_params; ++i) frozen[static_cast<std::size_t>(i)] = 1;

  TrainResult stage2 = train_impl(dataset, stage1.params, cfg, WindowProgram::Mode::StageTwo, frozen);
  // Keep one log: stage-1 rows then stage-2 rows with offset step ids.
  const std::int64_t offset = stage1.log.rows.empty() ? 0 : stage1.log.rows.back().step;
  for (TrainLogRow& r : stage2.log.rows) r.step += offset;
  stage1.log.rows.insert(stage1.log.rows.end(), stage2.log.rows.begin(), stage2.log.rows.end());
  stage2.log = std::move(stage1.log);
  return stage2;
}

WindowProgram::Outputs evaluate_loss(const Dataset& dataset, const ModelParameters& params, const TrainConfig& cfg,
                                     int max_windows) {
  const WindowProgram::Mode mode = params.variant == ModelVariant::Standard ? WindowProgram::Mode::Standard
                                                                            : WindowProgram::Mode::StageTwo;
  WindowProgram program(params.shape, cfg.m, cfg.loss, mode);
  WindowSampler sampler(dataset, cfg.m, cfg.seed);
  const std::vector<Window> windows = sampler.epoch(0);
  const std::size_t count = max_windows > 0 ? std::min<std::size_t>(windows.size(), static_cast<std::size_t>(max_windows))
                                            : windows.size();
  WindowProgram::Outputs mean{};
  for (std::size_t i = 0; i < count; ++i) {
    const WindowProgram::Outputs o = program.eval_window(params.theta, windows[i]);
    mean.l1 += o.l1;
    mean.l2 += o.l2;
    mean.l3 += o.l3;
    mean.l4 += o.l4;
    mean.lw += o.lw;
    mean.total += o.total;
    mean.max_v = max(mean.max_v, o.max_v);
    mean.det_gamma = o.det_gamma;
    mean.det_wl = o.det_wl;
  }
  const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
  mean.l1 *= inv;
  mean.l2 *= inv;
  mean.l3 *= inv;
  mean.l4 *= inv;
  mean.lw *= inv;
  mean.total *= inv;
  return mean;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

nlohmann::json tensor_json(std::span<const double> v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

std::vector<double> tensor_from(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

}  // namespace

void save_checkpoint(const ModelParameters& params, const LossConfig& loss, const std::string& path) {
  ParamLayout layout(params.shape);
  nlohmann::json j;
  j["format"] = "flforge-checkpoint-v1";
  j["variant"] = to_string(params.variant);
  j["seed"] = params.seed;
  j["shape"] = {{"n", params.shape.n},
                {"hidden", params.shape.hidden},
                {"depth", params.shape.depth},
                {"blocks", params.shape.blocks},
                {"T", params.shape.T}};
  j["loss"] = {{"eps1", loss.eps1}, {"eps2", loss.eps2}, {"eps3", loss.eps3}, {"a1", loss.a1},
               {"a2", loss.a2},     {"a3", loss.a3},     {"a4", loss.a4},     {"aW", loss.aW},
               {"state_weights", loss.state_weights}};
  const std::span<const double> theta(params.theta);
  nlohmann::json t;
  t["alpha_net"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.alpha_off), static_cast<std::size_t>(layout.net_params)));
  t["beta_net"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.beta_off), static_cast<std::size_t>(layout.net_params)));
  for (int b = 0; b < params.shape.blocks; ++b)
    for (int i = 0; i < params.shape.n; ++i) {
      t["s_net_" + std::to_string(b) + "_" + std::to_string(i)] =
          tensor_json(theta.subspan(static_cast<std::size_t>(layout.s_net_off(b, i)), static_cast<std::size_t>(layout.st_net_params)));
      t["t_net_" + std::to_string(b) + "_" + std::to_string(i)] =
          tensor_json(theta.subspan(static_cast<std::size_t>(layout.t_net_off(b, i)), static_cast<std::size_t>(layout.st_net_params)));
    }
  t["W_l"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.wl_off), static_cast<std::size_t>(params.shape.n * params.shape.n)));
  t["b_l"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.bl_off), static_cast<std::size_t>(params.shape.n)));
  t["A"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.a_off), static_cast<std::size_t>(params.shape.n * params.shape.n)));
  t["B"] = tensor_json(theta.subspan(static_cast<std::size_t>(layout.b_off), static_cast<std::size_t>(params.shape.n)));
  j["tensors"] = std::move(t);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("format").get<std::string>() != "flforge-checkpoint-v1")
    throw std::runtime_error("unknown checkpoint format in " + path);

  Checkpoint ck;
  ck.params.variant = variant_from_string(j.at("variant").get<std::string>());
  ck.params.seed = j.at("seed").get<std::uint64_t>();
  const auto& sh = j.at("shape");
  ck.params.shape.n = sh.at("n").get<int>();
  ck.params.shape.hidden = sh.at("hidden").get<int>();
  ck.params.shape.depth = sh.at("depth").get<int>();
  ck.params.shape.blocks = sh.at("blocks").get<int>();
  ck.params.shape.T = sh.at("T").get<double>();
  const auto& lo = j.at("loss");
  ck.loss.eps1 = lo.at("eps1").get<double>();
  ck.loss.eps2 = lo.at("eps2").get<double>();
  ck.loss.eps3 = lo.at("eps3").get<double>();
  ck.loss.a1 = lo.at("a1").get<double>();
  ck.loss.a2 = lo.at("a2").get<double>();
  ck.loss.a3 = lo.at("a3").get<double>();
  ck.loss.a4 = lo.at("a4").get<double>();
  ck.loss.aW = lo.at("aW").get<double>();
  ck.loss.state_weights = lo.at("state_weights").get<std::vector<double>>();
  ck.params.eps1 = ck.loss.eps1;

  ParamLayout layout(ck.params.shape);
  ck.params.theta.assign(static_cast<std::size_t>(layout.total), 0.0);
  const auto& t = j.at("tensors");
  auto place = [&](const std::string& name, int off, int count) {
    const std::vector<double> v = tensor_from(t.at(name));
    if (static_cast<int>(v.size()) != count)
      throw std::runtime_error("checkpoint tensor " + name + " has wrong size for the declared shape");
    std::copy(v.begin(), v.end(), ck.params.theta.begin() + off);
  };
  place("alpha_net", layout.alpha_off, layout.net_params);
  place("beta_net", layout.beta_off, layout.net_params);
  for (int b = 0; b < ck.params.shape.blocks; ++b)
    for (int i = 0; i < ck.params.shape.n; ++i) {
      place("s_net_" + std::to_string(b) + "_" + std::to_string(i), layout.s_net_off(b, i), layout.st_net_params);
      place("t_net_" + std::to_string(b) + "_" + std::to_string(i), layout.t_net_off(b, i), layout.st_net_params);
    }
  place("W_l", layout.wl_off, ck.params.shape.n * ck.params.shape.n);
  place("b_l", layout.bl_off, ck.params.shape.n);
  place("A", layout.a_off, ck.params.shape.n * ck.params.shape.n);
  place("B", layout.b_off, ck.params.shape.n);
  return ck;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write train log: " + path);
  std::fprintf(f, "step,l1,l2,l3,l4,lw,total,detGamma,detWl,maxv,seconds\n");
  for (const TrainLogRow& r : log.rows)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n",
                 static_cast<long long>(r.step), r.l1, r.l2, r.l3, r.l4, r.lw, r.total, r.det_gamma, r.det_wl, r.max_v,
                 r.seconds);
  std::fclose(f);
}

}  // namespace flforge
