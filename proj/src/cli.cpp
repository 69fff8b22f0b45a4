#include "flforge/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace flforge::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <class T>
void opt(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

PlantSpec parse_plant(const json& j) {
  reject_unknown(j, {"id", "stribeck_signed", "params"}, "plant");
  if (!j.contains("id")) throw ConfigError("config: plant.id is required");
  PlantSpec spec = PlantSpec::make(plant_id_from_string(j.at("id").get<std::string>()));
  opt(j, "stribeck_signed", spec.stribeck_signed);
  if (j.contains("params")) {
    const json& p = j.at("params");
    switch (spec.id) {
      case PlantId::C1:
        reject_unknown(p, {"d1", "d2", "d3"}, "plant.params");
        opt(p, "d1", spec.c1.d1);
        opt(p, "d2", spec.c1.d2);
        opt(p, "d3", spec.c1.d3);
        break;
      case PlantId::C2:
        reject_unknown(p, {"d1", "d2", "d3"}, "plant.params");
        opt(p, "d1", spec.c2.d1);
        opt(p, "d2", spec.c2.d2);
        opt(p, "d3", spec.c2.d3);
        break;
      case PlantId::C3:
        reject_unknown(p, {"M", "g", "l", "I", "J", "f_v", "f_c", "f_s", "omega_s", "k1", "k2", "k3"}, "plant.params");
        opt(p, "M", spec.c3.M);
        opt(p, "g", spec.c3.g);
        opt(p, "l", spec.c3.l);
        opt(p, "I", spec.c3.I);
        opt(p, "J", spec.c3.J);
        opt(p, "f_v", spec.c3.f_v);
        opt(p, "f_c", spec.c3.f_c);
        opt(p, "f_s", spec.c3.f_s);
        opt(p, "omega_s", spec.c3.omega_s);
        opt(p, "k1", spec.c3.k1);
        opt(p, "k2", spec.c3.k2);
        opt(p, "k3", spec.c3.k3);
        break;
    }
  }
  return spec;
}

json plant_to_json(const PlantSpec& spec) {
  json p;
  switch (spec.id) {
    case PlantId::C1: p = {{"d1", spec.c1.d1}, {"d2", spec.c1.d2}, {"d3", spec.c1.d3}}; break;
    case PlantId::C2: p = {{"d1", spec.c2.d1}, {"d2", spec.c2.d2}, {"d3", spec.c2.d3}}; break;
    case PlantId::C3:
      p = {{"M", spec.c3.M},     {"g", spec.c3.g},     {"l", spec.c3.l},
           {"I", spec.c3.I},     {"J", spec.c3.J},     {"f_v", spec.c3.f_v},
           {"f_c", spec.c3.f_c}, {"f_s", spec.c3.f_s}, {"omega_s", spec.c3.omega_s},
           {"k1", spec.c3.k1},   {"k2", spec.c3.k2},   {"k3", spec.c3.k3}};
      break;
  }
  return {{"id", to_string(spec.id)}, {"stribeck_signed", spec.stribeck_signed}, {"params", p}};
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j, {"plant", "signal", "dataset", "model", "loss", "train", "eval", "output_dir", "seed", "threads"},
                 "top level");
  RunConfig cfg;
  if (!j.contains("plant")) throw ConfigError("config: plant section is required");
  cfg.plant = parse_plant(j.at("plant"));

  if (j.contains("signal")) {
    const json& s = j.at("signal");
    reject_unknown(s, {"L", "amp_mean", "amp_stddev", "freq_lo", "freq_hi", "resegment_interval", "lowpass_tau"},
                   "signal");
    opt(s, "L", cfg.signal.L);
    opt(s, "amp_mean", cfg.signal.amp_mean);
    opt(s, "amp_stddev", cfg.signal.amp_stddev);
    opt(s, "freq_lo", cfg.signal.freq_lo);
    opt(s, "freq_hi", cfg.signal.freq_hi);
    opt(s, "resegment_interval", cfg.signal.resegment_interval);
    opt(s, "lowpass_tau", cfg.signal.lowpass_tau);
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"n_traj", "duration", "T", "zero_input", "noise"}, "dataset");
    opt(d, "n_traj", cfg.n_traj);
    opt(d, "duration", cfg.duration);
    opt(d, "T", cfg.T);
    opt(d, "zero_input", cfg.zero_input);
    if (d.contains("noise")) {
      const json& nz = d.at("noise");
      reject_unknown(nz, {"process_variance", "measurement_variance", "seed"}, "dataset.noise");
      opt(nz, "process_variance", cfg.noise.process_variance);
      opt(nz, "measurement_variance", cfg.noise.measurement_variance);
      opt(nz, "seed", cfg.noise.seed);
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"hidden", "depth", "blocks"}, "model");
    opt(m, "hidden", cfg.model.hidden);
    opt(m, "depth", cfg.model.depth);
    opt(m, "blocks", cfg.model.blocks);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"eps1", "eps2", "eps3", "a1", "a2", "a3", "a4", "aW", "state_weights"}, "loss");
    opt(l, "eps1", cfg.train.loss.eps1);
    opt(l, "eps2", cfg.train.loss.eps2);
    opt(l, "eps3", cfg.train.loss.eps3);
    opt(l, "a1", cfg.train.loss.a1);
    opt(l, "a2", cfg.train.loss.a2);
    opt(l, "a3", cfg.train.loss.a3);
    opt(l, "a4", cfg.train.loss.a4);
    opt(l, "aW", cfg.train.loss.aW);
    opt(l, "state_weights", cfg.train.loss.state_weights);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"learning_rate", "batch", "epochs", "m", "clip_norm", "two_stage", "converge_rel",
                    "converge_patience"},
                   "train");
    opt(t, "learning_rate", cfg.train.learning_rate);
    opt(t, "batch", cfg.train.batch);
    opt(t, "epochs", cfg.train.epochs);
    opt(t, "m", cfg.train.m);
    opt(t, "clip_norm", cfg.train.clip_norm);
    opt(t, "two_stage", cfg.train.two_stage);
    opt(t, "converge_rel", cfg.train.converge_rel);
    opt(t, "converge_patience", cfg.train.converge_patience);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, {"n_traj", "duration", "samples", "box", "u_max"}, "eval");
    opt(e, "n_traj", cfg.eval.n_traj);
    opt(e, "duration", cfg.eval.duration);
    opt(e, "samples", cfg.eval.samples);
    opt(e, "box", cfg.eval.box);
    opt(e, "u_max", cfg.eval.u_max);
  }
  opt(j, "output_dir", cfg.output_dir);
  opt(j, "seed", cfg.seed);
  opt(j, "threads", cfg.threads);

  if (const char* env = std::getenv("FLFORGE_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("FLFORGE_SEED is not an integer");
    }
  }

  cfg.model.n = cfg.plant.n;
  cfg.model.T = cfg.T;
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;
  cfg.signal.seed = cfg.seed;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  j["plant"] = plant_to_json(cfg.plant);
  j["signal"] = {{"L", cfg.signal.L},
                 {"amp_mean", cfg.signal.amp_mean},
                 {"amp_stddev", cfg.signal.amp_stddev},
                 {"freq_lo", cfg.signal.freq_lo},
                 {"freq_hi", cfg.signal.freq_hi},
                 {"resegment_interval", cfg.signal.resegment_interval},
                 {"lowpass_tau", cfg.signal.lowpass_tau}};
  j["dataset"] = {{"n_traj", cfg.n_traj},
                  {"duration", cfg.duration},
                  {"T", cfg.T},
                  {"zero_input", cfg.zero_input},
                  {"noise",
                   {{"process_variance", cfg.noise.process_variance},
                    {"measurement_variance", cfg.noise.measurement_variance},
                    {"seed", cfg.noise.seed}}}};
  j["model"] = {{"hidden", cfg.model.hidden}, {"depth", cfg.model.depth}, {"blocks", cfg.model.blocks}};
  j["loss"] = {{"eps1", cfg.train.loss.eps1}, {"eps2", cfg.train.loss.eps2}, {"eps3", cfg.train.loss.eps3},
               {"a1", cfg.train.loss.a1},     {"a2", cfg.train.loss.a2},     {"a3", cfg.train.loss.a3},
               {"a4", cfg.train.loss.a4},     {"aW", cfg.train.loss.aW},
               {"state_weights", cfg.train.loss.state_weights}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"batch", cfg.train.batch},
                {"epochs", cfg.train.epochs},
                {"m", cfg.train.m},
                {"clip_norm", cfg.train.clip_norm},
                {"two_stage", cfg.train.two_stage},
                {"converge_rel", cfg.train.converge_rel},
                {"converge_patience", cfg.train.converge_patience}};
  j["eval"] = {{"n_traj", cfg.eval.n_traj},
               {"duration", cfg.eval.duration},
               {"samples", cfg.eval.samples},
               {"box", cfg.eval.box},
               {"u_max", cfg.eval.u_max}};
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j.dump(2) + "\n";
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/resolved_config.json");
  out << config_to_json_text(cfg);
}

namespace {

RunConfig apply_flags(RunConfig cfg, const CommonFlags& flags) {
  if (flags.out) cfg.output_dir = *flags.out;
  if (flags.threads) {
    cfg.threads = *flags.threads;
    cfg.train.threads = *flags.threads;
  }
  if (flags.seed) {
    cfg.seed = *flags.seed;
    cfg.train.seed = *flags.seed;
    cfg.signal.seed = *flags.seed;
  }
  return cfg;
}

ModelParameters load_model_or_throw(const std::string& path, int expected_n) {
  Checkpoint ck = load_checkpoint(path);
  if (expected_n > 0 && ck.params.shape.n != expected_n)
    throw std::runtime_error("checkpoint dimension n=" + std::to_string(ck.params.shape.n) +
                             " does not match plant n=" + std::to_string(expected_n));
  return ck.params;
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg_in, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const Dataset ds = generate_dataset(cfg.plant, cfg.signal, cfg.n_traj, cfg.duration, cfg.T, cfg.noise, cfg.seed,
                                        cfg.threads, cfg.zero_input);
    write_resolved_config(cfg, cfg.output_dir);
    save_dataset(ds, cfg.output_dir);
    std::cout << ds.pair_count() << " pairs\n";
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSimulation;
  }
}

int cmd_train(const RunConfig& cfg_in, const std::string& data_dir, const CommonFlags& flags,
              const std::optional<std::string>& resume, bool two_stage_flag) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const Dataset ds = load_dataset(data_dir);
    if (ds.plant.n != cfg.plant.n) {
      std::cerr << "error: dataset plant does not match config plant\n";
      return kExitConfig;
    }
    ModelShape shape = cfg.model;
    shape.n = ds.plant.n;
    shape.T = ds.T();

    ModelParameters start;
    if (resume) {
      start = load_model_or_throw(*resume, shape.n);
    } else {
      const bool two_stage = two_stage_flag || cfg.train.two_stage;
      start = init_params(shape, cfg.seed, two_stage ? ModelVariant::TwoStage : ModelVariant::Standard);
    }
    start.eps1 = cfg.train.loss.eps1;

    TrainConfig tc = cfg.train;
    tc.two_stage = two_stage_flag || cfg.train.two_stage;
    std::filesystem::create_directories(cfg.output_dir);
    tc.checkpoint_dir = cfg.output_dir;

    TrainResult result;
    if (tc.two_stage) {
      // Stage one wants zero-input data; a dataset generated with u = 0 is
      // detected from its manifest, otherwise one is synthesized here.
      if (ds.manifest.zero_input) {
        const Dataset full = generate_dataset(cfg.plant, cfg.signal, cfg.n_traj, cfg.duration, cfg.T, cfg.noise,
                                              cfg.seed + 1, cfg.threads, false);
        result = train_two_stage(ds, full, start, tc);
      } else {
        const Dataset zero = generate_dataset(cfg.plant, cfg.signal, cfg.n_traj, cfg.duration, cfg.T, cfg.noise,
                                              cfg.seed + 1, cfg.threads, true);
        result = train_two_stage(zero, ds, start, tc);
      }
    } else {
      result = train(ds, start, tc);
    }

    write_resolved_config(cfg, cfg.output_dir);
    save_checkpoint(result.params, tc.loss, cfg.output_dir + "/checkpoint.json");
    write_train_log_csv(result.log, cfg.output_dir + "/train_log.csv");
    if (!result.log.rows.empty())
      std::cout << "final loss " << result.log.rows.back().total << " after " << result.log.epochs_run << " epochs\n";
    else
      std::cout << "no training steps run\n";
    return kExitOk;
  } catch (const TrainingDivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTraining;
  }
}

int cmd_eval_single_step(const RunConfig& cfg_in, const EvalFlags& fl, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const ModelParameters model = load_model_or_throw(fl.checkpoint, cfg.plant.n);
    std::vector<double> x0s, u0s;
    sample_single_step_inputs(cfg.plant.n, cfg.eval.samples, cfg.eval.box, cfg.eval.u_max, cfg.seed, x0s, u0s);
    const SingleStepResult res = single_step_eval(model, cfg.plant, x0s, u0s, model.shape.T);

    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir);
    std::FILE* f = std::fopen((cfg.output_dir + "/single_step.csv").c_str(), "w");
    if (!f) throw std::runtime_error("cannot write single_step.csv");
    std::fprintf(f, "sample,u0");
    for (int d = 1; d <= cfg.plant.n; ++d) std::fprintf(f, ",x%d_0", d);
    for (int d = 1; d <= cfg.plant.n; ++d) std::fprintf(f, ",abs_err_x%d", d);
    std::fprintf(f, "\n");
    for (int i = 0; i < cfg.eval.samples; ++i) {
      std::fprintf(f, "%d,%.17g", i, res.u0[static_cast<std::size_t>(i)]);
      for (int d = 0; d < cfg.plant.n; ++d)
        std::fprintf(f, ",%.17g", res.x0[static_cast<std::size_t>(i) * cfg.plant.n + d]);
      for (int d = 0; d < cfg.plant.n; ++d)
        std::fprintf(f, ",%.17g", res.abs_err[static_cast<std::size_t>(i) * cfg.plant.n + d]);
      std::fprintf(f, "\n");
    }
    std::fclose(f);
    std::cout << "mean abs err per state:";
    for (double v : res.mean_per_state) std::cout << " " << v;
    std::cout << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

namespace {

RolloutSpec rollout_spec_from(const RunConfig& cfg, const EvalFlags& fl) {
  RolloutSpec spec;
  spec.n_traj = fl.trajectories.value_or(cfg.eval.n_traj);
  spec.duration = cfg.eval.duration;
  spec.T = cfg.T;
  spec.noise = cfg.noise;
  spec.signal = cfg.signal;
  spec.seed = cfg.seed;
  spec.mode = fl.prediction_mode == "measured" ? PredictionMode::MeasuredStates : PredictionMode::OpenLoop;
  spec.with_exact_analytic = fl.with_exact;
  spec.with_perturbed_analytic = fl.with_perturbed;
  spec.threads = cfg.threads;
  return spec;
}

}  // namespace

int cmd_eval_rollout(const RunConfig& cfg_in, const EvalFlags& fl, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const ModelParameters model = load_model_or_throw(fl.checkpoint, cfg.plant.n);
    const RolloutSpec spec = rollout_spec_from(cfg, fl);
    const std::vector<EvaluationReport> reports = rollout_eval(model, cfg.plant, spec);
    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir);
    write_report_csv(reports, cfg.output_dir + "/rollout.csv");
    for (const EvaluationReport& r : reports)
      std::cout << r.variant << " final mean abs err " << r.final_mean() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

int cmd_eval_noise(const RunConfig& cfg_in, const EvalFlags& fl, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const ModelParameters model = load_model_or_throw(fl.checkpoint, cfg.plant.n);
    const double variance = fl.variance.value_or(0.05);
    const bool measurement = fl.noise_mode != "process";
    const RolloutSpec base = rollout_spec_from(cfg, fl);
    const std::vector<EvaluationReport> reports = noise_eval(model, cfg.plant, variance, measurement, base);
    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir);
    write_report_csv(reports, cfg.output_dir + "/noise.csv");
    nlohmann::json meta = {{"variance", variance}, {"mode", measurement ? "measurement" : "process"}};
    std::ofstream meta_out(cfg.output_dir + "/noise_meta.json");
    meta_out << meta.dump(2) << "\n";
    for (const EvaluationReport& r : reports)
      std::cout << r.variant << " final mean abs err " << r.final_mean() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

int cmd_eval_linear_report(const EvalFlags& fl, const CommonFlags& flags) {
  try {
    const ModelParameters model = load_model_or_throw(fl.checkpoint, 0);
    const LinearReport rep = linear_report(model);
    nlohmann::json j;
    nlohmann::json eigs = nlohmann::json::array();
    for (const auto& e : rep.eigs) eigs.push_back({{"re", e.real()}, {"im", e.imag()}, {"abs", std::abs(e)}});
    j["eigenvalues"] = eigs;
    j["abs_det_gamma"] = rep.det_gamma_abs;
    j["abs_det_A"] = rep.det_a_abs;
    const std::string dir = flags.out.value_or("out");
    std::filesystem::create_directories(dir);
    std::ofstream out(dir + "/linear_report.json");
    out << j.dump(2) << "\n";
    std::cout << j.dump() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

int cmd_eval_closed_loop(const RunConfig& cfg_in, const EvalFlags& fl, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const ModelParameters model = load_model_or_throw(fl.checkpoint, cfg.plant.n);
    ClosedLoopSpec spec;
    spec.x0 = fl.x0.empty() ? std::vector<double>(static_cast<std::size_t>(cfg.plant.n), 2.0) : fl.x0;
    spec.x_eq = fl.x_eq.empty() ? std::vector<double>(static_cast<std::size_t>(cfg.plant.n), 0.0) : fl.x_eq;
    for (double p : fl.poles_re) spec.poles.emplace_back(p, 0.0);
    spec.horizon = fl.horizon;
    spec.T = model.shape.T;
    const ClosedLoopResult res = closed_loop_sim(model, cfg.plant, spec);
    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir);
    write_trajectory_csv(res.trajectory, cfg.output_dir + "/closed_loop.csv");
    write_closed_loop_metrics(res, spec, cfg.output_dir + "/closed_loop_metrics.json");
    std::cout << "settling_time " << res.settling_time << " final_norm " << res.final_norm << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

int cmd_eval_analytic(const RunConfig& cfg_in, const EvalFlags& fl, const CommonFlags& flags) {
  const RunConfig cfg = apply_flags(cfg_in, flags);
  try {
    const PlantSpec nominal = fl.perturbed_analytic ? perturbed_nominal(cfg.plant) : cfg.plant;
    AnalyticModel model(nominal);

    RolloutSpec spec = rollout_spec_from(cfg, fl);
    // Fresh trajectories exactly as rollout_eval draws them.
    EvaluationReport rep;
    rep.variant = fl.perturbed_analytic ? "analytic-perturbed" : "analytic-exact";
    rep.n = cfg.plant.n;
    rep.T = spec.T;
    const int steps = static_cast<int>(std::llround(spec.duration / spec.T));
    rep.steps = steps;
    rep.trajectories = spec.n_traj;
    rep.per_traj.assign(static_cast<std::size_t>(spec.n_traj) * static_cast<std::size_t>(steps) *
                            static_cast<std::size_t>(cfg.plant.n),
                        0.0);
    for (int i = 0; i < spec.n_traj; ++i) {
      Rng rng = substream(spec.seed, static_cast<std::uint64_t>(i));
      const std::vector<double> x0 = sample_initial_condition(cfg.plant.id, rng);
      const std::uint64_t sig_seed = rng();
      InputSignal sig(spec.signal, sig_seed, spec.T);
      NoiseSpec noise = spec.noise;
      noise.seed = spec.noise.seed ^ static_cast<std::uint64_t>(i);
      const SampledTrajectory tr =
          simulate_sampled(cfg.plant, x0, [&](double t) { return sig(t); }, spec.duration, spec.T, noise);
      const std::span<const double> u(tr.u.data(), static_cast<std::size_t>(steps));
      const auto pred = model.rollout(u, tr.state(0), spec.T);
      for (int k = 0; k < steps; ++k)
        for (int d = 0; d < cfg.plant.n; ++d)
          rep.per_traj[(static_cast<std::size_t>(i) * steps + static_cast<std::size_t>(k)) * cfg.plant.n +
                       static_cast<std::size_t>(d)] =
              std::fabs(pred[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] -
                        tr.true_state(k + 1)[static_cast<std::size_t>(d)]);
    }
    recompute_aggregates(rep);
    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir);
    const std::vector<EvaluationReport> reports{rep};
    write_report_csv(reports, cfg.output_dir + "/analytic.csv");
    std::cout << rep.variant << " final mean abs err " << rep.final_mean() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEvaluation;
  }
}

}  // namespace flforge::cli
