#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flforge/cli.hpp"

using namespace flforge;

namespace {

std::vector<double> parse_csv_doubles(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stod(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flforge: learn a feedback linearization from sampled trajectories"};
  app.require_subcommand(1);

  std::string config_path;
  cli::CommonFlags common;
  std::string out_flag;
  int threads_flag = 0;
  std::uint64_t seed_flag = 0;
  bool have_out = false, have_threads = false, have_seed = false;

  auto add_common = [&](CLI::App* cmd, bool need_config) {
    auto* copt = cmd->add_option("--config", config_path, "run configuration JSON");
    if (need_config) copt->required();
    cmd->add_option("--out", out_flag, "output directory override")->each([&](const std::string&) { have_out = true; });
    cmd->add_option("--threads", threads_flag, "worker threads (1 = serial reference)")
        ->each([&](const std::string&) { have_threads = true; });
    cmd->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) { have_seed = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "simulate excitation trajectories into a dataset directory");
  add_common(gen, true);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  add_common(train_cmd, true);
  std::string data_dir;
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "resume from a checkpoint");
  bool two_stage = false;
  train_cmd->add_flag("--two-stage", two_stage, "zero-input stage then input-scaling stage");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluation suites");
  eval_cmd->require_subcommand(1);
  cli::EvalFlags efl;
  std::string poles_str, xeq_str, x0_str;

  auto add_eval_common = [&](CLI::App* cmd, bool need_checkpoint, bool need_config) {
    add_common(cmd, need_config);
    auto* ck = cmd->add_option("--checkpoint", efl.checkpoint, "model checkpoint JSON");
    if (need_checkpoint) ck->required();
  };

  CLI::App* ss = eval_cmd->add_subcommand("single-step", "one-step prediction errors over sampled (x, u)");
  add_eval_common(ss, true, true);
  ss->add_option("--samples", [&](const std::vector<std::string>& v) { efl.trajectories = std::stoi(v[0]); return true; },
                 "sample count override");

  CLI::App* ro = eval_cmd->add_subcommand("rollout", "multi-step drift over fresh trajectories");
  add_eval_common(ro, true, true);
  int traj_flag = 0;
  ro->add_option("--trajectories", traj_flag, "trajectory count");
  ro->add_option("--mode", efl.prediction_mode, "open|measured");
  ro->add_flag("--with-exact", efl.with_exact, "include the exact-parameter analytic baseline");
  ro->add_flag("--with-perturbed", efl.with_perturbed, "include the perturbed-parameter analytic baseline");

  CLI::App* nz = eval_cmd->add_subcommand("noise", "rollout under measurement or process noise");
  add_eval_common(nz, true, true);
  double variance_flag = 0.05;
  bool have_variance = false;
  nz->add_option("--variance", variance_flag, "noise variance")->each([&](const std::string&) { have_variance = true; });
  nz->add_option("--mode", efl.noise_mode, "measurement|process");
  nz->add_option("--trajectories", traj_flag, "trajectory count");

  CLI::App* lr = eval_cmd->add_subcommand("linear-report", "eigenvalues and determinants of the learned pair");
  add_eval_common(lr, true, false);

  CLI::App* cl = eval_cmd->add_subcommand("closed-loop", "pole-placed state feedback on the true plant");
  add_eval_common(cl, true, true);
  cl->add_option("--poles", poles_str, "desired poles, e.g. 0.95,0.9")->required();
  cl->add_option("--xeq", xeq_str, "equilibrium state, e.g. 0,0");
  cl->add_option("--x0", x0_str, "initial state");
  cl->add_option("--horizon", efl.horizon, "simulation horizon [s]");

  CLI::App* an = eval_cmd->add_subcommand("analytic", "analytic baseline rollout report");
  add_eval_common(an, false, true);
  an->add_flag("--perturbed", efl.perturbed_analytic, "use the documented parameter perturbations");
  an->add_option("--trajectories", traj_flag, "trajectory count");

  CLI11_PARSE(app, argc, argv);

  if (have_out) common.out = out_flag;
  if (have_threads) common.threads = threads_flag;
  if (have_seed) common.seed = seed_flag;
  if (traj_flag > 0) efl.trajectories = traj_flag;
  if (have_variance) efl.variance = variance_flag;
  if (!poles_str.empty())
    for (double p : parse_csv_doubles(poles_str)) efl.poles_re.push_back(p);
  if (!xeq_str.empty()) efl.x_eq = parse_csv_doubles(xeq_str);
  if (!x0_str.empty()) efl.x0 = parse_csv_doubles(x0_str);

  try {
    cli::RunConfig cfg;
    const bool needs_config = !config_path.empty();
    if (needs_config) cfg = cli::load_config(config_path);

    if (gen->parsed()) return cli::cmd_gen_data(cfg, common);
    if (train_cmd->parsed()) {
      std::optional<std::string> resume;
      if (!resume_path.empty()) resume = resume_path;
      return cli::cmd_train(cfg, data_dir, common, resume, two_stage);
    }
    if (ss->parsed()) return cli::cmd_eval_single_step(cfg, efl, common);
    if (ro->parsed()) return cli::cmd_eval_rollout(cfg, efl, common);
    if (nz->parsed()) return cli::cmd_eval_noise(cfg, efl, common);
    if (lr->parsed()) return cli::cmd_eval_linear_report(efl, common);
    if (cl->parsed()) return cli::cmd_eval_closed_loop(cfg, efl, common);
    if (an->parsed()) return cli::cmd_eval_analytic(cfg, efl, common);
  } catch (const cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return cli::kExitConfig;
}
