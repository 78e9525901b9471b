// Command-line driver: dataset generation, system identification, policy
// training (short-horizon actor-critic and PPO), closed-loop evaluation, and
// the policy-gradient direction study. Every command is deterministic given
// (config, seed) and writes its artifacts into the run directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "kmpc/checkpoint.hpp"
#include "kmpc/config.hpp"
#include "kmpc/eval.hpp"
#include "kmpc/grad_study.hpp"
#include "kmpc/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kmpc;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string run_dir_override;
  long seed_override = -1;
};

RunConfig setup(const CommonOpts& opts, const std::string& command) {
  RunConfig cfg = load_config(opts.config_path);
  if (!opts.run_dir_override.empty()) cfg.run_dir = opts.run_dir_override;
  if (opts.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
  fs::create_directories(cfg.run_dir);
  fs::create_directories(fs::path(cfg.run_dir) / "checkpoints");
  std::ofstream snap(fs::path(cfg.run_dir) / "config_snapshot.json");
  snap << config_to_json(cfg).dump(2) << "\n";
  (void)command;
  return cfg;
}

void write_summary(const RunConfig& cfg, const std::string& command, json summary) {
  summary["command"] = command;
  summary["seed"] = cfg.seed;
  std::ofstream f(fs::path(cfg.run_dir) / (command + "_summary.json"));
  f << summary.dump(2) << "\n";
}

void write_curve_csv(const std::string& path, const std::vector<LearningCurveRow>& curve) {
  std::ofstream f(path, std::ios::trunc);
  f << "update,steps,mean_reward,run_avg_1024\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%ld,%ld,%.17g,%.17g\n", r.update, r.steps, r.mean_reward, r.run_avg_1024);
    f << buf;
  }
}

std::string default_dataset_path(const RunConfig& cfg) { return (fs::path(cfg.run_dir) / "dataset.ntc").string(); }

TrajectoryDataset load_or_generate_dataset(const RunConfig& cfg, const std::string& path) {
  if (fs::exists(path)) return TrajectoryDataset::load(path);
  std::fprintf(stderr, "dataset '%s' not found, generating\n", path.c_str());
  Rng rng = Rng(cfg.seed).fork(0xDA7A);
  TrajectoryDataset data = generate_dataset(cfg.plant, make_bounds(cfg), cfg.koopman.dataset, rng);
  data.save(path, cfg.seed);
  return data;
}

std::shared_ptr<const PriceSeries> make_eval_prices(const RunConfig& cfg) {
  auto series = std::make_shared<PriceSeries>();
  if (!cfg.prices.csv.empty()) {
    *series = load_prices(cfg.prices.csv);
  } else {
    Rng rng = Rng(cfg.seed).fork(0x5052494345 ^ 0xEEEE);  // held-out test stream
    *series = synth_prices(cfg.eval.hours + cfg.ocp.horizon + 1, rng, cfg.prices.synth);
  }
  return series;
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out) {
  RunConfig cfg = setup(opts, "gen_data");
  std::string path = out.empty() ? default_dataset_path(cfg) : out;
  Rng rng = Rng(cfg.seed).fork(0xDA7A);
  TrajectoryDataset data = generate_dataset(cfg.plant, make_bounds(cfg), cfg.koopman.dataset, rng);
  data.save(path, cfg.seed);
  json s;
  s["dataset"] = path;
  s["n_traj"] = data.n_traj();
  s["n_train"] = data.n_train;
  s["steps"] = data.cfg.steps;
  s["stats"] = {{"state_mean", data.stats.state_mean},
                {"state_scale", data.stats.state_scale},
                {"input_mean", data.stats.input_mean},
                {"input_scale", data.stats.input_scale}};
  write_summary(cfg, "gen_data", s);
  std::printf("dataset: %d trajectories x %d steps -> %s\n", data.n_traj(), data.cfg.steps, path.c_str());
  return 0;
}

int cmd_train_si(const CommonOpts& opts, const std::string& dataset_path, const std::string& out) {
  RunConfig cfg = setup(opts, "train_si");
  TrajectoryDataset data =
      load_or_generate_dataset(cfg, dataset_path.empty() ? default_dataset_path(cfg) : dataset_path);

  SiConfig si = cfg.koopman.si;
  SiSweepResult sweep = si_seed_sweep(data, si, cfg.koopman.si_seeds, cfg.seed);

  std::string model_path = out.empty() ? (fs::path(cfg.run_dir) / "model_si.ntc").string() : out;
  sweep.best_model.save(model_path);

  // per-seed loss curves
  {
    std::ofstream f(fs::path(cfg.run_dir) / "si_curves.csv", std::ios::trunc);
    f << "seed_index,epoch,train_loss,val_loss\n";
    char buf[256];
    for (std::size_t i = 0; i < sweep.runs.size(); ++i)
      for (std::size_t e = 0; e < sweep.runs[i].train_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g\n", i, e, sweep.runs[i].train_loss[e],
                      sweep.runs[i].val_loss[e]);
        f << buf;
      }
  }

  auto rmse = validation_rmse(sweep.best_model, data, si.window);
  auto base = mean_predictor_rmse(data, si.window);
  json s;
  s["model"] = model_path;
  s["best_seed_index"] = sweep.best_seed_index;
  s["val_losses"] = sweep.val_losses;
  s["val_rmse_12step"] = {rmse[0], rmse[1]};
  s["mean_predictor_rmse_12step"] = {base[0], base[1]};
  write_summary(cfg, "train_si", s);
  std::printf("si: best seed %d, val loss %.6g, 12-step rmse (c, T) = (%.4g, %.4g) -> %s\n", sweep.best_seed_index,
              sweep.val_losses[sweep.best_seed_index], rmse[0], rmse[1], model_path.c_str());
  return 0;
}

int cmd_train_shac(const CommonOpts& opts, const std::string& model_path_in, const std::string& out) {
  RunConfig cfg = setup(opts, "train_shac");
  std::string mp = model_path_in.empty() ? (fs::path(cfg.run_dir) / "model_si.ntc").string() : model_path_in;
  KoopmanModel model = KoopmanModel::load(mp);

  auto prices = make_prices(cfg);
  ShacConfig scfg = cfg.shac;
  scfg.seed = cfg.seed;
  std::vector<std::unique_ptr<ShacEnv>> envs;
  std::vector<std::unique_ptr<ShacPolicy>> policies;
  for (int i = 0; i < scfg.n_envs; ++i) {
    envs.push_back(std::make_unique<CstrShacEnv>(make_env(cfg, prices), cfg.ocp.horizon));
    policies.push_back(std::make_unique<MpcShacPolicy>(make_policy(cfg, model)));
  }
  ShacTrainer trainer(std::move(envs), std::move(policies), scfg);

  fs::path ckpt_dir = fs::path(cfg.run_dir) / "checkpoints";
  ShacResult res = trainer.train([&](long update, const ParamRegistry& params, const ShacUpdateStats& stats) {
    char name[64];
    std::snprintf(name, sizeof(name), "shac_update_%05ld.ntc", update);
    save_tensors((ckpt_dir / name).string(), params, json{{"update", update}, {"mean_reward", stats.mean_reward}});
  });

  // best-mean-reward checkpoint becomes the trained model
  KoopmanModel best = model;
  best.params() = res.best_params;
  std::string out_path = out.empty() ? (fs::path(cfg.run_dir) / "model_shac.ntc").string() : out;
  best.save(out_path);
  write_curve_csv((fs::path(cfg.run_dir) / "learning_curve_shac.csv").string(), res.curve);

  json s;
  s["model"] = out_path;
  s["updates"] = res.curve.size();
  s["env_steps"] = res.curve.empty() ? 0 : res.curve.back().steps;
  s["best_update"] = res.best_update;
  s["best_mean_reward"] = res.best_mean_reward;
  s["final_run_avg_1024"] = res.curve.empty() ? 0.0 : res.curve.back().run_avg_1024;
  write_summary(cfg, "train_shac", s);
  std::printf("shac: %zu updates, best update %ld (mean reward %.6g) -> %s\n", res.curve.size(), res.best_update,
              res.best_mean_reward, out_path.c_str());
  return 0;
}

int cmd_train_ppo(const CommonOpts& opts, const std::string& model_path_in, const std::string& out) {
  RunConfig cfg = setup(opts, "train_ppo");
  std::string mp = model_path_in.empty() ? (fs::path(cfg.run_dir) / "model_si.ntc").string() : model_path_in;
  KoopmanModel model = KoopmanModel::load(mp);

  auto prices = make_prices(cfg);
  PpoConfig pcfg = cfg.ppo;
  pcfg.seed = cfg.seed;
  {
    MpcPolicy proto = make_policy(cfg, model);
    auto stddev = proto.explore_std();
    pcfg.action_std = {stddev[0], stddev[1]};
    StateBounds b = make_bounds(cfg);
    pcfg.action_lo = {b.rho_lo, b.F_lo};
    pcfg.action_hi = {b.rho_hi, b.F_hi};
  }
  std::vector<std::unique_ptr<ShacEnv>> envs;
  std::vector<std::unique_ptr<ShacPolicy>> policies;
  for (int i = 0; i < pcfg.n_envs; ++i) {
    envs.push_back(std::make_unique<CstrShacEnv>(make_env(cfg, prices), cfg.ocp.horizon));
    policies.push_back(std::make_unique<MpcShacPolicy>(make_policy(cfg, model)));
  }
  PpoTrainer trainer(std::move(envs), std::move(policies), pcfg);

  fs::path ckpt_dir = fs::path(cfg.run_dir) / "checkpoints";
  ShacResult res = trainer.train([&](long update, const ParamRegistry& params, const PpoUpdateStats& stats) {
    char name[64];
    std::snprintf(name, sizeof(name), "ppo_update_%05ld.ntc", update);
    save_tensors((ckpt_dir / name).string(), params, json{{"update", update}, {"mean_reward", stats.mean_reward}});
  });

  KoopmanModel best = model;
  best.params() = res.best_params;
  std::string out_path = out.empty() ? (fs::path(cfg.run_dir) / "model_ppo.ntc").string() : out;
  best.save(out_path);
  write_curve_csv((fs::path(cfg.run_dir) / "learning_curve_ppo.csv").string(), res.curve);

  json s;
  s["model"] = out_path;
  s["updates"] = res.curve.size();
  s["env_steps"] = res.curve.empty() ? 0 : res.curve.back().steps;
  s["best_update"] = res.best_update;
  s["best_mean_reward"] = res.best_mean_reward;
  s["final_run_avg_1024"] = res.curve.empty() ? 0.0 : res.curve.back().run_avg_1024;
  write_summary(cfg, "train_ppo", s);
  std::printf("ppo: %zu updates, best update %ld (mean reward %.6g) -> %s\n", res.curve.size(), res.best_update,
              res.best_mean_reward, out_path.c_str());
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& model_path) {
  RunConfig cfg = setup(opts, "evaluate");
  KoopmanModel model = KoopmanModel::load(model_path);
  auto prices = make_eval_prices(cfg);
  long steps = std::min<long>(cfg.eval.hours, static_cast<long>(prices->size()));

  CstrEnv env = make_env(cfg, prices);
  MpcPolicy policy = make_policy(cfg, model);
  EvalReport rep = evaluate_policy(policy, env, steps);

  write_trajectory_csv(rep, (fs::path(cfg.run_dir) / "trajectory.csv").string());
  json s = eval_report_to_json(rep);
  s["model"] = model_path;
  write_summary(cfg, "evaluate", s);
  std::printf("evaluate: %ld steps, cost ratio %.4f, violations %.2f%% of steps (mean size %.3g)%s\n", rep.steps,
              rep.cost_ratio, rep.violation_step_pct, rep.mean_violation_size,
              rep.aborted ? " [aborted]" : "");
  return rep.aborted ? 2 : 0;
}

int cmd_grad_study(const CommonOpts& opts, const std::string& model_path, const std::string& algorithm) {
  RunConfig cfg = setup(opts, "grad_study");
  KoopmanModel model = KoopmanModel::load(model_path);
  GradStudyAlgorithm alg;
  if (algorithm == "shac")
    alg = GradStudyAlgorithm::Shac;
  else if (algorithm == "ppo")
    alg = GradStudyAlgorithm::Ppo;
  else
    throw std::runtime_error("grad-study: unknown algorithm '" + algorithm + "' (expected shac or ppo)");

  GradStudyResult res = gradient_similarity_study(alg, cfg, model);
  json s;
  s["algorithm"] = algorithm;
  s["model"] = model_path;
  s["mean_pairwise_cosine"] = res.mean_pairwise;
  s["n_recorded"] = res.n_recorded;
  s["n_excluded_zero"] = res.n_excluded_zero;
  write_summary(cfg, "grad_study", s);
  std::printf("grad-study (%s): mean pairwise cosine %.4f over %d gradients (%d zero excluded)\n",
              algorithm.c_str(), res.mean_pairwise, res.n_recorded, res.n_excluded_zero);
  return 0;
}

int cmd_report(const std::string& run_dir) {
  json report;
  for (const char* alg : {"shac", "ppo"}) {
    fs::path curve = fs::path(run_dir) / ("learning_curve_" + std::string(alg) + ".csv");
    if (!fs::exists(curve)) continue;
    std::ifstream f(curve);
    std::string line;
    std::getline(f, line);  // header
    double first_avg = 0.0, last_avg = 0.0, best_reward = -1e300;
    long rows = 0, steps = 0;
    while (std::getline(f, line)) {
      long update = 0, st = 0;
      double mr = 0.0, ra = 0.0;
      if (std::sscanf(line.c_str(), "%ld,%ld,%lf,%lf", &update, &st, &mr, &ra) != 4) continue;
      if (rows == 0) first_avg = ra;
      last_avg = ra;
      best_reward = std::max(best_reward, mr);
      steps = st;
      ++rows;
    }
    report[alg] = {{"updates", rows}, {"env_steps", steps}, {"first_run_avg", first_avg},
                   {"final_run_avg", last_avg}, {"best_mean_reward", best_reward}};
    std::printf("%s: %ld updates, %ld steps, run-avg %.5g -> %.5g, best mean reward %.5g\n", alg, rows, steps,
                first_avg, last_avg, best_reward);
  }
  for (const char* name : {"evaluate_summary.json", "train_si_summary.json", "grad_study_summary.json"}) {
    fs::path p = fs::path(run_dir) / name;
    if (!fs::exists(p)) continue;
    std::ifstream f(p);
    json j;
    f >> j;
    report[j.value("command", name)] = j;
  }
  std::ofstream out(fs::path(run_dir) / "report.json");
  out << report.dump(2) << "\n";
  std::printf("report -> %s\n", (fs::path(run_dir) / "report.json").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman eNMPC training toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string dataset_path, model_path, out_path, algorithm = "shac", run_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration");
    cmd->add_option("--run-dir", opts.run_dir_override, "output directory override");
    cmd->add_option("--seed", opts.seed_override, "seed override");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "simulate excitation trajectories for identification");
  add_common(gen);
  gen->add_option("--out", out_path, "dataset output path");

  CLI::App* tsi = app.add_subcommand("train-si", "system identification with a seed sweep");
  add_common(tsi);
  tsi->add_option("--dataset", dataset_path, "dataset container path");
  tsi->add_option("--out", out_path, "model output path");

  CLI::App* tsh = app.add_subcommand("train-shac", "short-horizon actor-critic fine-tuning");
  add_common(tsh);
  tsh->add_option("--model", model_path, "initial model checkpoint");
  tsh->add_option("--out", out_path, "trained model output path");

  CLI::App* tpp = app.add_subcommand("train-ppo", "PPO fine-tuning baseline");
  add_common(tpp);
  tpp->add_option("--model", model_path, "initial model checkpoint");
  tpp->add_option("--out", out_path, "trained model output path");

  CLI::App* ev = app.add_subcommand("evaluate", "deterministic closed-loop evaluation");
  add_common(ev);
  ev->add_option("--model", model_path, "model checkpoint")->required();

  CLI::App* gs = app.add_subcommand("grad-study", "policy-gradient direction similarity study");
  add_common(gs);
  gs->add_option("--model", model_path, "frozen policy checkpoint")->required();
  gs->add_option("--algorithm", algorithm, "shac or ppo");

  CLI::App* rp = app.add_subcommand("report", "aggregate run artifacts");
  rp->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(opts, out_path);
    if (tsi->parsed()) return cmd_train_si(opts, dataset_path, out_path);
    if (tsh->parsed()) return cmd_train_shac(opts, model_path, out_path);
    if (tpp->parsed()) return cmd_train_ppo(opts, model_path, out_path);
    if (ev->parsed()) return cmd_evaluate(opts, model_path);
    if (gs->parsed()) return cmd_grad_study(opts, model_path, algorithm);
    if (rp->parsed()) return cmd_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
