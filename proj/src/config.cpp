#include "kmpc/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace kmpc {

using nlohmann::json;

namespace {

// Tracks which keys were consumed and rejects leftovers with their path.
class Section {
 public:
  Section(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) throw std::runtime_error("config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& target) {
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        target = it->get<T>();
      } catch (const json::exception&) {
        throw std::runtime_error("config: bad value type at " + path_ + "." + key);
      }
    }
    seen_.insert(key);
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  json sub(const char* key) {
    seen_.insert(key);
    return j_.value(key, json::object());
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw std::runtime_error("config: unknown key " + path_ + "." + it.key());
  }

 private:
  json j_;  // owned: sections are often built from temporaries
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "$");
  root.get("seed", cfg.seed);
  root.get("run_dir", cfg.run_dir);

  {
    Section s(root.sub("plant"), "$.plant");
    s.get("V", cfg.plant.V);
    s.get("N", cfg.plant.N);
    s.get("T_f", cfg.plant.T_f);
    s.get("T_c", cfg.plant.T_c);
    s.get("c_ss", cfg.plant.c_ss);
    s.get("T_ss", cfg.plant.T_ss);
    s.get("rho_ss", cfg.plant.rho_ss);
    s.get("F_ss", cfg.plant.F_ss);
    s.finish();
    cfg.plant.derive_rate_constants();
  }
  {
    Section s(root.sub("bounds"), "$.bounds");
    s.get("c_lo_frac", cfg.bounds.c_lo_frac);
    s.get("c_hi_frac", cfg.bounds.c_hi_frac);
    s.get("T_lo_frac", cfg.bounds.T_lo_frac);
    s.get("T_hi_frac", cfg.bounds.T_hi_frac);
    s.get("storage_hours", cfg.bounds.storage_hours);
    s.get("rho_lo", cfg.bounds.rho_lo);
    s.get("rho_hi", cfg.bounds.rho_hi);
    s.get("F_lo", cfg.bounds.F_lo);
    s.get("F_hi", cfg.bounds.F_hi);
    s.finish();
  }
  {
    Section s(root.sub("env"), "$.env");
    s.get("dt_ctrl", cfg.env.dt_ctrl);
    s.get("substeps", cfg.env.substeps);
    s.get("alpha", cfg.env.alpha);
    s.get("con_weight", cfg.env.con_weight);
    s.get("episode_steps", cfg.env.episode_steps);
    s.get("forecast_margin", cfg.env.forecast_margin);
    s.finish();
  }
  {
    Section s(root.sub("prices"), "$.prices");
    s.get("csv", cfg.prices.csv);
    s.get("synth_hours", cfg.prices.synth_hours);
    Section sy(s.sub("synth"), "$.prices.synth");
    sy.get("base", cfg.prices.synth.base);
    sy.get("daily_amplitude", cfg.prices.synth.daily_amplitude);
    sy.get("weekly_amplitude", cfg.prices.synth.weekly_amplitude);
    sy.get("noise_std", cfg.prices.synth.noise_std);
    sy.get("start_timestamp", cfg.prices.synth.start_timestamp);
    sy.finish();
    s.finish();
  }
  {
    Section s(root.sub("koopman"), "$.koopman");
    Section d(s.sub("dataset"), "$.koopman.dataset");
    d.get("n_traj", cfg.koopman.dataset.n_traj);
    d.get("steps", cfg.koopman.dataset.steps);
    d.get("dt_hours", cfg.koopman.dataset.dt_hours);
    d.get("rk4_substeps", cfg.koopman.dataset.rk4_substeps);
    d.get("n_train", cfg.koopman.dataset.n_train);
    d.get("hold_min_steps", cfg.koopman.dataset.hold_min_steps);
    d.get("hold_max_steps", cfg.koopman.dataset.hold_max_steps);
    d.finish();
    Section si(s.sub("si"), "$.koopman.si");
    si.get("lr", cfg.koopman.si.lr);
    si.get("batch", cfg.koopman.si.batch);
    si.get("epochs", cfg.koopman.si.epochs);
    si.get("patience", cfg.koopman.si.patience);
    si.get("window", cfg.koopman.si.window);
    si.get("batches_per_epoch", cfg.koopman.si.batches_per_epoch);
    si.get("val_windows_cap", cfg.koopman.si.val_windows_cap);
    si.get("grad_clip", cfg.koopman.si.grad_clip);
    si.get("curriculum", cfg.koopman.si.curriculum);
    si.get("curriculum_ramp", cfg.koopman.si.curriculum_ramp);
    si.get("lr_decay", cfg.koopman.si.lr_decay);
    si.get("lr_decay_every", cfg.koopman.si.lr_decay_every);
    si.get("recon_weight", cfg.koopman.si.recon_weight);
    si.get("consistency_weight", cfg.koopman.si.consistency_weight);
    si.get("channel_weights", cfg.koopman.si.channel_weights);
    si.finish();
    s.get("si_seeds", cfg.koopman.si_seeds);
    s.finish();
  }
  {
    Section s(root.sub("ocp"), "$.ocp");
    s.get("horizon", cfg.ocp.horizon);
    s.get("substeps", cfg.ocp.substeps);
    s.get("dt_ctrl", cfg.ocp.dt_ctrl);
    s.get("slack_penalty", cfg.ocp.slack_penalty);
    s.get("control_reg", cfg.ocp.control_reg);
    s.get("alpha", cfg.ocp.alpha);
    Section sol(s.sub("solver"), "$.ocp.solver");
    sol.get("tol", cfg.ocp.solver.tol);
    sol.get("max_iters", cfg.ocp.solver.max_iters);
    sol.get("reg", cfg.ocp.solver.reg);
    sol.get("polish", cfg.ocp.solver.polish);
    sol.finish();
    Section df(s.sub("diff"), "$.ocp.diff");
    df.get("reg", cfg.ocp.diff.reg);
    df.get("active_tol", cfg.ocp.diff.active_tol);
    df.finish();
    s.finish();
  }
  root.get("explore_sigma_frac", cfg.explore_sigma_frac);
  {
    Section s(root.sub("shac"), "$.shac");
    s.get("horizon", cfg.shac.horizon);
    s.get("n_envs", cfg.shac.n_envs);
    s.get("gamma", cfg.shac.gamma);
    s.get("lam", cfg.shac.lam);
    s.get("actor_lr", cfg.shac.actor_lr);
    s.get("critic_lr", cfg.shac.critic_lr);
    s.get("tau", cfg.shac.tau);
    s.get("total_env_steps", cfg.shac.total_env_steps);
    s.get("critic_iters", cfg.shac.critic_iters);
    s.get("critic_hidden", cfg.shac.critic_hidden);
    s.get("n_threads", cfg.shac.n_threads);
    s.finish();
    if (cfg.shac.horizon < 1 || cfg.shac.horizon > 64) throw std::runtime_error("config: $.shac.horizon out of [1, 64]");
    if (cfg.shac.gamma <= 0.0 || cfg.shac.gamma > 1.0) throw std::runtime_error("config: $.shac.gamma out of (0, 1]");
    if (cfg.shac.lam < 0.0 || cfg.shac.lam > 1.0) throw std::runtime_error("config: $.shac.lam out of [0, 1]");
  }
  {
    Section s(root.sub("ppo"), "$.ppo");
    s.get("clip", cfg.ppo.clip);
    s.get("gae_lambda", cfg.ppo.gae_lambda);
    s.get("gamma", cfg.ppo.gamma);
    s.get("epochs", cfg.ppo.epochs);
    s.get("minibatch", cfg.ppo.minibatch);
    s.get("rollout_steps", cfg.ppo.rollout_steps);
    s.get("actor_lr", cfg.ppo.actor_lr);
    s.get("critic_lr", cfg.ppo.critic_lr);
    s.get("kl_stop", cfg.ppo.kl_stop);
    s.get("critic_iters", cfg.ppo.critic_iters);
    s.get("critic_hidden", cfg.ppo.critic_hidden);
    s.get("total_env_steps", cfg.ppo.total_env_steps);
    s.get("n_envs", cfg.ppo.n_envs);
    s.get("n_threads", cfg.ppo.n_threads);
    s.finish();
    if (cfg.ppo.clip <= 0.0 || cfg.ppo.clip >= 1.0) throw std::runtime_error("config: $.ppo.clip out of (0, 1)");
    if (cfg.ppo.gamma <= 0.0 || cfg.ppo.gamma > 1.0) throw std::runtime_error("config: $.ppo.gamma out of (0, 1]");
    if (cfg.ppo.gae_lambda < 0.0 || cfg.ppo.gae_lambda > 1.0)
      throw std::runtime_error("config: $.ppo.gae_lambda out of [0, 1]");
  }
  {
    Section s(root.sub("eval"), "$.eval");
    s.get("hours", cfg.eval.hours);
    s.finish();
  }
  {
    Section s(root.sub("grad_study"), "$.grad_study");
    s.get("n_grads", cfg.grad_study.n_grads);
    s.get("critic_fit_updates", cfg.grad_study.critic_fit_updates);
    s.get("ppo_rollout", cfg.grad_study.ppo_rollout);
    s.get("ppo_fit_rollout", cfg.grad_study.ppo_fit_rollout);
    s.get("shac_horizon", cfg.grad_study.shac_horizon);
    s.get("shac_envs", cfg.grad_study.shac_envs);
    s.get("freeze_critic_during_recording", cfg.grad_study.freeze_critic_during_recording);
    s.get("fixed_resets", cfg.grad_study.fixed_resets);
    s.get("sigma_frac", cfg.grad_study.sigma_frac);
    s.finish();
  }
  root.finish();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config: parse error in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["run_dir"] = cfg.run_dir;
  j["plant"] = {{"V", cfg.plant.V},       {"N", cfg.plant.N},       {"T_f", cfg.plant.T_f},
                {"T_c", cfg.plant.T_c},   {"c_ss", cfg.plant.c_ss}, {"T_ss", cfg.plant.T_ss},
                {"rho_ss", cfg.plant.rho_ss}, {"F_ss", cfg.plant.F_ss}};
  j["bounds"] = {{"c_lo_frac", cfg.bounds.c_lo_frac},
                 {"c_hi_frac", cfg.bounds.c_hi_frac},
                 {"T_lo_frac", cfg.bounds.T_lo_frac},
                 {"T_hi_frac", cfg.bounds.T_hi_frac},
                 {"storage_hours", cfg.bounds.storage_hours},
                 {"rho_lo", cfg.bounds.rho_lo},
                 {"rho_hi", cfg.bounds.rho_hi},
                 {"F_lo", cfg.bounds.F_lo},
                 {"F_hi", cfg.bounds.F_hi}};
  j["env"] = {{"dt_ctrl", cfg.env.dt_ctrl},
              {"substeps", cfg.env.substeps},
              {"alpha", cfg.env.alpha},
              {"con_weight", cfg.env.con_weight},
              {"episode_steps", cfg.env.episode_steps},
              {"forecast_margin", cfg.env.forecast_margin}};
  j["prices"] = {{"csv", cfg.prices.csv},
                 {"synth_hours", cfg.prices.synth_hours},
                 {"synth",
                  {{"base", cfg.prices.synth.base},
                   {"daily_amplitude", cfg.prices.synth.daily_amplitude},
                   {"weekly_amplitude", cfg.prices.synth.weekly_amplitude},
                   {"noise_std", cfg.prices.synth.noise_std},
                   {"start_timestamp", cfg.prices.synth.start_timestamp}}}};
  j["koopman"] = {{"dataset",
                   {{"n_traj", cfg.koopman.dataset.n_traj},
                    {"steps", cfg.koopman.dataset.steps},
                    {"dt_hours", cfg.koopman.dataset.dt_hours},
                    {"rk4_substeps", cfg.koopman.dataset.rk4_substeps},
                    {"n_train", cfg.koopman.dataset.n_train},
                    {"hold_min_steps", cfg.koopman.dataset.hold_min_steps},
                    {"hold_max_steps", cfg.koopman.dataset.hold_max_steps}}},
                  {"si",
                   {{"lr", cfg.koopman.si.lr},
                    {"batch", cfg.koopman.si.batch},
                    {"epochs", cfg.koopman.si.epochs},
                    {"patience", cfg.koopman.si.patience},
                    {"window", cfg.koopman.si.window},
                    {"batches_per_epoch", cfg.koopman.si.batches_per_epoch},
                    {"val_windows_cap", cfg.koopman.si.val_windows_cap},
                    {"grad_clip", cfg.koopman.si.grad_clip},
                    {"curriculum", cfg.koopman.si.curriculum},
                    {"curriculum_ramp", cfg.koopman.si.curriculum_ramp},
                    {"lr_decay", cfg.koopman.si.lr_decay},
                    {"lr_decay_every", cfg.koopman.si.lr_decay_every},
                    {"recon_weight", cfg.koopman.si.recon_weight},
                    {"consistency_weight", cfg.koopman.si.consistency_weight},
                    {"channel_weights", cfg.koopman.si.channel_weights}}},
                  {"si_seeds", cfg.koopman.si_seeds}};
  j["ocp"] = {{"horizon", cfg.ocp.horizon},
              {"substeps", cfg.ocp.substeps},
              {"dt_ctrl", cfg.ocp.dt_ctrl},
              {"slack_penalty", cfg.ocp.slack_penalty},
              {"control_reg", cfg.ocp.control_reg},
              {"alpha", cfg.ocp.alpha},
              {"solver",
               {{"tol", cfg.ocp.solver.tol},
                {"max_iters", cfg.ocp.solver.max_iters},
                {"reg", cfg.ocp.solver.reg},
                {"polish", cfg.ocp.solver.polish}}},
              {"diff", {{"reg", cfg.ocp.diff.reg}, {"active_tol", cfg.ocp.diff.active_tol}}}};
  j["explore_sigma_frac"] = cfg.explore_sigma_frac;
  j["shac"] = {{"horizon", cfg.shac.horizon},
               {"n_envs", cfg.shac.n_envs},
               {"gamma", cfg.shac.gamma},
               {"lam", cfg.shac.lam},
               {"actor_lr", cfg.shac.actor_lr},
               {"critic_lr", cfg.shac.critic_lr},
               {"tau", cfg.shac.tau},
               {"total_env_steps", cfg.shac.total_env_steps},
               {"critic_iters", cfg.shac.critic_iters},
               {"critic_hidden", cfg.shac.critic_hidden},
               {"n_threads", cfg.shac.n_threads}};
  j["ppo"] = {{"clip", cfg.ppo.clip},
              {"gae_lambda", cfg.ppo.gae_lambda},
              {"gamma", cfg.ppo.gamma},
              {"epochs", cfg.ppo.epochs},
              {"minibatch", cfg.ppo.minibatch},
              {"rollout_steps", cfg.ppo.rollout_steps},
              {"actor_lr", cfg.ppo.actor_lr},
              {"critic_lr", cfg.ppo.critic_lr},
              {"kl_stop", cfg.ppo.kl_stop},
              {"critic_iters", cfg.ppo.critic_iters},
              {"critic_hidden", cfg.ppo.critic_hidden},
              {"total_env_steps", cfg.ppo.total_env_steps},
              {"n_envs", cfg.ppo.n_envs},
              {"n_threads", cfg.ppo.n_threads}};
  j["eval"] = {{"hours", cfg.eval.hours}};
  j["grad_study"] = {{"n_grads", cfg.grad_study.n_grads},
                     {"critic_fit_updates", cfg.grad_study.critic_fit_updates},
                     {"ppo_rollout", cfg.grad_study.ppo_rollout},
                     {"ppo_fit_rollout", cfg.grad_study.ppo_fit_rollout},
                     {"shac_horizon", cfg.grad_study.shac_horizon},
                     {"shac_envs", cfg.grad_study.shac_envs},
                     {"freeze_critic_during_recording", cfg.grad_study.freeze_critic_during_recording},
                     {"fixed_resets", cfg.grad_study.fixed_resets},
                     {"sigma_frac", cfg.grad_study.sigma_frac}};
  return j;
}

StateBounds make_bounds(const RunConfig& cfg) {
  StateBounds b;
  b.c_lo = cfg.bounds.c_lo_frac * cfg.plant.c_ss;
  b.c_hi = cfg.bounds.c_hi_frac * cfg.plant.c_ss;
  b.T_lo = cfg.bounds.T_lo_frac * cfg.plant.T_ss;
  b.T_hi = cfg.bounds.T_hi_frac * cfg.plant.T_ss;
  b.storage_lo = 0.0;
  b.storage_hi = cfg.bounds.storage_hours;
  b.rho_lo = cfg.bounds.rho_lo;
  b.rho_hi = cfg.bounds.rho_hi;
  b.F_lo = cfg.bounds.F_lo;
  b.F_hi = cfg.bounds.F_hi;
  return b;
}

std::shared_ptr<const PriceSeries> make_prices(const RunConfig& cfg) {
  auto series = std::make_shared<PriceSeries>();
  if (!cfg.prices.csv.empty()) {
    *series = load_prices(cfg.prices.csv);
  } else {
    Rng rng = Rng(cfg.seed).fork(0x5052494345);  // price substream
    *series = synth_prices(cfg.prices.synth_hours, rng, cfg.prices.synth);
  }
  return series;
}

CstrEnv make_env(const RunConfig& cfg, std::shared_ptr<const PriceSeries> prices) {
  return CstrEnv(cfg.plant, make_bounds(cfg), cfg.env, std::move(prices));
}

MpcPolicy make_policy(const RunConfig& cfg, const KoopmanModel& model) {
  MpcPolicy p(model, cfg.ocp, make_bounds(cfg), cfg.plant);
  p.set_sigma_frac(cfg.explore_sigma_frac);
  return p;
}

}  // namespace kmpc
