#include "kmpc/grad_study.hpp"

#include <cmath>
#include <stdexcept>

namespace kmpc {

double cosine_similarity(const std::vector<double>& v, const std::vector<double>& w) {
  if (v.size() != w.size()) throw std::runtime_error("cosine: dimension mismatch");
  double dot = 0.0, nv = 0.0, nw = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    dot += v[i] * w[i];
    nv += v[i] * v[i];
    nw += w[i] * w[i];
  }
  if (nv == 0.0 || nw == 0.0) throw std::runtime_error("cosine: zero vector");
  return dot / (std::sqrt(nv) * std::sqrt(nw));
}

double mean_pairwise_cosine(const std::vector<std::vector<double>>& grads) {
  const int n = static_cast<int>(grads.size());
  if (n < 2) throw std::runtime_error("cosine: need at least two gradients");
  double acc = 0.0;
  long pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      acc += cosine_similarity(grads[i], grads[j]);
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

namespace {

bool is_zero(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

}  // namespace

GradStudyResult gradient_similarity_study(GradStudyAlgorithm algorithm, const RunConfig& cfg,
                                          const KoopmanModel& model) {
  GradStudyResult out;
  auto prices = make_prices(cfg);
  double sigma = cfg.grad_study.sigma_frac >= 0.0 ? cfg.grad_study.sigma_frac : cfg.explore_sigma_frac;

  auto make_adapter_env = [&]() {
    return std::make_unique<CstrShacEnv>(make_env(cfg, prices), cfg.ocp.horizon, cfg.grad_study.fixed_resets);
  };
  auto make_adapter_policy = [&]() {
    MpcPolicy p = make_policy(cfg, model);
    p.set_sigma_frac(sigma);
    return std::make_unique<MpcShacPolicy>(std::move(p));
  };

  if (algorithm == GradStudyAlgorithm::Shac) {
    ShacConfig scfg = cfg.shac;
    scfg.horizon = cfg.grad_study.shac_horizon;
    scfg.n_envs = cfg.grad_study.shac_envs;
    scfg.seed = cfg.seed;
    std::vector<std::unique_ptr<ShacEnv>> envs;
    std::vector<std::unique_ptr<ShacPolicy>> policies;
    for (int i = 0; i < scfg.n_envs; ++i) {
      envs.push_back(make_adapter_env());
      policies.push_back(make_adapter_policy());
    }
    ShacTrainer trainer(std::move(envs), std::move(policies), scfg);
    trainer.set_freeze_actor(true);
    trainer.set_record_grads(false);

    for (int i = 0; i < cfg.grad_study.critic_fit_updates; ++i) trainer.update();

    trainer.set_record_grads(true);
    trainer.set_freeze_critic(cfg.grad_study.freeze_critic_during_recording);
    for (int i = 0; i < cfg.grad_study.n_grads; ++i) {
      trainer.update();
      std::vector<double> g = flatten_grads(trainer.master_params(), trainer.last_actor_grads());
      if (is_zero(g)) {
        out.n_excluded_zero += 1;
        continue;
      }
      out.gradients.push_back(std::move(g));
    }
  } else {
    PpoConfig pcfg = cfg.ppo;
    pcfg.rollout_steps = cfg.grad_study.ppo_fit_rollout;
    pcfg.seed = cfg.seed;
    {
      // exploration std and clip box follow the policy contract
      MpcPolicy proto = make_policy(cfg, model);
      proto.set_sigma_frac(sigma);
      auto stddev = proto.explore_std();
      pcfg.action_std = {stddev[0], stddev[1]};
      StateBounds b = make_bounds(cfg);
      pcfg.action_lo = {b.rho_lo, b.F_lo};
      pcfg.action_hi = {b.rho_hi, b.F_hi};
    }
    std::vector<std::unique_ptr<ShacEnv>> envs;
    std::vector<std::unique_ptr<ShacPolicy>> policies;
    for (int i = 0; i < pcfg.n_envs; ++i) {
      envs.push_back(make_adapter_env());
      policies.push_back(make_adapter_policy());
    }
    PpoTrainer trainer(std::move(envs), std::move(policies), pcfg);
    trainer.set_freeze_actor(true);
    trainer.set_record_grads(false);

    for (int i = 0; i < cfg.grad_study.critic_fit_updates; ++i) trainer.update();

    trainer.set_record_grads(true);
    trainer.set_rollout_steps(cfg.grad_study.ppo_rollout);
    trainer.set_freeze_critic(cfg.grad_study.freeze_critic_during_recording);
    for (int i = 0; i < cfg.grad_study.n_grads; ++i) {
      trainer.update();
      std::vector<double> g = flatten_grads(trainer.master_params(), trainer.last_actor_grads());
      if (is_zero(g)) {
        out.n_excluded_zero += 1;
        continue;
      }
      out.gradients.push_back(std::move(g));
    }
  }

  out.n_recorded = static_cast<int>(out.gradients.size());
  if (out.n_recorded >= 2) out.mean_pairwise = mean_pairwise_cosine(out.gradients);
  return out;
}

}  // namespace kmpc
