#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kmpc/critic.hpp"
#include "kmpc/shac.hpp"

namespace kmpc {

struct PpoConfig {
  double clip = 0.2;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  int epochs = 10;
  int minibatch = 256;
  int rollout_steps = 2048;  // per update, summed over workers
  double actor_lr = 1e-5;
  double critic_lr = 1e-3;
  double kl_stop = 0.15;  // early epoch stop on approximate KL
  int critic_iters = 40;  // value regression steps per update
  std::vector<int> critic_hidden{64, 64};
  long total_env_steps = 200000;
  int n_envs = 8;
  int n_threads = 0;
  std::uint64_t seed = 0;
  std::vector<double> action_std;   // fixed per-channel exploration std
  std::vector<double> action_lo;    // applied-action clip box (empty = none)
  std::vector<double> action_hi;
};

// diagonal-Gaussian log density
double gaussian_logprob(const std::vector<double>& u, const std::vector<double>& mean,
                        const std::vector<double>& stddev);
// same, differentiable w.r.t. the mean node
int gaussian_logprob_node(Tape& tape, const std::vector<double>& u, int mean_node,
                          const std::vector<double>& stddev);

// delta_t = r_t + gamma (1-done_t) V_{t+1} - V_t, advantages are the
// discounted lambda-sum of deltas; returns = advantages + values.
void gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                    const std::vector<double>& next_values, const std::vector<char>& dones, double gamma,
                    double lam, std::vector<double>& advantages, std::vector<double>& returns);

struct PpoSample {
  std::vector<double> state;     // raw env state fed to the policy
  std::vector<double> forecast;  // policy side info at collection time
  std::vector<double> obs;       // critic observation
  std::vector<double> next_obs;
  std::vector<double> action;  // sampled (unclipped) action
  double logp_old = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  RewardBreakdown breakdown;
  double advantage = 0.0;
  double ret = 0.0;
};

struct PpoUpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  int epochs_run = 0;
  double mean_reward = 0.0;
  double mean_r_cost = 0.0;
  double mean_r_con = 0.0;
  long steps = 0;
};

// Clipped-surrogate trainer. The environment is treated as a black box: only
// the policy's action path is differentiated (through the OCP layer for the
// eNMPC policy); rewards enter as fixed advantage weights.
class PpoTrainer {
 public:
  PpoTrainer(std::vector<std::unique_ptr<ShacEnv>> envs, std::vector<std::unique_ptr<ShacPolicy>> policies,
             PpoConfig cfg);

  std::vector<PpoSample> collect_rollout();
  // one full update on a collected batch (policy epochs + value regression)
  PpoUpdateStats update();
  ShacResult train(const std::function<void(long, const ParamRegistry&, const PpoUpdateStats&)>& on_update = {});

  const ParamRegistry& master_params() const { return master_params_; }
  Critic& critic() { return critic_; }
  void set_freeze_actor(bool v) { freeze_actor_ = v; }
  void set_freeze_critic(bool v) { freeze_critic_ = v; }
  void set_record_grads(bool v) { record_grads_ = v; }
  void set_rollout_steps(int n) { cfg_.rollout_steps = n; }
  // averaged first-epoch full-batch surrogate gradient of the last update
  const GradMap& last_actor_grads() const { return last_grads_; }

 private:
  GradMap surrogate_grads(const std::vector<PpoSample>& batch, const std::vector<int>& idx, double& loss_out,
                          double& kl_out);

  std::vector<std::unique_ptr<ShacEnv>> envs_;
  std::vector<std::unique_ptr<ShacPolicy>> policies_;
  PpoConfig cfg_;
  ParamRegistry master_params_;
  Critic critic_;
  AdamState actor_opt_;
  AdamState critic_opt_;
  std::vector<Rng> env_rngs_;
  Rng trainer_rng_;
  bool freeze_actor_ = false;
  bool freeze_critic_ = false;
  bool record_grads_ = true;
  GradMap last_grads_;
  std::vector<double> reward_tail_;
  long steps_done_ = 0;
  long updates_done_ = 0;
};

}  // namespace kmpc
