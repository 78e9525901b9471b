#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kmpc/critic.hpp"
#include "kmpc/env.hpp"
#include "kmpc/policy.hpp"

namespace kmpc {

// Differentiable environment surface used by the short-horizon trainer. A
// trainer owns one instance per parallel worker; the trainer performs resets
// so that bootstrap values can be taken at pre-reset states.
class ShacEnv {
 public:
  virtual ~ShacEnv() = default;
  virtual void reset(Rng& rng) = 0;
  virtual int state_node(Tape& tape) const = 0;  // current state, detached
  virtual EnvStepResult step(Tape& tape, int state, int control) = 0;
  virtual std::vector<double> forecast() const { return {}; }  // policy side info
  virtual int obs_dim() const = 0;
  virtual std::vector<double> critic_obs() const = 0;
  // critic observation for an on-tape state at the env's current time
  virtual int critic_obs_node(Tape& tape, int state) const = 0;
};

// Differentiable policy surface: emits the applied control as a tape node.
class ShacPolicy {
 public:
  virtual ~ShacPolicy() = default;
  virtual int act_node(Tape& tape, int state, const std::vector<double>& forecast, bool explore, Rng* rng) = 0;
  virtual const ParamRegistry& params() const = 0;
  virtual void set_params(const ParamRegistry& p) = 0;
};

// Koopman eNMPC policy and CSTR environment adapters.
class CstrShacEnv final : public ShacEnv {
 public:
  // fixed_resets pins every reset to the steady state at price offset 0
  // (used by deterministic gradient studies)
  CstrShacEnv(CstrEnv env, int price_lookahead, bool fixed_resets = false)
      : env_(std::move(env)), lookahead_(price_lookahead), fixed_resets_(fixed_resets) {}
  void reset(Rng& rng) override {
    if (fixed_resets_)
      env_.reset_at(ResetMode::SteadyState, 0, rng);
    else
      env_.reset(ResetMode::Randomized, rng);
  }
  int state_node(Tape& tape) const override { return env_.state_node(tape); }
  EnvStepResult step(Tape& tape, int state, int control) override { return env_.step(tape, state, control); }
  std::vector<double> forecast() const override { return env_.price_window(lookahead_); }
  int obs_dim() const override { return CstrEnv::critic_obs_dim(lookahead_); }
  std::vector<double> critic_obs() const override { return env_.critic_obs(lookahead_); }
  int critic_obs_node(Tape& tape, int state) const override;
  CstrEnv& env() { return env_; }

 private:
  CstrEnv env_;
  int lookahead_;
  bool fixed_resets_ = false;
};

class MpcShacPolicy final : public ShacPolicy {
 public:
  explicit MpcShacPolicy(MpcPolicy policy) : policy_(std::move(policy)) {}
  int act_node(Tape& tape, int state, const std::vector<double>& forecast, bool explore, Rng* rng) override {
    auto ctx = policy_.bind(tape);
    return policy_.act_node(tape, ctx, state, forecast, explore, rng);
  }
  const ParamRegistry& params() const override { return policy_.model().params(); }
  void set_params(const ParamRegistry& p) override { policy_.model().params() = p; }
  MpcPolicy& policy() { return policy_; }

 private:
  MpcPolicy policy_;
};

struct ShacConfig {
  int horizon = 16;  // short-horizon window length h
  int n_envs = 8;
  double gamma = 0.99;
  double lam = 0.95;  // TD-lambda mixing
  double actor_lr = 1e-5;
  double critic_lr = 1e-3;
  double tau = 0.2;  // target-critic mixing
  long total_env_steps = 200000;
  int critic_iters = 16;
  std::vector<int> critic_hidden{64, 64};
  std::uint64_t seed = 0;
  int n_threads = 0;  // 0 = hardware concurrency
};

// One transition recorded for critic regression.
struct ShacTransition {
  std::vector<double> obs;
  std::vector<double> next_obs;  // pre-reset successor observation
  double reward = 0.0;
  bool done = false;
  RewardBreakdown breakdown;
};

// Differentiable record of one short-horizon window on its own tape. The tape
// boundary detaches the window from its predecessors.
struct RolloutBuffer {
  std::unique_ptr<Tape> tape;
  std::vector<int> reward_nodes;
  std::vector<int> state_nodes;        // x_1 .. x_h (post-step, pre-reset)
  std::vector<int> control_nodes;      // applied controls
  std::vector<int> bootstrap_obs;      // critic obs node at steps needing a bootstrap, else -1
  std::vector<ShacTransition> transitions;
  bool ok = true;
  std::string error;
};

// Roll one window of h steps on a fresh tape; resets the env on episode ends
// (the recorded pre-reset state still feeds bootstrapping).
RolloutBuffer collect_short_rollout(ShacPolicy& policy, ShacEnv& env, int h, Rng& rng, bool explore = true);

// loss = -(1/h) [ sum_t gamma^t r_{t+1} + bootstrap terms ], bootstrapping the
// target critic at every episode end and at the window tail.
int actor_loss_node(const RolloutBuffer& buffer, const Critic& target_critic, double gamma);

struct CriticUpdateStats {
  double loss_before = 0.0;
  double loss_after = 0.0;
};

// TD-lambda targets from the target critic (off tape).
std::vector<double> td_lambda_targets(const std::vector<ShacTransition>& transitions, const Critic& target_critic,
                                      double gamma, double lam);

// Full-batch Adam regression of the critic onto TD-lambda targets, then a
// soft target update.
CriticUpdateStats critic_update(const std::vector<ShacTransition>& transitions, Critic& critic,
                                Critic& target_critic, AdamState& opt, const ShacConfig& cfg);

struct ShacUpdateStats {
  double actor_loss = 0.0;
  double mean_reward = 0.0;
  double mean_r_cost = 0.0;
  double mean_r_con = 0.0;
  double critic_loss = 0.0;
  int env_failures = 0;
  long steps = 0;
};

struct LearningCurveRow {
  long update = 0;
  long steps = 0;
  double mean_reward = 0.0;
  double run_avg_1024 = 0.0;
};

struct ShacResult {
  std::vector<LearningCurveRow> curve;
  long best_update = -1;
  double best_mean_reward = 0.0;
  ParamRegistry best_params;
  ParamRegistry final_params;
};

// Short-horizon actor-critic driver: windows are collected per env in
// parallel, gradients averaged in env order, parameters updated with Adam.
class ShacTrainer {
 public:
  ShacTrainer(std::vector<std::unique_ptr<ShacEnv>> envs, std::vector<std::unique_ptr<ShacPolicy>> policies,
              ShacConfig cfg);

  ShacUpdateStats update();
  // Runs until total_env_steps; optional per-update callback (checkpointing).
  ShacResult train(const std::function<void(long, const ParamRegistry&, const ShacUpdateStats&)>& on_update = {});

  const ParamRegistry& master_params() const { return master_params_; }
  Critic& critic() { return critic_; }
  Critic& target_critic() { return target_critic_; }
  // freeze flags: a frozen actor still records its averaged gradient each
  // update without applying it; a frozen critic skips regression entirely
  void set_freeze_actor(bool v) { freeze_actor_ = v; }
  void set_freeze_critic(bool v) { freeze_critic_ = v; }
  void set_record_grads(bool v) { record_grads_ = v; }
  const GradMap& last_actor_grads() const { return last_grads_; }

 private:
  std::vector<std::unique_ptr<ShacEnv>> envs_;
  std::vector<std::unique_ptr<ShacPolicy>> policies_;
  ShacConfig cfg_;
  ParamRegistry master_params_;
  Critic critic_;
  Critic target_critic_;
  AdamState actor_opt_;
  AdamState critic_opt_;
  std::vector<Rng> env_rngs_;
  Rng trainer_rng_;
  bool freeze_actor_ = false;
  bool freeze_critic_ = false;
  bool record_grads_ = true;
  GradMap last_grads_;
  std::vector<double> reward_tail_;  // trailing per-step rewards for run-avg-1024
  long steps_done_ = 0;
  long updates_done_ = 0;
};

}  // namespace kmpc
