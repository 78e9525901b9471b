#include "kmpc/shac.hpp"

#include <cmath>
#include <limits>
#include <cstdio>
#include <stdexcept>

#include "kmpc/parallel.hpp"

namespace kmpc {

int CstrShacEnv::critic_obs_node(Tape& tape, int state) const {
  const StateBounds& b = env_.bounds();
  double mid_c = 0.5 * (b.c_lo + b.c_hi), mid_T = 0.5 * (b.T_lo + b.T_hi);
  double mid_s = 0.5 * (b.storage_lo + b.storage_hi);
  int mid = tape.constant(Tensor::vec({mid_c, mid_T, mid_s}));
  int inv_half = tape.constant(
      Tensor::vec({2.0 / b.c_span(), 2.0 / b.T_span(), 2.0 / b.storage_span()}));
  int state_norm = tape.mul(tape.sub(state, mid), inv_half);

  // price features are constants w.r.t. the differentiable state
  std::vector<double> full = env_.critic_obs(lookahead_);
  std::vector<double> price_part(full.begin() + 3, full.end());
  if (price_part.empty()) return state_norm;
  return tape.concat({state_norm, tape.constant(Tensor::vec(price_part))});
}

RolloutBuffer collect_short_rollout(ShacPolicy& policy, ShacEnv& env, int h, Rng& rng, bool explore) {
  RolloutBuffer buf;
  buf.tape = std::make_unique<Tape>();
  Tape& tape = *buf.tape;
  try {
    int state = env.state_node(tape);
    for (int t = 0; t < h; ++t) {
      ShacTransition tr;
      tr.obs = env.critic_obs();
      int u = policy.act_node(tape, state, env.forecast(), explore, &rng);
      EnvStepResult res = env.step(tape, state, u);
      tr.reward = res.breakdown.r_total;
      tr.done = res.done;
      tr.breakdown = res.breakdown;
      tr.next_obs = env.critic_obs();

      buf.reward_nodes.push_back(res.reward);
      buf.state_nodes.push_back(res.next_state);
      buf.control_nodes.push_back(u);
      // bootstrap at episode ends and at the window tail, before any reset
      bool need_bootstrap = res.done || t == h - 1;
      buf.bootstrap_obs.push_back(need_bootstrap ? env.critic_obs_node(tape, res.next_state) : -1);
      buf.transitions.push_back(std::move(tr));

      if (res.done) {
        env.reset(rng);
        state = env.state_node(tape);
      } else {
        state = res.next_state;
      }
    }
  } catch (const std::exception& e) {
    buf.ok = false;
    buf.error = e.what();
  }
  return buf;
}

int actor_loss_node(const RolloutBuffer& buffer, const Critic& target_critic, double gamma) {
  if (!buffer.ok) throw std::runtime_error("shac: actor loss on a failed rollout");
  Tape& tape = *buffer.tape;
  Critic::Leaves lv = target_critic.bind(tape);
  const int h = static_cast<int>(buffer.reward_nodes.size());

  int acc = -1;
  double disc = 1.0;
  for (int t = 0; t < h; ++t) {
    int term = tape.scale(buffer.reward_nodes[t], disc);
    acc = acc < 0 ? term : tape.add(acc, term);
    if (buffer.bootstrap_obs[t] >= 0) {
      int v = target_critic.value_node(tape, lv, buffer.bootstrap_obs[t]);
      acc = tape.add(acc, tape.scale(v, disc * gamma));
    }
    disc *= gamma;
  }
  return tape.scale(acc, -1.0 / h);
}

std::vector<double> td_lambda_targets(const std::vector<ShacTransition>& transitions, const Critic& target_critic,
                                      double gamma, double lam) {
  const int n = static_cast<int>(transitions.size());
  std::vector<double> targets(n);
  double next = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    double v_next = target_critic.value(transitions[t].next_obs);
    double tail;
    if (t == n - 1 || transitions[t].done)
      tail = v_next;
    else
      tail = (1.0 - lam) * v_next + lam * next;
    targets[t] = transitions[t].reward + gamma * tail;
    next = targets[t];
  }
  return targets;
}

CriticUpdateStats critic_update(const std::vector<ShacTransition>& transitions, Critic& critic,
                                Critic& target_critic, AdamState& opt, const ShacConfig& cfg) {
  std::vector<double> targets = td_lambda_targets(transitions, target_critic, cfg.gamma, cfg.lam);
  const int n = static_cast<int>(transitions.size());
  const int d = critic.input_dim();

  Tensor X = Tensor::zeros({n, d});
  Tensor Y = Tensor::zeros({n, 1});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X.at(i, j) = transitions[i].obs[j];
    Y.at(i, 0) = targets[i];
  }

  CriticUpdateStats stats;
  for (int it = 0; it < cfg.critic_iters; ++it) {
    Tape tape;
    Critic::Leaves lv = critic.bind(tape);
    int pred = critic.value_batch_node(tape, lv, tape.constant(X));
    int loss = tape.mean(tape.square(tape.sub(pred, tape.constant(Y))));
    double lval = tape.val(loss).item();
    if (it == 0) stats.loss_before = lval;
    stats.loss_after = lval;
    if (!std::isfinite(lval)) throw std::runtime_error("shac: non-finite critic loss");
    tape.backward(loss);
    adam_step(critic.params(), tape.leaf_grads(), opt);
  }
  target_critic.soft_update_from(critic, cfg.tau);
  return stats;
}

ShacTrainer::ShacTrainer(std::vector<std::unique_ptr<ShacEnv>> envs, std::vector<std::unique_ptr<ShacPolicy>> policies,
                         ShacConfig cfg)
    : envs_(std::move(envs)),
      policies_(std::move(policies)),
      cfg_(cfg),
      actor_opt_(cfg.actor_lr),
      critic_opt_(cfg.critic_lr),
      trainer_rng_(cfg.seed) {
  if (envs_.empty() || envs_.size() != policies_.size())
    throw std::runtime_error("shac: need one policy per environment");
  master_params_ = policies_[0]->params();

  critic_ = Critic(envs_[0]->obs_dim(), cfg_.critic_hidden, "critic");
  Rng crng = trainer_rng_.fork(1);
  critic_.init_params(crng);
  target_critic_ = Critic(envs_[0]->obs_dim(), cfg_.critic_hidden, "critic_tgt");
  target_critic_.init_params(crng);
  target_critic_.soft_update_from(critic_, 1.0);

  for (std::size_t i = 0; i < envs_.size(); ++i) {
    env_rngs_.push_back(trainer_rng_.fork(1000 + i));
    envs_[i]->reset(env_rngs_[i]);
    policies_[i]->set_params(master_params_);
  }
}

ShacUpdateStats ShacTrainer::update() {
  const int N = static_cast<int>(envs_.size());
  int h = cfg_.horizon;
  int threads = cfg_.n_threads > 0 ? cfg_.n_threads : hardware_threads();

  ShacUpdateStats stats;
  std::vector<GradMap> grads(N);
  std::vector<std::vector<ShacTransition>> transitions(N);
  std::vector<double> losses(N, 0.0);
  std::vector<char> ok(N, 0);

  for (int attempt = 0; attempt < 2; ++attempt) {
    bool nonfinite = false;
    parallel_for(N, threads, [&](int i) {
      RolloutBuffer buf = collect_short_rollout(*policies_[i], *envs_[i], h, env_rngs_[i], true);
      if (!buf.ok) {
        std::fprintf(stderr, "shac: env %d window aborted (%s); reseeding\n", i, buf.error.c_str());
        envs_[i]->reset(env_rngs_[i]);
        ok[i] = 0;
        return;
      }
      int loss = actor_loss_node(buf, target_critic_, cfg_.gamma);
      losses[i] = buf.tape->val(loss).item();
      if (!freeze_actor_ || record_grads_) {
        buf.tape->backward(loss);
        grads[i] = buf.tape->leaf_grads();
      }
      transitions[i] = std::move(buf.transitions);
      ok[i] = 1;
    });
    for (int i = 0; i < N; ++i)
      if (ok[i] && !std::isfinite(losses[i])) nonfinite = true;
    if (!nonfinite) break;
    if (attempt == 1) throw std::runtime_error("shac: non-finite actor loss persists after halving the window");
    h = std::max(1, h / 2);
    std::fprintf(stderr, "shac: non-finite actor loss, retrying with window %d\n", h);
  }

  int n_ok = 0;
  for (int i = 0; i < N; ++i) n_ok += ok[i];
  stats.env_failures = N - n_ok;
  if (n_ok == 0) throw std::runtime_error("shac: every environment window failed");

  // average actor gradients over successful envs, in env order
  GradMap avg;
  for (const auto& [name, p] : master_params_) avg.emplace(name, Tensor::zeros(p.shape));
  for (int i = 0; i < N; ++i) {
    if (!ok[i]) continue;
    for (auto& [name, g] : avg) {
      auto it = grads[i].find(name);
      if (it == grads[i].end()) continue;
      for (std::size_t k = 0; k < g.v.size(); ++k) g.v[k] += it->second.v[k] / n_ok;
    }
  }
  last_grads_ = avg;

  if (!freeze_actor_) {
    adam_step(master_params_, avg, actor_opt_);
    for (auto& p : policies_) p->set_params(master_params_);
  }

  // critic regression on the fresh transitions
  std::vector<ShacTransition> all;
  for (int i = 0; i < N; ++i)
    for (auto& tr : transitions[i]) all.push_back(tr);
  if (!all.empty() && !freeze_critic_) {
    CriticUpdateStats cs = critic_update(all, critic_, target_critic_, critic_opt_, cfg_);
    stats.critic_loss = cs.loss_after;
  }

  double loss_sum = 0.0;
  for (int i = 0; i < N; ++i)
    if (ok[i]) loss_sum += losses[i];
  stats.actor_loss = loss_sum / n_ok;
  for (const auto& tr : all) {
    stats.mean_reward += tr.reward;
    stats.mean_r_cost += tr.breakdown.r_cost;
    stats.mean_r_con += tr.breakdown.r_con;
    reward_tail_.push_back(tr.reward);
  }
  if (!all.empty()) {
    stats.mean_reward /= static_cast<double>(all.size());
    stats.mean_r_cost /= static_cast<double>(all.size());
    stats.mean_r_con /= static_cast<double>(all.size());
  }
  if (reward_tail_.size() > 1024) reward_tail_.erase(reward_tail_.begin(), reward_tail_.end() - 1024);
  stats.steps = static_cast<long>(all.size());
  steps_done_ += stats.steps;
  updates_done_ += 1;
  return stats;
}

ShacResult ShacTrainer::train(const std::function<void(long, const ParamRegistry&, const ShacUpdateStats&)>& on_update) {
  ShacResult res;
  res.best_mean_reward = -std::numeric_limits<double>::infinity();
  while (steps_done_ < cfg_.total_env_steps) {
    ShacUpdateStats stats = update();
    double run_avg = 0.0;
    for (double r : reward_tail_) run_avg += r;
    run_avg /= std::max<std::size_t>(1, reward_tail_.size());

    LearningCurveRow row;
    row.update = updates_done_;
    row.steps = steps_done_;
    row.mean_reward = stats.mean_reward;
    row.run_avg_1024 = run_avg;
    res.curve.push_back(row);

    if (stats.mean_reward > res.best_mean_reward) {
      res.best_mean_reward = stats.mean_reward;
      res.best_update = updates_done_;
      res.best_params = master_params_;
    }
    if (on_update) on_update(updates_done_, master_params_, stats);
  }
  res.final_params = master_params_;
  if (res.best_update < 0) res.best_params = master_params_;
  return res;
}

}  // namespace kmpc
