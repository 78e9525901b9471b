#include "kmpc/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "kmpc/parallel.hpp"

namespace kmpc {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

double gaussian_logprob(const std::vector<double>& u, const std::vector<double>& mean,
                        const std::vector<double>& stddev) {
  if (u.size() != mean.size() || u.size() != stddev.size())
    throw std::runtime_error("ppo: logprob dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (stddev[i] <= 0.0) throw std::runtime_error("ppo: nonpositive action std");
    double zi = (u[i] - mean[i]) / stddev[i];
    lp += -0.5 * zi * zi - std::log(stddev[i]) - 0.5 * kLog2Pi;
  }
  return lp;
}

int gaussian_logprob_node(Tape& tape, const std::vector<double>& u, int mean_node,
                          const std::vector<double>& stddev) {
  double const_part = 0.0;
  std::vector<double> inv_std(stddev.size());
  for (std::size_t i = 0; i < stddev.size(); ++i) {
    if (stddev[i] <= 0.0) throw std::runtime_error("ppo: nonpositive action std");
    inv_std[i] = 1.0 / stddev[i];
    const_part += -std::log(stddev[i]) - 0.5 * kLog2Pi;
  }
  int diff = tape.mul(tape.sub(tape.constant(Tensor::vec(u)), mean_node), tape.constant(Tensor::vec(inv_std)));
  return tape.shift(tape.scale(tape.sq_norm(diff), -0.5), const_part);
}

void gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                    const std::vector<double>& next_values, const std::vector<char>& dones, double gamma,
                    double lam, std::vector<double>& advantages, std::vector<double>& returns) {
  const int n = static_cast<int>(rewards.size());
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double acc = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    double not_done = dones[t] ? 0.0 : 1.0;
    double delta = rewards[t] + gamma * not_done * next_values[t] - values[t];
    acc = delta + gamma * lam * not_done * acc;
    advantages[t] = acc;
    returns[t] = acc + values[t];
  }
}

PpoTrainer::PpoTrainer(std::vector<std::unique_ptr<ShacEnv>> envs, std::vector<std::unique_ptr<ShacPolicy>> policies,
                       PpoConfig cfg)
    : envs_(std::move(envs)),
      policies_(std::move(policies)),
      cfg_(cfg),
      actor_opt_(cfg.actor_lr),
      critic_opt_(cfg.critic_lr),
      trainer_rng_(cfg.seed) {
  if (envs_.empty() || envs_.size() != policies_.size())
    throw std::runtime_error("ppo: need one policy per environment");
  if (cfg_.action_std.empty()) throw std::runtime_error("ppo: action_std not configured");
  master_params_ = policies_[0]->params();
  critic_ = Critic(envs_[0]->obs_dim(), cfg_.critic_hidden, "critic");
  Rng crng = trainer_rng_.fork(1);
  critic_.init_params(crng);
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    env_rngs_.push_back(trainer_rng_.fork(2000 + i));
    envs_[i]->reset(env_rngs_[i]);
    policies_[i]->set_params(master_params_);
  }
}

std::vector<PpoSample> PpoTrainer::collect_rollout() {
  const int N = static_cast<int>(envs_.size());
  const int per_env = std::max(1, cfg_.rollout_steps / N);
  int threads = cfg_.n_threads > 0 ? cfg_.n_threads : hardware_threads();

  std::vector<std::vector<PpoSample>> chunks(N);
  parallel_for(N, threads, [&](int i) {
    auto& env = *envs_[i];
    auto& policy = *policies_[i];
    Rng& rng = env_rngs_[i];
    chunks[i].reserve(per_env);
    for (int t = 0; t < per_env; ++t) {
      PpoSample smp;
      smp.obs = env.critic_obs();
      smp.forecast = env.forecast();

      Tape scratch;
      int sn = env.state_node(scratch);
      smp.state = scratch.val(sn).v;
      int mean_node = policy.act_node(scratch, sn, smp.forecast, false, nullptr);
      std::vector<double> mean = scratch.val(mean_node).v;

      smp.action.resize(mean.size());
      std::vector<double> applied(mean.size());
      for (std::size_t c = 0; c < mean.size(); ++c) {
        smp.action[c] = mean[c] + cfg_.action_std[c] * rng.normal();
        applied[c] = smp.action[c];
        if (!cfg_.action_lo.empty()) applied[c] = std::clamp(applied[c], cfg_.action_lo[c], cfg_.action_hi[c]);
      }
      smp.logp_old = gaussian_logprob(smp.action, mean, cfg_.action_std);
      smp.value = critic_.value(smp.obs);

      EnvStepResult res = env.step(scratch, sn, scratch.constant(Tensor::vec(applied)));
      smp.reward = res.breakdown.r_total;
      smp.breakdown = res.breakdown;
      smp.done = res.done;
      smp.next_obs = env.critic_obs();
      if (res.done) env.reset(rng);
      chunks[i].push_back(std::move(smp));
    }
  });

  std::vector<PpoSample> out;
  out.reserve(static_cast<std::size_t>(N) * per_env);
  for (auto& ch : chunks)
    for (auto& s : ch) out.push_back(std::move(s));
  return out;
}

GradMap PpoTrainer::surrogate_grads(const std::vector<PpoSample>& batch, const std::vector<int>& idx,
                                    double& loss_out, double& kl_out) {
  // workers recompute the policy mean per sample; gradient parts are merged
  // in sample order afterwards
  int threads = cfg_.n_threads > 0 ? cfg_.n_threads : hardware_threads();
  const int n = static_cast<int>(idx.size());
  const int n_workers = std::min<int>(threads, static_cast<int>(policies_.size()));
  std::vector<GradMap> grads(n_workers);
  std::vector<double> losses(n_workers, 0.0), kls(n_workers, 0.0);

  std::vector<std::vector<int>> shards(n_workers);
  for (int j = 0; j < n; ++j) shards[j % n_workers].push_back(idx[j]);

  parallel_for(n_workers, threads, [&](int w) {
    auto& policy = *policies_[w];
    Tape tape;
    std::vector<int> terms;
    double kl = 0.0;
    for (int j : shards[w]) {
      const PpoSample& smp = batch[j];
      int sn = tape.constant(Tensor::vec(smp.state));
      int mean_node = policy.act_node(tape, sn, smp.forecast, false, nullptr);
      int logp = gaussian_logprob_node(tape, smp.action, mean_node, cfg_.action_std);
      int ratio = tape.exp_(tape.shift(logp, -smp.logp_old));
      int surr1 = tape.scale(ratio, smp.advantage);
      int clipped = tape.min_(tape.max_(ratio, tape.constant(1.0 - cfg_.clip)), tape.constant(1.0 + cfg_.clip));
      int surr2 = tape.scale(clipped, smp.advantage);
      terms.push_back(tape.min_(surr1, surr2));
      kl += smp.logp_old - tape.val(logp).item();
    }
    kls[w] = kl;
    if (terms.empty()) return;
    int loss = tape.scale(tape.mean(tape.concat(terms)), -1.0);
    losses[w] = tape.val(loss).item() * static_cast<double>(terms.size());
    tape.backward(loss);
    GradMap g = tape.leaf_grads();
    // per-worker loss is a mean over its shard; rescale to a sum
    for (auto& [name, t] : g)
      for (auto& v : t.v) v *= static_cast<double>(terms.size());
    grads[w] = std::move(g);
  });

  GradMap avg;
  for (const auto& [name, p] : master_params_) avg.emplace(name, Tensor::zeros(p.shape));
  for (int w = 0; w < n_workers; ++w) {
    for (auto& [name, g] : avg) {
      auto it = grads[w].find(name);
      if (it == grads[w].end()) continue;
      for (std::size_t k = 0; k < g.v.size(); ++k) g.v[k] += it->second.v[k] / n;
    }
  }
  loss_out = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
  kl_out = std::accumulate(kls.begin(), kls.end(), 0.0) / n;
  return avg;
}

PpoUpdateStats PpoTrainer::update() {
  std::vector<PpoSample> batch = collect_rollout();
  PpoUpdateStats stats;
  stats.steps = static_cast<long>(batch.size());

  // advantages from the current value function
  {
    std::vector<double> rewards, values, next_values, adv, ret;
    std::vector<char> dones;
    for (const auto& s : batch) {
      rewards.push_back(s.reward);
      values.push_back(s.value);
      next_values.push_back(critic_.value(s.next_obs));
      dones.push_back(s.done ? 1 : 0);
    }
    gae_advantages(rewards, values, next_values, dones, cfg_.gamma, cfg_.gae_lambda, adv, ret);
    double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    double stddev = std::sqrt(var / adv.size()) + 1e-8;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].advantage = (adv[i] - mean) / stddev;
      batch[i].ret = ret[i];
    }
  }

  for (const auto& s : batch) {
    stats.mean_reward += s.reward;
    stats.mean_r_cost += s.breakdown.r_cost;
    stats.mean_r_con += s.breakdown.r_con;
    reward_tail_.push_back(s.reward);
  }
  stats.mean_reward /= batch.size();
  stats.mean_r_cost /= batch.size();
  stats.mean_r_con /= batch.size();
  if (reward_tail_.size() > 1024) reward_tail_.erase(reward_tail_.begin(), reward_tail_.end() - 1024);

  if (freeze_actor_ && record_grads_) {
    // one full-batch surrogate gradient at the current parameters
    std::vector<int> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    double loss = 0.0, kl = 0.0;
    last_grads_ = surrogate_grads(batch, idx, loss, kl);
    stats.policy_loss = loss;
  }

  Rng shuffle_rng = trainer_rng_.fork(9000 + updates_done_);
  const int n = static_cast<int>(batch.size());
  bool first_grad = true;
  for (int epoch = 0; !freeze_actor_ && epoch < cfg_.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    double epoch_kl = 0.0;
    int nb = 0;
    for (int off = 0; off < n; off += cfg_.minibatch) {
      std::vector<int> mb(order.begin() + off, order.begin() + std::min(n, off + cfg_.minibatch));
      double loss = 0.0, kl = 0.0;
      GradMap g = surrogate_grads(batch, mb, loss, kl);
      if (first_grad) {
        last_grads_ = g;
        first_grad = false;
      }
      adam_step(master_params_, g, actor_opt_);
      for (auto& p : policies_) p->set_params(master_params_);
      stats.policy_loss = loss;
      epoch_kl += kl;
      ++nb;
    }
    stats.epochs_run = epoch + 1;
    stats.approx_kl = epoch_kl / std::max(1, nb);
    if (stats.approx_kl > cfg_.kl_stop) break;
  }

  // value function regression on returns
  if (!freeze_critic_) {
    const int d = critic_.input_dim();
    Tensor X = Tensor::zeros({n, d});
    Tensor Y = Tensor::zeros({n, 1});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) X.at(i, j) = batch[i].obs[j];
      Y.at(i, 0) = batch[i].ret;
    }
    for (int it = 0; it < cfg_.critic_iters; ++it) {
      Tape tape;
      Critic::Leaves lv = critic_.bind(tape);
      int pred = critic_.value_batch_node(tape, lv, tape.constant(X));
      int loss = tape.mean(tape.square(tape.sub(pred, tape.constant(Y))));
      stats.value_loss = tape.val(loss).item();
      if (!std::isfinite(stats.value_loss)) throw std::runtime_error("ppo: non-finite value loss");
      tape.backward(loss);
      adam_step(critic_.params(), tape.leaf_grads(), critic_opt_);
    }
  }

  steps_done_ += stats.steps;
  updates_done_ += 1;
  return stats;
}

ShacResult PpoTrainer::train(const std::function<void(long, const ParamRegistry&, const PpoUpdateStats&)>& on_update) {
  ShacResult res;
  res.best_mean_reward = -std::numeric_limits<double>::infinity();
  while (steps_done_ < cfg_.total_env_steps) {
    PpoUpdateStats stats = update();
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
