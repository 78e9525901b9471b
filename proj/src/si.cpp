#include "kmpc/si.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "kmpc/parallel.hpp"

namespace kmpc {

namespace {

struct NormalizedData {
  std::vector<Tensor> states;  // (steps x 2), normalized
  std::vector<Tensor> inputs;
};

NormalizedData normalize(const TrajectoryDataset& data) {
  NormalizedData out;
  out.states.reserve(data.n_traj());
  out.inputs.reserve(data.n_traj());
  for (int i = 0; i < data.n_traj(); ++i) {
    Tensor s = data.states[i];
    Tensor u = data.inputs[i];
    for (int k = 0; k < s.rows(); ++k) {
      s.at(k, 0) = (s.at(k, 0) - data.stats.state_mean[0]) / data.stats.state_scale[0];
      s.at(k, 1) = (s.at(k, 1) - data.stats.state_mean[1]) / data.stats.state_scale[1];
      u.at(k, 0) = (u.at(k, 0) - data.stats.input_mean[0]) / data.stats.input_scale[0];
      u.at(k, 1) = (u.at(k, 1) - data.stats.input_mean[1]) / data.stats.input_scale[1];
    }
    out.states.push_back(std::move(s));
    out.inputs.push_back(std::move(u));
  }
  return out;
}

// batched multi-step loss node over the given windows
int window_loss_node(Tape& tape, const KoopmanModel& model, const KoopmanLeaves& lv, const NormalizedData& nd,
                     const std::vector<std::pair<int, int>>& windows, int window_len, double recon_weight = 0.0,
                     double consistency_weight = 0.0, const std::vector<double>& channel_weights = {}) {
  const int nb = static_cast<int>(windows.size());
  int weight_node = -1;
  if (!channel_weights.empty()) {
    Tensor W = Tensor::zeros({nb, 2});
    for (int i = 0; i < nb; ++i) {
      W.at(i, 0) = channel_weights[0];
      W.at(i, 1) = channel_weights[1];
    }
    weight_node = tape.constant(std::move(W));
  }
  Tensor X0 = Tensor::zeros({nb, 2});
  for (int i = 0; i < nb; ++i) {
    auto [tr, st] = windows[i];
    X0.at(i, 0) = nd.states[tr].at(st, 0);
    X0.at(i, 1) = nd.states[tr].at(st, 1);
  }
  int X0_node = tape.constant(X0);
  int Z = model.encode_batch_node(tape, lv, X0_node);
  int loss_acc = -1;
  if (recon_weight > 0.0) {
    int rec = tape.sub(model.decode_batch_node(tape, lv, Z), X0_node);
    loss_acc = tape.scale(tape.sum(tape.square(rec)), recon_weight);
  }
  for (int k = 1; k <= window_len; ++k) {
    Tensor U = Tensor::zeros({nb, 2});
    Tensor Xk = Tensor::zeros({nb, 2});
    for (int i = 0; i < nb; ++i) {
      auto [tr, st] = windows[i];
      U.at(i, 0) = nd.inputs[tr].at(st + k - 1, 0);
      U.at(i, 1) = nd.inputs[tr].at(st + k - 1, 1);
      Xk.at(i, 0) = nd.states[tr].at(st + k, 0);
      Xk.at(i, 1) = nd.states[tr].at(st + k, 1);
    }
    Z = model.latent_step_batch_node(tape, lv, Z, tape.constant(std::move(U)));
    int Xk_node = tape.constant(std::move(Xk));
    int diff = tape.sub(model.decode_batch_node(tape, lv, Z), Xk_node);
    int sq_terms = tape.square(diff);
    if (weight_node >= 0) sq_terms = tape.mul(sq_terms, weight_node);
    int sq = tape.sum(sq_terms);
    loss_acc = loss_acc < 0 ? sq : tape.add(loss_acc, sq);
    if (consistency_weight > 0.0) {
      int cons = tape.sub(model.encode_batch_node(tape, lv, Xk_node), Z);
      loss_acc = tape.add(loss_acc, tape.scale(tape.sum(tape.square(cons)), consistency_weight));
    }
  }
  return tape.scale(loss_acc, 1.0 / (static_cast<double>(nb) * window_len * 2.0));
}

std::vector<std::pair<int, int>> all_windows(const TrajectoryDataset& data, int first_traj, int last_traj,
                                             int window_len, int cap) {
  std::vector<std::pair<int, int>> out;
  for (int tr = first_traj; tr < last_traj; ++tr)
    for (int st = 0; st + window_len < data.cfg.steps; ++st) out.emplace_back(tr, st);
  if (cap > 0 && static_cast<int>(out.size()) > cap) {
    std::vector<std::pair<int, int>> sub;
    sub.reserve(cap);
    double stride = static_cast<double>(out.size()) / cap;
    for (int i = 0; i < cap; ++i) sub.push_back(out[static_cast<std::size_t>(i * stride)]);
    out = std::move(sub);
  }
  return out;
}

}  // namespace

double si_window_loss(const KoopmanModel& model, const TrajectoryDataset& data,
                      const std::vector<std::pair<int, int>>& windows, int window_len) {
  NormalizedData nd = normalize(data);
  double total = 0.0;
  const int chunk = 512;
  for (std::size_t off = 0; off < windows.size(); off += chunk) {
    std::vector<std::pair<int, int>> part(windows.begin() + off,
                                          windows.begin() + std::min(windows.size(), off + chunk));
    Tape tape;
    KoopmanLeaves lv = model.bind(tape);
    int loss = window_loss_node(tape, model, lv, nd, part, window_len);
    total += tape.val(loss).item() * static_cast<double>(part.size());
  }
  return total / static_cast<double>(windows.size());
}

SiResult train_si(KoopmanModel& model, const TrajectoryDataset& data, const SiConfig& cfg) {
  NormalizedData nd = normalize(data);
  Rng rng(cfg.seed);

  std::vector<std::pair<int, int>> train_windows = all_windows(data, 0, data.n_train, cfg.window, 0);
  std::vector<std::pair<int, int>> val_windows =
      all_windows(data, data.n_train, data.n_traj(), cfg.window, cfg.val_windows_cap);
  if (train_windows.empty() || val_windows.empty()) throw std::runtime_error("si: dataset too small for the window");

  auto eval_val = [&]() {
    double total = 0.0;
    const int chunk = 512;
    for (std::size_t off = 0; off < val_windows.size(); off += chunk) {
      std::vector<std::pair<int, int>> part(val_windows.begin() + off,
                                            val_windows.begin() + std::min(val_windows.size(), off + chunk));
      Tape tape;
      KoopmanLeaves lv = model.bind(tape);
      total += tape.val(window_loss_node(tape, model, lv, nd, part, cfg.window)).item() *
               static_cast<double>(part.size());
    }
    return total / static_cast<double>(val_windows.size());
  };

  SiResult res;
  AdamState adam(cfg.lr);
  ParamRegistry best_params = model.params();
  res.best_val = std::numeric_limits<double>::infinity();
  int full_window_since = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    int train_window = cfg.window;
    if (cfg.curriculum && cfg.curriculum_ramp > 0)
      train_window = std::min(cfg.window, 1 + epoch / cfg.curriculum_ramp);
    if (train_window == cfg.window && full_window_since == 0) full_window_since = epoch;
    adam.lr = cfg.lr * std::pow(cfg.lr_decay, epoch / std::max(1, cfg.lr_decay_every));

    double epoch_loss = 0.0;
    for (int bi = 0; bi < cfg.batches_per_epoch; ++bi) {
      std::vector<std::pair<int, int>> batch(cfg.batch);
      for (auto& w : batch) w = train_windows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(train_windows.size()) - 1))];
      Tape tape;
      KoopmanLeaves lv = model.bind(tape);
      int loss = window_loss_node(tape, model, lv, nd, batch, train_window, cfg.recon_weight,
                                  cfg.consistency_weight, cfg.channel_weights);
      double lval = tape.val(loss).item();
      if (!std::isfinite(lval))
        throw std::runtime_error("si: non-finite training loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(bi));
      epoch_loss += lval;
      tape.backward(loss);
      GradMap grads = tape.leaf_grads();
      if (cfg.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (const auto& [name, g] : grads)
          for (double v : g.v) norm2 += v * v;
        double norm = std::sqrt(norm2);
        if (norm > cfg.grad_clip) {
          double scale = cfg.grad_clip / norm;
          for (auto& [name, g] : grads)
            for (double& v : g.v) v *= scale;
        }
      }
      adam_step(model.params(), grads, adam);
    }
    res.train_loss.push_back(epoch_loss / cfg.batches_per_epoch);

    double vl = eval_val();
    if (!std::isfinite(vl)) throw std::runtime_error("si: non-finite validation loss at epoch " + std::to_string(epoch));
    res.val_loss.push_back(vl);
    res.epochs_run = epoch + 1;
    // early stopping engages once training reaches the full horizon
    if (train_window < cfg.window) continue;
    if (vl < res.best_val) {
      res.best_val = vl;
      res.best_epoch = epoch;
      best_params = model.params();
    } else if (res.best_epoch >= 0 && epoch - std::max(res.best_epoch, full_window_since) >= cfg.patience) {
      break;
    }
  }
  model.params() = best_params;
  return res;
}

SiSweepResult si_seed_sweep(const TrajectoryDataset& data, const SiConfig& cfg, int n_seeds,
                            std::uint64_t base_seed) {
  SiSweepResult sweep;
  sweep.val_losses.assign(n_seeds, 0.0);
  sweep.runs.resize(n_seeds);
  std::vector<KoopmanModel> models(n_seeds);

  std::vector<std::array<double, 2>> init_states;
  for (int tr = 0; tr < data.n_train; ++tr)
    for (int k = 0; k < data.cfg.steps; k += 7)
      init_states.push_back(data.stats.norm_state(data.states[tr].at(k, 0), data.states[tr].at(k, 1)));

  parallel_for(n_seeds, hardware_threads(), [&](int i) {
    Rng seed_rng(base_seed + static_cast<std::uint64_t>(i));
    KoopmanModel model(KoopmanArch{}, data.stats);
    model.init_params(seed_rng);
    model.init_decoder(init_states);
    SiConfig run_cfg = cfg;
    run_cfg.seed = base_seed + static_cast<std::uint64_t>(i);
    sweep.runs[i] = train_si(model, data, run_cfg);
    sweep.val_losses[i] = sweep.runs[i].best_val;
    models[i] = std::move(model);
  });

  int best = 0;
  for (int i = 1; i < n_seeds; ++i)
    if (sweep.val_losses[i] < sweep.val_losses[best]) best = i;
  sweep.best_seed_index = best;
  sweep.best_model = std::move(models[best]);
  return sweep;
}

std::array<double, 2> validation_rmse(const KoopmanModel& model, const TrajectoryDataset& data, int horizon) {
  std::array<double, 2> se{0.0, 0.0};
  long count = 0;
  for (int tr = data.n_train; tr < data.n_traj(); ++tr) {
    for (int st = 0; st + horizon < data.cfg.steps; st += 3) {
      auto x0 = data.stats.norm_state(data.states[tr].at(st, 0), data.states[tr].at(st, 1));
      std::vector<std::array<double, 2>> u(horizon);
      for (int k = 0; k < horizon; ++k)
        u[k] = data.stats.norm_input(data.inputs[tr].at(st + k, 0), data.inputs[tr].at(st + k, 1));
      auto pred = model.rollout(x0, u);
      for (int k = 1; k <= horizon; ++k) {
        auto xp = data.stats.denorm_state(pred[k - 1][0], pred[k - 1][1]);
        double dc = xp[0] - data.states[tr].at(st + k, 0);
        double dT = xp[1] - data.states[tr].at(st + k, 1);
        se[0] += dc * dc;
        se[1] += dT * dT;
        ++count;
      }
    }
  }
  return {std::sqrt(se[0] / count), std::sqrt(se[1] / count)};
}

std::array<double, 2> mean_predictor_rmse(const TrajectoryDataset& data, int horizon) {
  std::array<double, 2> se{0.0, 0.0};
  long count = 0;
  for (int tr = data.n_train; tr < data.n_traj(); ++tr) {
    for (int st = 0; st + horizon < data.cfg.steps; st += 3) {
      for (int k = 1; k <= horizon; ++k) {
        double dc = data.stats.state_mean[0] - data.states[tr].at(st + k, 0);
        double dT = data.stats.state_mean[1] - data.states[tr].at(st + k, 1);
        se[0] += dc * dc;
        se[1] += dT * dT;
        ++count;
      }
    }
  }
  return {std::sqrt(se[0] / count), std::sqrt(se[1] / count)};
}

}  // namespace kmpc
