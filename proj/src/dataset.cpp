#include "kmpc/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "kmpc/checkpoint.hpp"
#include "kmpc/parallel.hpp"

namespace kmpc {

namespace {

// one excitation trajectory; returns false if the integration left the finite
// range (caller retries with a fresh substream)
bool simulate_trajectory(const PlantParams& params, const StateBounds& bounds, const DatasetConfig& cfg, Rng rng,
                         Tensor& states, Tensor& inputs) {
  states = Tensor::zeros({cfg.steps, 2});
  inputs = Tensor::zeros({cfg.steps, 2});

  double c = params.c_ss + rng.uniform(-1.0, 1.0) * 0.05 * bounds.c_span();
  double T = params.T_ss + rng.uniform(-1.0, 1.0) * 0.05 * bounds.T_span();

  double rho = 0.0, F = 0.0;
  int hold = 0;
  double dt = cfg.dt_hours / cfg.rk4_substeps;
  for (int k = 0; k < cfg.steps; ++k) {
    if (hold == 0) {
      rho = rng.uniform(bounds.rho_lo, bounds.rho_hi);
      F = rng.uniform(bounds.F_lo, bounds.F_hi);
      hold = static_cast<int>(rng.uniform_int(cfg.hold_min_steps, cfg.hold_max_steps));
    }
    --hold;
    states.at(k, 0) = c;
    states.at(k, 1) = T;
    inputs.at(k, 0) = rho;
    inputs.at(k, 1) = F;
    try {
      for (int s = 0; s < cfg.rk4_substeps; ++s) rk4_step(params, dt, c, T, rho, F);
    } catch (const std::runtime_error&) {
      return false;
    }
    if (!std::isfinite(c) || !std::isfinite(T)) return false;
  }
  return true;
}

}  // namespace

TrajectoryDataset generate_dataset(const PlantParams& params, const StateBounds& bounds, const DatasetConfig& cfg,
                                   Rng& rng) {
  TrajectoryDataset data;
  data.cfg = cfg;
  data.n_train = cfg.n_train;
  data.states.resize(cfg.n_traj);
  data.inputs.resize(cfg.n_traj);

  parallel_for(cfg.n_traj, hardware_threads(), [&](int i) {
    for (int attempt = 0;; ++attempt) {
      Rng sub = rng.fork(static_cast<std::uint64_t>(i) + static_cast<std::uint64_t>(attempt) * cfg.n_traj);
      if (simulate_trajectory(params, bounds, cfg, sub, data.states[i], data.inputs[i])) break;
      std::fprintf(stderr, "dataset: trajectory %d diverged, regenerating (attempt %d)\n", i, attempt + 1);
      if (attempt >= 20) throw std::runtime_error("dataset: trajectory " + std::to_string(i) + " keeps diverging");
    }
  });

  // normalization statistics from the training split only
  double n = 0.0;
  std::array<double, 4> mean{0, 0, 0, 0}, m2{0, 0, 0, 0};
  for (int i = 0; i < cfg.n_train; ++i) {
    for (int k = 0; k < cfg.steps; ++k) {
      n += 1.0;
      std::array<double, 4> row{data.states[i].at(k, 0), data.states[i].at(k, 1), data.inputs[i].at(k, 0),
                                data.inputs[i].at(k, 1)};
      for (int ch = 0; ch < 4; ++ch) {
        double delta = row[ch] - mean[ch];
        mean[ch] += delta / n;
        m2[ch] += delta * (row[ch] - mean[ch]);
      }
    }
  }
  auto stddev = [&](int ch) { return std::max(1e-9, std::sqrt(m2[ch] / std::max(1.0, n - 1.0))); };
  data.stats.state_mean = {mean[0], mean[1]};
  data.stats.state_scale = {stddev(0), stddev(1)};
  data.stats.input_mean = {mean[2], mean[3]};
  data.stats.input_scale = {stddev(2), stddev(3)};
  return data;
}

void TrajectoryDataset::save(const std::string& path, std::uint64_t seed) const {
  std::map<std::string, Tensor> tensors;
  char name[64];
  for (int i = 0; i < n_traj(); ++i) {
    std::snprintf(name, sizeof(name), "traj%03d/states", i);
    tensors.emplace(name, states[i]);
    std::snprintf(name, sizeof(name), "traj%03d/inputs", i);
    tensors.emplace(name, inputs[i]);
  }
  nlohmann::json meta;
  meta["seed"] = seed;
  meta["n_traj"] = n_traj();
  meta["n_train"] = n_train;
  meta["steps"] = cfg.steps;
  meta["dt_hours"] = cfg.dt_hours;
  meta["stats"] = {{"state_mean", stats.state_mean},
                   {"state_scale", stats.state_scale},
                   {"input_mean", stats.input_mean},
                   {"input_scale", stats.input_scale}};
  save_tensors(path, tensors, meta);
}

TrajectoryDataset TrajectoryDataset::load(const std::string& path) {
  TensorContainer c = load_tensors(path);
  TrajectoryDataset data;
  data.n_train = c.metadata.at("n_train").get<int>();
  int n_traj = c.metadata.at("n_traj").get<int>();
  data.cfg.n_traj = n_traj;
  data.cfg.steps = c.metadata.at("steps").get<int>();
  data.cfg.dt_hours = c.metadata.at("dt_hours").get<double>();
  data.cfg.n_train = data.n_train;
  const auto& st = c.metadata.at("stats");
  data.stats.state_mean = st.at("state_mean").get<std::vector<double>>();
  data.stats.state_scale = st.at("state_scale").get<std::vector<double>>();
  data.stats.input_mean = st.at("input_mean").get<std::vector<double>>();
  data.stats.input_scale = st.at("input_scale").get<std::vector<double>>();
  char name[64];
  for (int i = 0; i < n_traj; ++i) {
    std::snprintf(name, sizeof(name), "traj%03d/states", i);
    data.states.push_back(c.tensors.at(name));
    std::snprintf(name, sizeof(name), "traj%03d/inputs", i);
    data.inputs.push_back(c.tensors.at(name));
  }
  return data;
}

}  // namespace kmpc
