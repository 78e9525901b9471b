#pragma once

#include <string>
#include <vector>

#include "kmpc/koopman.hpp"
#include "kmpc/plant.hpp"
#include "kmpc/rng.hpp"

namespace kmpc {

struct DatasetConfig {
  int n_traj = 84;
  int steps = 480;          // samples per trajectory
  double dt_hours = 0.25;   // sample spacing
  int rk4_substeps = 4;     // integrator substeps per sample interval
  int n_train = 63;
  int hold_min_steps = 4;   // random input hold duration, in samples (1 h)
  int hold_max_steps = 16;  // (4 h)
};

// Excitation data for system identification: states and the piecewise-random
// inputs that produced them, in physical units. states[i] row k pairs with
// inputs[i] row k; row k+1 is the integrated successor.
struct TrajectoryDataset {
  std::vector<Tensor> states;  // each (steps x 2)
  std::vector<Tensor> inputs;  // each (steps x 2)
  int n_train = 0;
  NormStats stats;  // computed on the training split only
  DatasetConfig cfg;

  int n_traj() const { return static_cast<int>(states.size()); }
  int n_val() const { return n_traj() - n_train; }

  void save(const std::string& path, std::uint64_t seed) const;
  static TrajectoryDataset load(const std::string& path);
};

TrajectoryDataset generate_dataset(const PlantParams& params, const StateBounds& bounds, const DatasetConfig& cfg,
                                   Rng& rng);

}  // namespace kmpc
