#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "kmpc/dataset.hpp"
#include "kmpc/koopman.hpp"

namespace kmpc {

struct SiConfig {
  double lr = 1e-3;
  int batch = 128;
  int epochs = 600;
  int patience = 60;          // early stop on validation loss
  int window = 12;            // multi-step prediction horizon (3 h at 15 min)
  int batches_per_epoch = 150;
  int val_windows_cap = 4096;
  double grad_clip = 2.0;     // global-norm clip; <= 0 disables
  // horizon curriculum: training windows grow by one step every ramp epochs
  // until the full window is reached (validation always uses the full window)
  bool curriculum = true;
  int curriculum_ramp = 6;
  double lr_decay = 0.7;      // multiplicative decay applied every decay_every epochs
  int lr_decay_every = 100;
  // auxiliary terms: decoder reconstruction anchor C psi(x_0) ~ x_0 and
  // latent consistency psi(x_k) ~ z_k along the window
  double recon_weight = 0.0;
  double consistency_weight = 0.0;
  // per-channel weights on the normalized prediction error (empty: uniform);
  // used to emphasize channels whose operating box is narrow relative to the
  // excitation range
  std::vector<double> channel_weights;
  std::uint64_t seed = 0;
};

struct SiResult {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  double best_val = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
};

// Multi-step prediction loss over sampled training windows; encoder applied
// only at each window start. Early-stops on validation loss and restores the
// best parameters. Throws on non-finite losses.
SiResult train_si(KoopmanModel& model, const TrajectoryDataset& data, const SiConfig& cfg);

// Normalized MSE of the model over explicit windows (trajectory index, start).
double si_window_loss(const KoopmanModel& model, const TrajectoryDataset& data,
                      const std::vector<std::pair<int, int>>& windows, int window_len);

struct SiSweepResult {
  KoopmanModel best_model;
  int best_seed_index = -1;
  std::vector<double> val_losses;
  std::vector<SiResult> runs;
};

// Repeats SI across seeds and keeps the model with the lowest validation
// loss; runs are independent and executed in parallel.
SiSweepResult si_seed_sweep(const TrajectoryDataset& data, const SiConfig& cfg, int n_seeds,
                            std::uint64_t base_seed);

// Per-channel K-step prediction RMSE on the validation split, physical units.
std::array<double, 2> validation_rmse(const KoopmanModel& model, const TrajectoryDataset& data, int horizon);
// RMSE of the constant train-mean predictor on the same windows (oracle
// baseline for model quality checks).
std::array<double, 2> mean_predictor_rmse(const TrajectoryDataset& data, int horizon);

}  // namespace kmpc
