#pragma once

#include <memory>
#include <vector>

#include "kmpc/plant.hpp"
#include "kmpc/prices.hpp"
#include "kmpc/rng.hpp"
#include "kmpc/tape.hpp"

namespace kmpc {

struct RewardBreakdown {
  double r_cost = 0.0;   // cost saving vs. steady-state production
  double r_con = 0.0;    // quadratic constraint penalty, >= 0
  double r_total = 0.0;  // alpha * r_cost - r_con
};

struct EnvConfig {
  double dt_ctrl = 1.0;      // control step [h]
  int substeps = 15;         // RK4 substeps per control step
  double alpha = 1e-3;       // reward blend weight on the cost term
  double con_weight = 2000;  // scale of the span-normalized quadratic penalty
  int episode_steps = 240;   // fixed episode length in control steps
  int forecast_margin = 16;  // hours kept free past an episode for lookahead
};

enum class ResetMode { SteadyState, Randomized };

// Result of one differentiable environment step. Node ids live on the tape
// passed to step().
struct EnvStepResult {
  int next_state = -1;  // 3-vector node (c, T, storage)
  int reward = -1;      // scalar node, alpha * r_cost - r_con
  bool done = false;
  RewardBreakdown breakdown;
};

// Differentiable CSTR environment: RK4 plant integration, linear product
// storage bookkeeping and the electricity-cost / constraint-penalty reward,
// all emitted onto a caller-supplied tape. Instances are independent; a
// single instance is not reentrant.
class CstrEnv {
 public:
  CstrEnv(PlantParams params, StateBounds bounds, EnvConfig cfg, std::shared_ptr<const PriceSeries> prices);

  PlantState reset(ResetMode mode, Rng& rng);
  // deterministic reset at a fixed price offset (evaluation episodes)
  PlantState reset_at(ResetMode mode, long price_offset, Rng& rng);

  // Put the current state on a tape as a detached constant.
  int state_node(Tape& tape) const;

  // Advance one control step. `control` is a 2-vector node (rho, F) in
  // physical units; the price for the step is read from the series.
  EnvStepResult step(Tape& tape, int state, int control);

  // Convenience off-tape step used by non-differentiable rollouts.
  std::pair<PlantState, RewardBreakdown> step_raw(const ControlInput& u);

  const PlantState& state() const { return state_; }
  long step_index() const { return t_; }          // control step within the episode
  long price_index() const { return offset_ + t_; }
  double current_price() const { return prices_->at_padded(price_index()); }
  std::vector<double> price_window(int len) const { return prices_->window(price_index(), len); }

  // Normalized observation for value networks: states scaled to [-1, 1] by
  // their bound boxes, prices standardized by series statistics.
  std::vector<double> critic_obs(int price_lookahead) const;
  static int critic_obs_dim(int price_lookahead) { return 3 + price_lookahead; }

  const PlantParams& params() const { return params_; }
  const StateBounds& bounds() const { return bounds_; }
  const EnvConfig& config() const { return cfg_; }
  const PriceSeries& prices() const { return *prices_; }

  // Constraint bookkeeping for evaluation: substep-resolution violations of
  // the previous step(), as (relative magnitude) events.
  const std::vector<double>& last_violations() const { return last_violations_; }

 private:
  int penalty_node(Tape& tape, int x_ct, int storage);

  PlantParams params_;
  StateBounds bounds_;
  EnvConfig cfg_;
  std::shared_ptr<const PriceSeries> prices_;
  double price_mean_ = 0.0;
  double price_std_ = 1.0;

  PlantState state_;
  long t_ = 0;
  long offset_ = 0;
  std::vector<double> last_violations_;
};

}  // namespace kmpc
