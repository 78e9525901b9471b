#include "kmpc/env.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace kmpc {

CstrEnv::CstrEnv(PlantParams params, StateBounds bounds, EnvConfig cfg, std::shared_ptr<const PriceSeries> prices)
    : params_(params), bounds_(bounds), cfg_(cfg), prices_(std::move(prices)) {
  if (!prices_ || prices_->size() == 0) throw std::runtime_error("env: empty price series");
  price_mean_ = prices_->mean();
  price_std_ = std::max(1e-9, prices_->stddev());
  state_ = PlantState{params_.c_ss, params_.T_ss, 0.0};
}

PlantState CstrEnv::reset(ResetMode mode, Rng& rng) {
  long max_offset = static_cast<long>(prices_->size()) - cfg_.episode_steps - cfg_.forecast_margin;
  long offset = 0;
  if (mode == ResetMode::Randomized && max_offset > 0) offset = rng.uniform_int(0, max_offset);
  return reset_at(mode, offset, rng);
}

PlantState CstrEnv::reset_at(ResetMode mode, long price_offset, Rng& rng) {
  offset_ = price_offset;
  t_ = 0;
  last_violations_.clear();
  if (mode == ResetMode::SteadyState) {
    state_ = PlantState{params_.c_ss, params_.T_ss, 0.0};
  } else {
    state_.c = params_.c_ss + rng.uniform(-1.0, 1.0) * 0.05 * bounds_.c_span();
    state_.T = params_.T_ss + rng.uniform(-1.0, 1.0) * 0.05 * bounds_.T_span();
    state_.storage = rng.uniform(bounds_.storage_lo, bounds_.storage_hi);
  }
  return state_;
}

int CstrEnv::state_node(Tape& tape) const {
  return tape.constant(Tensor::vec({state_.c, state_.T, state_.storage}));
}

int CstrEnv::penalty_node(Tape& tape, int x_ct, int storage) {
  int lb = tape.constant(Tensor::vec({bounds_.c_lo, bounds_.T_lo}));
  int ub = tape.constant(Tensor::vec({bounds_.c_hi, bounds_.T_hi}));
  int inv_span = tape.constant(Tensor::vec({1.0 / bounds_.c_span(), 1.0 / bounds_.T_span()}));
  int lo_viol = tape.sq_norm(tape.relu(tape.mul(tape.sub(lb, x_ct), inv_span)));
  int hi_viol = tape.sq_norm(tape.relu(tape.mul(tape.sub(x_ct, ub), inv_span)));

  double s_span = bounds_.storage_span();
  int s_lo = tape.sq_norm(tape.relu(tape.scale(tape.shift(tape.neg(storage), bounds_.storage_lo), 1.0 / s_span)));
  int s_hi = tape.sq_norm(tape.relu(tape.scale(tape.shift(storage, -bounds_.storage_hi), 1.0 / s_span)));
  return tape.add(tape.add(lo_viol, hi_viol), tape.add(s_lo, s_hi));
}

EnvStepResult CstrEnv::step(Tape& tape, int state, int control) {
  double price = current_price();
  double dt_sub = cfg_.dt_ctrl / cfg_.substeps;

  int x_ct = tape.slice(state, 0, 2);
  int storage0 = tape.slice(state, 2, 3);
  int rho = tape.slice(control, 0, 1);
  int F = tape.slice(control, 1, 2);
  int rho_excess = tape.shift(rho, -params_.rho_ss);

  last_violations_.clear();
  auto record_violation = [&](double v, double lo, double hi, double span) {
    if (v < lo) last_violations_.push_back((lo - v) / span);
    if (v > hi) last_violations_.push_back((v - hi) / span);
  };

  int con_sum = -1;
  int x = x_ct;
  for (int j = 1; j <= cfg_.substeps; ++j) {
    x = rk4_step_node(tape, params_, dt_sub, x, control);
    int storage_j = tape.add(storage0, tape.scale(rho_excess, j * dt_sub));
    int pen = penalty_node(tape, x, storage_j);
    con_sum = (con_sum < 0) ? pen : tape.add(con_sum, pen);

    const Tensor& xv = tape.val(x);
    double sv = tape.val(storage_j).item();
    record_violation(xv.v[0], bounds_.c_lo, bounds_.c_hi, bounds_.c_span());
    record_violation(xv.v[1], bounds_.T_lo, bounds_.T_hi, bounds_.T_span());
    record_violation(sv, bounds_.storage_lo, bounds_.storage_hi, bounds_.storage_span());
  }

  int r_con = tape.scale(con_sum, cfg_.con_weight * dt_sub);
  int r_cost = tape.scale(tape.shift(tape.neg(F), params_.F_ss), price * cfg_.dt_ctrl);
  int reward = tape.sub(tape.scale(r_cost, cfg_.alpha), r_con);

  int storage_next = tape.add(storage0, tape.scale(rho_excess, cfg_.dt_ctrl));
  int next_state = tape.concat({x, storage_next});

  const Tensor& ns = tape.val(next_state);
  if (!ns.all_finite()) {
    std::ostringstream os;
    os << "env: integrator produced non-finite state at step " << t_ << "; last finite state (c=" << state_.c
       << ", T=" << state_.T << ", storage=" << state_.storage << ")";
    throw std::runtime_error(os.str());
  }

  state_ = PlantState{ns.v[0], ns.v[1], ns.v[2]};
  t_ += 1;

  EnvStepResult out;
  out.next_state = next_state;
  out.reward = reward;
  out.done = t_ >= cfg_.episode_steps;
  out.breakdown.r_cost = tape.val(r_cost).item();
  out.breakdown.r_con = tape.val(r_con).item();
  out.breakdown.r_total = tape.val(reward).item();
  return out;
}

std::pair<PlantState, RewardBreakdown> CstrEnv::step_raw(const ControlInput& u) {
  Tape tape;
  int state = state_node(tape);
  int control = tape.constant(Tensor::vec({u.rho, u.F}));
  EnvStepResult r = step(tape, state, control);
  return {state_, r.breakdown};
}

std::vector<double> CstrEnv::critic_obs(int price_lookahead) const {
  std::vector<double> obs;
  obs.reserve(3 + price_lookahead);
  obs.push_back((state_.c - 0.5 * (bounds_.c_lo + bounds_.c_hi)) / (0.5 * bounds_.c_span()));
  obs.push_back((state_.T - 0.5 * (bounds_.T_lo + bounds_.T_hi)) / (0.5 * bounds_.T_span()));
  obs.push_back((state_.storage - 0.5 * (bounds_.storage_lo + bounds_.storage_hi)) / (0.5 * bounds_.storage_span()));
  for (double p : price_window(price_lookahead)) obs.push_back((p - price_mean_) / price_std_);
  return obs;
}

}  // namespace kmpc
