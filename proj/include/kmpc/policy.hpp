#pragma once

#include <memory>
#include <vector>

#include "kmpc/env.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/ocp.hpp"

namespace kmpc {

// Differentiable eNMPC policy: encodes the plant state, builds and solves the
// convex OCP, and exposes the first control move as a tape node whose
// backward pass runs implicit differentiation of the KKT system.
//
// Instances hold solver caches; use one instance per worker thread. Distinct
// tapes may be used for consecutive calls on the same instance.
class MpcPolicy {
 public:
  MpcPolicy(KoopmanModel model, OcpSpec spec, StateBounds bounds, PlantParams params);

  struct TapeCtx {
    KoopmanLeaves lv;
  };
  TapeCtx bind(Tape& tape) const { return TapeCtx{model_.bind(tape)}; }

  // Deterministic policy mean in physical units (2-vector node).
  int mean_node(Tape& tape, const TapeCtx& ctx, int state_node, const std::vector<double>& prices);
  // Applied control: mean plus optional exploration noise, clipped to the box.
  int act_node(Tape& tape, const TapeCtx& ctx, int state_node, const std::vector<double>& prices, bool explore,
               Rng* rng);

  // Off-tape convenience for evaluation and rollouts without gradients.
  ControlInput act(const PlantState& state, const std::vector<double>& prices, bool explore, Rng* rng);

  KoopmanModel& model() { return model_; }
  const KoopmanModel& model() const { return model_; }
  const OcpSpec& spec() const { return spec_; }
  const OcpLayout& layout() const { return layout_; }
  const StateBounds& bounds() const { return bounds_; }
  const PlantParams& params() const { return params_; }
  std::array<double, 2> explore_std() const;  // per-channel noise, physical units
  double sigma_frac() const { return sigma_frac_; }
  void set_sigma_frac(double f) { sigma_frac_ = f; }

  long qp_solve_count() const { return qp_solves_; }
  long qp_iteration_count() const { return qp_iters_; }

 private:
  friend class OcpNode;
  KoopmanModel model_;
  OcpSpec spec_;
  StateBounds bounds_;
  PlantParams params_;
  OcpLayout layout_;
  OcpBounds ocp_bounds_;
  double sigma_frac_ = 0.02;
  QpSolver solver_;
  long qp_solves_ = 0;
  long qp_iters_ = 0;
};

}  // namespace kmpc
