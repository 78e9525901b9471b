#include "kmpc/policy.hpp"

#include <stdexcept>

namespace kmpc {

namespace {

// Custom tape node for the OCP solve. Forward value is the first normalized
// control block u*_0; backward maps the cotangent through the KKT adjoint to
// the dynamics matrices, the latent initial condition, and the storage state.
class OcpNode : public CustomOp {
 public:
  OcpNode(const OcpSpec& spec, OcpLayout layout, OcpBounds bc, QpProblem qp, QpSolution sol)
      : spec_(spec), layout_(layout), bc_(bc), qp_(std::move(qp)), sol_(std::move(sol)) {}

  const char* name() const override { return "ocp_solve"; }

  void backward(Tape& tape, const Tensor& out_adj, const std::vector<int>& inputs) override {
    Eigen::VectorXd cot = Eigen::VectorXd::Zero(layout_.n);
    cot[layout_.u(0, 0)] = out_adj.v[0];
    cot[layout_.u(0, 1)] = out_adj.v[1];
    QpGradients qg = diff_qp(qp_, sol_, cot, spec_.diff);
    OcpGradients og = map_ocp_gradients(spec_, layout_, bc_, qg);

    // input order: A, B, C, z0, storage_norm
    tape.accumulate_adjoint(inputs[0], og.dA);
    tape.accumulate_adjoint(inputs[1], og.dB);
    tape.accumulate_adjoint(inputs[2], og.dC);
    tape.accumulate_adjoint(inputs[3], Tensor::vec(og.dz0));
    tape.accumulate_adjoint(inputs[4], Tensor::scalar(og.dstorage_norm));
  }

 private:
  OcpSpec spec_;
  OcpLayout layout_;
  OcpBounds bc_;
  QpProblem qp_;
  QpSolution sol_;
};

}  // namespace

MpcPolicy::MpcPolicy(KoopmanModel model, OcpSpec spec, StateBounds bounds, PlantParams params)
    : model_(std::move(model)), spec_(spec), bounds_(bounds), params_(params) {
  layout_ = make_ocp_layout(spec_, model_.arch().latent_dim);
  ocp_bounds_ = make_ocp_bounds(spec_, model_.norm(), bounds_, params_);
}

std::array<double, 2> MpcPolicy::explore_std() const {
  return {sigma_frac_ * bounds_.rho_span(), sigma_frac_ * bounds_.F_span()};
}

int MpcPolicy::mean_node(Tape& tape, const TapeCtx& ctx, int state_node, const std::vector<double>& prices) {
  if (static_cast<int>(prices.size()) != spec_.horizon)
    throw std::runtime_error("policy: price forecast length " + std::to_string(prices.size()) + " != horizon " +
                             std::to_string(spec_.horizon));
  const NormStats& ns = model_.norm();

  int x_ct = tape.slice(state_node, 0, 2);
  int x_norm = tape.mul(tape.sub(x_ct, tape.constant(Tensor::vec({ns.state_mean[0], ns.state_mean[1]}))),
                        tape.constant(Tensor::vec({1.0 / ns.state_scale[0], 1.0 / ns.state_scale[1]})));
  int z0 = model_.encode_node(tape, ctx.lv, x_norm);

  double st_mid = 0.5 * (bounds_.storage_lo + bounds_.storage_hi);
  double st_half = 0.5 * bounds_.storage_span();
  int storage_norm = tape.scale(tape.shift(tape.slice(state_node, 2, 3), -st_mid), 1.0 / st_half);

  OcpInputs in;
  in.z0 = tape.val(z0).v;
  in.storage_norm = tape.val(storage_norm).item();
  in.prices = prices;

  QpProblem qp = build_ocp_qp(spec_, layout_, ocp_bounds_, tape.val(ctx.lv.A), tape.val(ctx.lv.B),
                              tape.val(ctx.lv.C), in);
  QpSolution sol = solver_.solve(qp, spec_.solver);
  ++qp_solves_;
  qp_iters_ += sol.iterations;
  if (!sol.ok())
    throw std::runtime_error("policy: OCP solve failed (" + qp_status_str(sol.status) + ", stat=" +
                             std::to_string(sol.res_stat) + ", eq=" + std::to_string(sol.res_eq) + ")");

  Tensor u_norm = Tensor::vec({sol.x[layout_.u(0, 0)], sol.x[layout_.u(0, 1)]});
  int u_node = tape.custom(std::move(u_norm), {ctx.lv.A, ctx.lv.B, ctx.lv.C, z0, storage_norm},
                           std::make_unique<OcpNode>(spec_, layout_, ocp_bounds_, std::move(qp), std::move(sol)));

  // back to physical units
  return tape.add(tape.mul(u_node, tape.constant(Tensor::vec({ns.input_scale[0], ns.input_scale[1]}))),
                  tape.constant(Tensor::vec({ns.input_mean[0], ns.input_mean[1]})));
}

int MpcPolicy::act_node(Tape& tape, const TapeCtx& ctx, int state_node, const std::vector<double>& prices,
                        bool explore, Rng* rng) {
  int u = mean_node(tape, ctx, state_node, prices);
  if (explore) {
    if (!rng) throw std::runtime_error("policy: exploration requires an rng");
    auto stddev = explore_std();
    int noise = tape.constant(Tensor::vec({rng->normal(0.0, stddev[0]), rng->normal(0.0, stddev[1])}));
    u = tape.add(u, noise);
  }
  int lo = tape.constant(Tensor::vec({bounds_.rho_lo, bounds_.F_lo}));
  int hi = tape.constant(Tensor::vec({bounds_.rho_hi, bounds_.F_hi}));
  return tape.min_(tape.max_(u, lo), hi);
}

ControlInput MpcPolicy::act(const PlantState& state, const std::vector<double>& prices, bool explore, Rng* rng) {
  Tape tape;
  TapeCtx ctx = bind(tape);
  int s = tape.constant(Tensor::vec({state.c, state.T, state.storage}));
  int u = act_node(tape, ctx, s, prices, explore, rng);
  const Tensor& uv = tape.val(u);
  return ControlInput{uv.v[0], uv.v[1]};
}

}  // namespace kmpc
