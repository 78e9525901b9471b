#include "doctest.h"

#include <cmath>

#include "fd_check.hpp"
#include "kmpc/dataset.hpp"
#include "kmpc/ocp.hpp"
#include "kmpc/policy.hpp"
#include "kmpc/si.hpp"

using namespace kmpc;

namespace {

// Norm stats that map the bound boxes to [-1, 1] and the steady state to 0.
NormStats box_stats(const PlantParams& p, const StateBounds& b) {
  NormStats ns;
  ns.state_mean = {p.c_ss, p.T_ss};
  ns.state_scale = {0.5 * b.c_span(), 0.5 * b.T_span()};
  ns.input_mean = {p.rho_ss, p.F_ss};
  ns.input_scale = {0.5 * b.rho_span(), 0.5 * b.F_span()};
  return ns;
}

// Exact surrogate of the steady state: encoder collapses to zero, A = I,
// B = 0, C = 0, so every prediction is the (normalized) steady state.
KoopmanModel steady_model(const PlantParams& p, const StateBounds& b) {
  KoopmanModel m(KoopmanArch{}, box_stats(p, b));
  Rng rng(1);
  m.init_params(rng);
  for (auto& v : m.params().at("koopman/enc/W2").v) v = 0.0;
  for (auto& v : m.params().at("koopman/enc/b2").v) v = 0.0;
  return m;
}

// Small SI-trained model shared by the solver/gradient tests.
struct TrainedFixture {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  KoopmanModel model;

  TrainedFixture() {
    DatasetConfig dcfg;
    dcfg.n_traj = 14;
    dcfg.steps = 240;
    dcfg.n_train = 10;
    Rng rng(404);
    TrajectoryDataset data = generate_dataset(params, bounds, dcfg, rng);
    model = KoopmanModel(KoopmanArch{}, data.stats);
    Rng mrng(405);
    model.init_params(mrng);
    std::vector<std::array<double, 2>> init_states;
    for (int k = 0; k < dcfg.steps; k += 5)
      init_states.push_back(data.stats.norm_state(data.states[0].at(k, 0), data.states[0].at(k, 1)));
    model.init_decoder(init_states);
    SiConfig cfg;
    cfg.epochs = 25;
    cfg.patience = 25;
    cfg.batches_per_epoch = 60;
    cfg.batch = 64;
    cfg.curriculum = false;
    cfg.lr_decay = 1.0;
    cfg.seed = 406;
    train_si(model, data, cfg);
  }
};

TrainedFixture& fixture() {
  static TrainedFixture f;
  return f;
}

std::vector<double> flat_params(const ParamRegistry& reg) {
  std::vector<double> out;
  for (const auto& [name, t] : reg) out.insert(out.end(), t.v.begin(), t.v.end());
  return out;
}

void set_params(ParamRegistry& reg, const std::vector<double>& flat) {
  std::size_t off = 0;
  for (auto& [name, t] : reg) {
    std::copy(flat.begin() + off, flat.begin() + off + t.v.size(), t.v.begin());
    off += t.v.size();
  }
}

}  // namespace

TEST_CASE("layout: H=1 has 2 control variables and 4 latent substep blocks") {
  OcpSpec spec;
  spec.horizon = 1;
  OcpLayout L = make_ocp_layout(spec, 8);
  CHECK(L.off_z - L.off_u == 2);            // control variables
  CHECK(L.off_st - L.off_z == 8 * (4 + 1));  // z_0 plus 4 substep blocks
  CHECK(L.K == 4);
  CHECK(L.n == 2 + 40 + 1 + 8 + 1);
  CHECK(L.me == 8 + 32 + 1);
}

TEST_CASE("steady state with constant prices admits the steady feasible point") {
  PlantParams p = PlantParams::defaults();
  StateBounds b = StateBounds::from_params(p);
  KoopmanModel m = steady_model(p, b);
  OcpSpec spec;
  OcpLayout L = make_ocp_layout(spec, 8);
  OcpBounds bc = make_ocp_bounds(spec, m.norm(), b, p);

  OcpInputs in;
  in.z0 = m.encode_raw(m.norm().norm_state(p.c_ss, p.T_ss));
  in.storage_norm = 0.0;  // mid storage
  in.prices.assign(spec.horizon, 10.0);
  QpProblem qp = build_ocp_qp(spec, L, bc, m.A(), m.B(), m.C(), in);

  // candidate: u = u_ss (normalized 0), z = 0, st = 0, slacks = 0
  Eigen::VectorXd x = Eigen::VectorXd::Zero(L.n);
  Eigen::VectorXd eq_res = qp.A * x - qp.b;
  CHECK(eq_res.cwiseAbs().maxCoeff() < 1e-12);
  Eigen::VectorXd ineq = qp.G * x - qp.h;
  CHECK(ineq.maxCoeff() < 1e-12);
}

TEST_CASE("doubling the slack penalty changes only the objective") {
  PlantParams p = PlantParams::defaults();
  StateBounds b = StateBounds::from_params(p);
  KoopmanModel m = steady_model(p, b);
  OcpSpec s1;
  OcpSpec s2 = s1;
  s2.slack_penalty *= 2.0;
  OcpLayout L = make_ocp_layout(s1, 8);
  OcpInputs in;
  in.z0 = m.encode_raw({0.1, -0.2});
  in.storage_norm = 0.3;
  in.prices.assign(s1.horizon, 5.0);
  QpProblem q1 = build_ocp_qp(s1, L, make_ocp_bounds(s1, m.norm(), b, p), m.A(), m.B(), m.C(), in);
  QpProblem q2 = build_ocp_qp(s2, L, make_ocp_bounds(s2, m.norm(), b, p), m.A(), m.B(), m.C(), in);
  CHECK((q1.h - q2.h).cwiseAbs().maxCoeff() == 0.0);
  CHECK((q1.b - q2.b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::MatrixXd(q1.G - q2.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::MatrixXd(q1.A - q2.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::MatrixXd(q1.P - q2.P).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("OCP is feasible and solvable on random state/price draws") {
  auto& f = fixture();
  MpcPolicy policy(f.model, OcpSpec{}, f.bounds, f.params);
  Rng rng(7);
  for (int i = 0; i < 60; ++i) {
    PlantState s;
    s.c = rng.uniform(f.bounds.c_lo, f.bounds.c_hi);
    s.T = rng.uniform(f.bounds.T_lo, f.bounds.T_hi);
    s.storage = rng.uniform(0.0, 6.0);
    std::vector<double> prices(9);
    for (auto& p : prices) p = rng.uniform(0.0, 30.0);
    ControlInput u = policy.act(s, prices, false, nullptr);
    CHECK(u.rho >= f.bounds.rho_lo);
    CHECK(u.rho <= f.bounds.rho_hi);
    CHECK(u.F >= f.bounds.F_lo);
    CHECK(u.F <= f.bounds.F_hi);
  }
  CHECK(policy.qp_solve_count() == 60);
}

TEST_CASE("complementary slackness at the solution") {
  auto& f = fixture();
  OcpSpec spec;
  OcpLayout L = make_ocp_layout(spec, 8);
  OcpBounds bc = make_ocp_bounds(spec, f.model.norm(), f.bounds, f.params);
  Rng rng(8);
  QpSolver solver;
  for (int i = 0; i < 10; ++i) {
    OcpInputs in;
    in.z0 = f.model.encode_raw(
        f.model.norm().norm_state(rng.uniform(f.bounds.c_lo, f.bounds.c_hi), rng.uniform(f.bounds.T_lo, f.bounds.T_hi)));
    in.storage_norm = rng.uniform(-1.0, 1.0);
    in.prices.assign(spec.horizon, 0.0);
    for (auto& p : in.prices) p = rng.uniform(2.0, 25.0);
    QpProblem qp = build_ocp_qp(spec, L, bc, f.model.A(), f.model.B(), f.model.C(), in);
    QpSolution sol = solver.solve(qp, spec.solver);
    REQUIRE(sol.ok());
    CHECK(sol.max_comp < 1e-6);
  }
}

TEST_CASE("uniform price increase does not increase total planned cooling") {
  auto& f = fixture();
  OcpSpec spec;
  OcpLayout L = make_ocp_layout(spec, 8);
  OcpBounds bc = make_ocp_bounds(spec, f.model.norm(), f.bounds, f.params);
  Rng rng(9);
  QpSolver solver;
  for (int i = 0; i < 50; ++i) {
    OcpInputs in;
    in.z0 = f.model.encode_raw(
        f.model.norm().norm_state(rng.uniform(f.bounds.c_lo, f.bounds.c_hi), rng.uniform(f.bounds.T_lo, f.bounds.T_hi)));
    in.storage_norm = rng.uniform(-0.8, 0.8);
    in.prices.assign(spec.horizon, 0.0);
    for (auto& p : in.prices) p = rng.uniform(1.0, 20.0);

    QpProblem qp = build_ocp_qp(spec, L, bc, f.model.A(), f.model.B(), f.model.C(), in);
    QpSolution s1 = solver.solve(qp, spec.solver);
    REQUIRE(s1.ok());

    OcpInputs in2 = in;
    double bump = rng.uniform(1.0, 10.0);
    for (auto& p : in2.prices) p += bump;
    QpProblem qp2 = build_ocp_qp(spec, L, bc, f.model.A(), f.model.B(), f.model.C(), in2);
    QpSolution s2 = solver.solve(qp2, spec.solver);
    REQUIRE(s2.ok());

    double F1 = 0.0, F2 = 0.0;
    for (int k = 0; k < L.H; ++k) {
      F1 += s1.x[L.u(k, 1)];
      F2 += s2.x[L.u(k, 1)];
    }
    CHECK(F2 <= F1 + 1e-6);
  }
}

TEST_CASE("policy determinism and exploration contract") {
  auto& f = fixture();
  MpcPolicy policy(f.model, OcpSpec{}, f.bounds, f.params);
  PlantState s{0.14, 0.74, 2.0};
  std::vector<double> prices(9, 12.0);
  prices[3] = 2.0;

  ControlInput u1 = policy.act(s, prices, false, nullptr);
  ControlInput u2 = policy.act(s, prices, false, nullptr);
  CHECK(u1.rho == u2.rho);
  CHECK(u1.F == u2.F);

  // sigma = 0 exploration equals the deterministic policy
  MpcPolicy p0(f.model, OcpSpec{}, f.bounds, f.params);
  p0.set_sigma_frac(0.0);
  Rng rng(3);
  ControlInput u3 = p0.act(s, prices, true, &rng);
  CHECK(u3.rho == doctest::Approx(u1.rho).epsilon(1e-12));
  CHECK(u3.F == doctest::Approx(u1.F).epsilon(1e-12));

  // huge noise still lands inside the box
  MpcPolicy pn(f.model, OcpSpec{}, f.bounds, f.params);
  pn.set_sigma_frac(5.0);
  Rng rng2(4);
  for (int i = 0; i < 20; ++i) {
    ControlInput u = pn.act(s, prices, true, &rng2);
    CHECK(u.rho >= f.bounds.rho_lo);
    CHECK(u.rho <= f.bounds.rho_hi);
    CHECK(u.F >= f.bounds.F_lo);
    CHECK(u.F <= f.bounds.F_hi);
  }
}

namespace {

// strict-complementarity margin of the policy's OCP at the given instance
double instance_margin(const KoopmanModel& model, const OcpSpec& spec, const StateBounds& bounds,
                       const PlantParams& params, const PlantState& state, const std::vector<double>& prices) {
  OcpLayout L = make_ocp_layout(spec, model.arch().latent_dim);
  OcpBounds bc = make_ocp_bounds(spec, model.norm(), bounds, params);
  OcpInputs in;
  in.z0 = model.encode_raw(model.norm().norm_state(state.c, state.T));
  in.storage_norm = (state.storage - 3.0) / 3.0;
  in.prices = prices;
  QpProblem qp = build_ocp_qp(spec, L, bc, model.A(), model.B(), model.C(), in);
  QpSolution sol = solve_qp(qp, spec.solver);
  if (!sol.ok()) return 0.0;
  Eigen::VectorXd cot = Eigen::VectorXd::Zero(L.n);
  cot[L.u(0, 0)] = 1.0;
  try {
    return diff_qp(qp, sol, cot, spec.diff).strict_comp_margin;
  } catch (const std::runtime_error&) {
    return 0.0;
  }
}

}  // namespace

TEST_CASE("full policy gradient dL/dtheta matches finite differences on non-degenerate instances") {
  auto& f = fixture();
  OcpSpec spec;
  spec.solver.tol = 1e-9;

  Rng rng(31);
  std::vector<double> cot{0.8, -0.5};
  int instances_checked = 0, directions_checked = 0;
  for (int trial = 0; trial < 200 && instances_checked < 3; ++trial) {
    // bias half the draws toward the upper temperature bound, where state
    // constraints pin the first move to an interior value and gradients flow
    PlantState state;
    state.c = rng.uniform(f.bounds.c_lo + 0.2 * f.bounds.c_span(), f.bounds.c_hi - 0.2 * f.bounds.c_span());
    if (trial % 2 == 0)
      state.T = rng.uniform(f.bounds.T_hi - 0.25 * f.bounds.T_span(), f.bounds.T_hi - 0.02 * f.bounds.T_span());
    else
      state.T = rng.uniform(f.bounds.T_lo + 0.1 * f.bounds.T_span(), f.bounds.T_hi - 0.1 * f.bounds.T_span());
    state.storage = rng.uniform(1.0, 5.0);
    std::vector<double> prices(9);
    for (auto& p : prices) p = rng.uniform(2.0, 25.0);
    if (trial % 2 == 0) prices[0] = rng.uniform(15.0, 30.0);

    // require comfortable strict complementarity so the FD stencil cannot
    // cross an active-set boundary
    if (instance_margin(f.model, spec, f.bounds, f.params, state, prices) < 1e-5) continue;

    KoopmanModel model = f.model;
    MpcPolicy policy(model, spec, f.bounds, f.params);
    Tape tape;
    auto ctx = policy.bind(tape);
    int s_node = tape.constant(Tensor::vec({state.c, state.T, state.storage}));
    int u = policy.mean_node(tape, ctx, s_node, prices);
    tape.backward(tape.dot(u, tape.constant(Tensor::vec(cot))));
    std::vector<double> gflat = flatten_grads(model.params(), tape.leaf_grads());

    double gnorm_probe = 0.0;
    for (double v : gflat) gnorm_probe += v * v;
    gnorm_probe = std::sqrt(gnorm_probe);
    if (gnorm_probe < 1.0) continue;  // box-saturated or noise-level gradient, no signal to compare
    if (gnorm_probe > 1e9) continue;  // ill-conditioned KKT geometry, degenerate
    ++instances_checked;

    auto loss_at = [&](const std::vector<double>& theta) {
      KoopmanModel m2 = f.model;
      set_params(m2.params(), theta);
      MpcPolicy p2(m2, spec, f.bounds, f.params);
      Tape t2;
      auto c2 = p2.bind(t2);
      int sn = t2.constant(Tensor::vec({state.c, state.T, state.storage}));
      int u2 = p2.mean_node(t2, c2, sn, prices);
      return t2.val(t2.dot(u2, t2.constant(Tensor::vec(cot)))).item();
    };

    std::vector<double> theta0 = flat_params(model.params());
    double gnorm = 0.0;
    for (double v : gflat) gnorm += v * v;
    gnorm = std::sqrt(gnorm);

    for (int dir = 0; dir < 4; ++dir) {
      std::vector<double> d(theta0.size());
      for (auto& v : d) v = rng.normal();
      double norm = 0.0;
      for (double v : d) norm += v * v;
      for (auto& v : d) v /= std::sqrt(norm);

      double fd = kmpc_test::directional_diff(loss_at, theta0, d, 1e-8);
      double an = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) an += gflat[i] * d[i];
      // tolerance scaled by the overall gradient magnitude: directions nearly
      // orthogonal to the gradient have no meaningful relative error
      double denom = std::max(1e-4 * std::max(1.0, gnorm), std::max(std::fabs(fd), std::fabs(an)));
      INFO("trial ", trial, " dir ", dir, " fd ", fd, " an ", an, " gnorm ", gnorm);
      CHECK(std::fabs(fd - an) / denom < 1e-3);
      ++directions_checked;
    }
  }
  CHECK(instances_checked >= 3);
  CHECK(directions_checked >= 10);
}

TEST_CASE("policy gradient also flows into the state") {
  auto& f = fixture();
  OcpSpec spec;
  spec.solver.tol = 1e-9;
  KoopmanModel model = f.model;
  std::vector<double> cot{1.0, 0.25};

  Rng rng(37);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 2; ++trial) {
    // bias toward the upper temperature bound, where the state constraint
    // pins the first cooling move to an interior value
    PlantState state;
    state.c = rng.uniform(f.bounds.c_lo + 0.2 * f.bounds.c_span(), f.bounds.c_hi - 0.2 * f.bounds.c_span());
    state.T = rng.uniform(f.bounds.T_hi - 0.25 * f.bounds.T_span(), f.bounds.T_hi - 0.02 * f.bounds.T_span());
    state.storage = rng.uniform(1.0, 5.0);
    std::vector<double> prices(9);
    for (auto& p : prices) p = rng.uniform(2.0, 25.0);
    prices[0] = rng.uniform(15.0, 30.0);
    if (instance_margin(model, spec, f.bounds, f.params, state, prices) < 1e-5) continue;
    {
      // state gradients only flow when the first move is not box-saturated
      MpcPolicy probe(model, spec, f.bounds, f.params);
      ControlInput u0 = probe.act(state, prices, false, nullptr);
      double margin_F = std::min(u0.F - f.bounds.F_lo, f.bounds.F_hi - u0.F);
      if (margin_F < 1e-3 * f.bounds.F_span()) continue;
    }
    ++checked;

    auto loss_at = [&](const std::vector<double>& sv) {
      MpcPolicy p2(model, spec, f.bounds, f.params);
      Tape t;
      auto ctx = p2.bind(t);
      int sn = t.constant(Tensor::vec(sv));
      int u = p2.mean_node(t, ctx, sn, prices);
      return t.val(t.dot(u, t.constant(Tensor::vec(cot)))).item();
    };

    MpcPolicy policy(model, spec, f.bounds, f.params);
    std::vector<double> s0{state.c, state.T, state.storage};
    Tape t;
    auto ctx = policy.bind(t);
    int sn = t.leaf("state", Tensor::vec(s0));
    int u = policy.mean_node(t, ctx, sn, prices);
    t.backward(t.dot(u, t.constant(Tensor::vec(cot))));
    Tensor g = t.adjoint(sn);

    auto fd = kmpc_test::central_diff(loss_at, s0, 1e-8);
    double scale = std::max({1e-2, std::fabs(fd[0]), std::fabs(fd[1]), std::fabs(fd[2])});
    for (int i = 0; i < 3; ++i) {
      INFO("trial ", trial, " coord ", i, " fd ", fd[i], " an ", g.v[i]);
      CHECK(std::fabs(g.v[i] - fd[i]) / scale < 1e-3);
    }
  }
  CHECK(checked >= 2);
}
