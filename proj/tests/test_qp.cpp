#include "doctest.h"

#include <Eigen/Dense>

#include "admm_oracle.hpp"
#include "fd_check.hpp"
#include "kmpc/qp.hpp"
#include "kmpc/qp_diff.hpp"
#include "kmpc/rng.hpp"

using namespace kmpc;
using kmpc_test::admm_solve;
using kmpc_test::random_qp;

namespace {

QpProblem box_1d(double plo, double phi, double pq, double pp) {
  // min 1/2 pp u^2 + pq u  s.t.  plo <= u <= phi
  QpProblem qp;
  qp.P = SpMat(1, 1);
  qp.P.insert(0, 0) = pp;
  qp.q = Eigen::VectorXd::Constant(1, pq);
  qp.A = SpMat(0, 1);
  qp.b = Eigen::VectorXd(0);
  qp.G = SpMat(2, 1);
  qp.G.insert(0, 0) = 1.0;
  qp.G.insert(1, 0) = -1.0;
  qp.h = Eigen::VectorXd(2);
  qp.h << phi, -plo;
  qp.P.makeCompressed();
  qp.G.makeCompressed();
  return qp;
}

}  // namespace

TEST_CASE("clipped unconstrained optimum: min (u-3)^2 on [0,2]") {
  // (u-3)^2 = u^2 - 6u + 9 -> P=2, q=-6
  auto qp = box_1d(0.0, 2.0, -6.0, 2.0);
  auto sol = solve_qp(qp);
  REQUIRE(sol.ok());
  CHECK(sol.x[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("KKT by hand: min u^2 s.t. u >= 1 gives u*=1 with active dual 2") {
  QpProblem qp;
  qp.P = SpMat(1, 1);
  qp.P.insert(0, 0) = 2.0;
  qp.q = Eigen::VectorXd::Zero(1);
  qp.A = SpMat(0, 1);
  qp.b = Eigen::VectorXd(0);
  qp.G = SpMat(1, 1);
  qp.G.insert(0, 0) = -1.0;
  qp.h = Eigen::VectorXd::Constant(1, -1.0);
  qp.P.makeCompressed();
  qp.G.makeCompressed();
  QpOptions opt;
  opt.tol = 1e-12;
  auto sol = solve_qp(qp, opt);
  REQUIRE(sol.ok());
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.z[0] == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("50 random strictly convex QPs match the ADMM oracle within 1e-5") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    int n = static_cast<int>(rng.uniform_int(4, 60));
    int me = static_cast<int>(rng.uniform_int(0, n / 4));
    int mi = static_cast<int>(rng.uniform_int(2, n));
    auto qp = random_qp(rng, n, me, mi);
    auto sol = solve_qp(qp);
    REQUIRE_MESSAGE(sol.ok(), "trial ", trial, " status ", qp_status_str(sol.status));
    CHECK(sol.res_stat < 1e-8);
    CHECK(sol.res_eq < 1e-8);
    CHECK(sol.res_ineq < 1e-8);
    CHECK(sol.max_comp < 1e-6);

    auto oracle = admm_solve(qp);
    REQUIRE_MESSAGE(oracle.converged, "ADMM did not converge on trial ", trial);
    double err = (sol.x - oracle.x).cwiseAbs().maxCoeff() / std::max(1.0, oracle.x.cwiseAbs().maxCoeff());
    CHECK_MESSAGE(err < 1e-5, "trial ", trial, " err ", err);
  }
}

TEST_CASE("iteration cap reports residuals instead of looping") {
  Rng rng(5);
  auto qp = random_qp(rng, 20, 4, 15);
  QpOptions opt;
  opt.max_iters = 1;
  auto sol = solve_qp(qp, opt);
  CHECK(sol.status == QpStatus::MaxIterations);
  CHECK(sol.res_stat >= 0.0);
}

TEST_CASE("solver cache: repeated solves with same pattern stay correct") {
  Rng rng(31);
  QpSolver solver;
  auto qp = random_qp(rng, 24, 5, 20);
  auto s1 = solver.solve(qp);
  REQUIRE(s1.ok());
  // new values, same pattern
  qp.q.setRandom();
  qp.h.array() += 0.5;
  auto s2 = solver.solve(qp);
  REQUIRE(s2.ok());
  auto oracle = admm_solve(qp);
  REQUIRE(oracle.converged);
  CHECK((s2.x - oracle.x).cwiseAbs().maxCoeff() < 1e-5);

  // changing constraint matrix VALUES (pattern unchanged) must not reuse
  // stale products
  for (int c = 0; c < qp.G.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.G, c); it; ++it) it.valueRef() *= 1.3;
  for (int c = 0; c < qp.A.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.A, c); it; ++it) it.valueRef() *= 0.7;
  qp.b *= 0.7;  // keep the equality system consistent with a feasible point
  auto s3 = solver.solve(qp);
  REQUIRE(s3.ok());
  auto oracle3 = admm_solve(qp);
  REQUIRE(oracle3.converged);
  CHECK((s3.x - oracle3.x).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("diff_qp unconstrained: dL/dq equals -Q^{-1} cotangent to 1e-8") {
  Rng rng(77);
  int n = 8;
  Eigen::MatrixXd R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = rng.normal();
  Eigen::MatrixXd Q = R * R.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);

  QpProblem qp;
  qp.P = Q.sparseView();
  qp.P.makeCompressed();
  qp.q = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return rng.normal(); });
  qp.A = SpMat(0, n);
  qp.b = Eigen::VectorXd(0);
  qp.G = SpMat(0, n);
  qp.h = Eigen::VectorXd(0);

  QpOptions opt;
  opt.tol = 1e-12;
  auto sol = solve_qp(qp, opt);
  REQUIRE(sol.ok());

  Eigen::MatrixXd Qinv = Q.inverse();
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd cot = Eigen::VectorXd::Zero(n);
    cot[i] = 1.0;
    auto g = diff_qp(qp, sol, cot);
    for (int j = 0; j < n; ++j) CHECK(g.dq[j] == doctest::Approx(-Qinv(i, j)).epsilon(1e-8));
  }
}

TEST_CASE("diff_qp: clamped coordinate has zero sensitivity to q") {
  // min (u-3)^2 on [0,2]: upper bound active with dual 2 > 0
  auto qp = box_1d(0.0, 2.0, -6.0, 2.0);
  QpOptions opt;
  opt.tol = 1e-12;
  auto sol = solve_qp(qp, opt);
  REQUIRE(sol.ok());
  auto g = diff_qp(qp, sol, Eigen::VectorXd::Constant(1, 1.0));
  CHECK(std::fabs(g.dq[0]) < 1e-8);
  // and dL/dh on the active row is nonzero (moving the bound moves u*)
  CHECK(std::fabs(g.dh[0]) > 0.5);
}

TEST_CASE("diff_qp matches finite differences through q, b, h and matrix entries") {
  Rng rng(123);
  int checked = 0;
  for (int trial = 0; trial < 12 && checked < 6; ++trial) {
    int n = static_cast<int>(rng.uniform_int(5, 14));
    int me = static_cast<int>(rng.uniform_int(1, 3));
    int mi = static_cast<int>(rng.uniform_int(3, 8));
    auto qp = random_qp(rng, n, me, mi);
    QpOptions opt;
    opt.tol = 1e-12;
    auto sol = solve_qp(qp, opt);
    if (!sol.ok()) continue;

    Eigen::VectorXd cot(n);
    for (int i = 0; i < n; ++i) cot[i] = rng.normal();
    QpGradients g;
    try {
      g = diff_qp(qp, sol, cot);
    } catch (const std::runtime_error&) {
      continue;
    }
    if (g.strict_comp_margin < 1e-5) continue;  // degenerate instance, skip per the filter rule
    ++checked;

    auto loss_at = [&](const QpProblem& pqp) {
      auto s = solve_qp(pqp, opt);
      REQUIRE(s.ok());
      return cot.dot(s.x);
    };

    const double eps = 1e-6;
    // q direction
    {
      Eigen::VectorXd d(n);
      for (int i = 0; i < n; ++i) d[i] = rng.normal();
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.q += eps * d;
      qp_m.q -= eps * d;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      double an = g.dq.dot(d);
      CHECK(std::fabs(fd - an) < 1e-5 * std::max(1.0, std::fabs(fd)));
    }
    // b direction
    {
      Eigen::VectorXd d(me);
      for (int i = 0; i < me; ++i) d[i] = rng.normal();
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.b += eps * d;
      qp_m.b -= eps * d;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      double an = g.db.dot(d);
      CHECK(std::fabs(fd - an) < 1e-5 * std::max(1.0, std::fabs(fd)));
    }
    // h direction
    {
      Eigen::VectorXd d(mi);
      for (int i = 0; i < mi; ++i) d[i] = rng.normal();
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.h += eps * d;
      qp_m.h -= eps * d;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      double an = g.dh.dot(d);
      CHECK(std::fabs(fd - an) < 1e-5 * std::max(1.0, std::fabs(fd)));
    }
    // random structural entry of A and of G (and P diagonal)
    {
      int r = static_cast<int>(rng.uniform_int(0, me - 1));
      int c = static_cast<int>(rng.uniform_int(0, n - 1));
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.A.coeffRef(r, c) += eps;
      qp_m.A.coeffRef(r, c) -= eps;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      CHECK(std::fabs(fd - g.dA.coeff(r, c)) < 1e-4 * std::max(1.0, std::fabs(fd)));
    }
    {
      int r = static_cast<int>(rng.uniform_int(0, mi - 1));
      int c = static_cast<int>(rng.uniform_int(0, n - 1));
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.G.coeffRef(r, c) += eps;
      qp_m.G.coeffRef(r, c) -= eps;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      CHECK(std::fabs(fd - g.dG.coeff(r, c)) < 1e-4 * std::max(1.0, std::fabs(fd)));
    }
    {
      int i = static_cast<int>(rng.uniform_int(0, n - 1));
      QpProblem qp_p = qp, qp_m = qp;
      qp_p.P.coeffRef(i, i) += eps;
      qp_m.P.coeffRef(i, i) -= eps;
      double fd = (loss_at(qp_p) - loss_at(qp_m)) / (2 * eps);
      CHECK(std::fabs(fd - g.dP.coeff(i, i)) < 1e-4 * std::max(1.0, std::fabs(fd)));
    }
  }
  CHECK(checked >= 4);
}
