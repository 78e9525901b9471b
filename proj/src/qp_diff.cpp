#include "kmpc/qp_diff.hpp"

#include <Eigen/SparseLU>

#include <limits>
#include <stdexcept>
#include <vector>

namespace kmpc {

QpGradients diff_qp(const QpProblem& qp, const QpSolution& sol, const Eigen::VectorXd& dLdx,
                    const QpDiffOptions& opt) {
  const int n = qp.n(), me = qp.me(), mi = qp.mi();
  if (dLdx.size() != n) throw std::runtime_error("diff_qp: cotangent size mismatch");
  if (!sol.ok()) throw std::runtime_error("diff_qp: QP solution not converged");

  // active set by dominant component of the complementary pair; strict
  // complementarity margin over the active rows (weakest active dual)
  std::vector<int> active;
  active.reserve(mi);
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mi; ++i) {
    if (sol.z[i] > sol.s[i]) {
      active.push_back(i);
      margin = std::min(margin, sol.z[i] + sol.s[i]);
    }
  }
  const int ma = static_cast<int>(active.size());

  // reduced KKT: [P A^T Ghat^T; A 0 0; Ghat 0 0] with +/- Tikhonov terms
  const int dim = n + me + ma;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(qp.P.nonZeros() + 2 * qp.A.nonZeros() + 2 * qp.G.nonZeros() + dim));
  for (int c = 0; c < qp.P.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.P, c); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int c = 0; c < qp.A.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.A, c); it; ++it) {
      trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
    }
  std::vector<int> act_pos(mi, -1);
  for (int a = 0; a < ma; ++a) act_pos[active[a]] = a;
  for (int c = 0; c < qp.G.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.G, c); it; ++it) {
      int a = act_pos[static_cast<int>(it.row())];
      if (a < 0) continue;
      trips.emplace_back(n + me + a, static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()), n + me + a, it.value());
    }
  for (int i = 0; i < dim; ++i) trips.emplace_back(i, i, i < n ? opt.reg : -opt.reg);

  SpMat K(dim, dim);
  K.setFromTriplets(trips.begin(), trips.end());
  K.makeCompressed();

  Eigen::SparseLU<SpMat> lu;
  lu.analyzePattern(K);
  lu.factorize(K);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error("diff_qp: adjoint KKT system is singular (degenerate active set)");

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  rhs.head(n) = dLdx;
  // the regularized factorization preconditions refinement against the true
  // (unregularized) KKT operator; at degenerate active sets refinement stops
  // improving and the Tikhonov-regularized solution is kept as a subgradient
  Eigen::VectorXd reg_diag(dim);
  for (int i = 0; i < dim; ++i) reg_diag[i] = i < n ? opt.reg : -opt.reg;
  Eigen::VectorXd sv = lu.solve(rhs);
  Eigen::VectorXd best = sv;
  double best_res = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 8; ++pass) {
    Eigen::VectorXd res = K * sv - reg_diag.cwiseProduct(sv) - rhs;
    double rn = res.cwiseAbs().maxCoeff();
    if (rn < best_res && sv.allFinite()) {
      best_res = rn;
      best = sv;
    }
    if (rn < 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()) || rn > 2.0 * best_res) break;
    sv -= lu.solve(res);
  }
  sv = best;
  if (!sv.allFinite()) throw std::runtime_error("diff_qp: adjoint solve produced non-finite values");

  Eigen::VectorXd sx = sv.head(n);
  Eigen::VectorXd sy = sv.segment(n, me);
  Eigen::VectorXd sz = sv.tail(ma);

  // dL/dp = -s^T dF/dp at the solution
  QpGradients g;
  g.strict_comp_margin = margin;
  g.dq = -sx;
  g.db = sy;
  g.dh = Eigen::VectorXd::Zero(mi);
  for (int a = 0; a < ma; ++a) g.dh[active[a]] = sz[a];

  g.dP = qp.P;
  for (int c = 0; c < g.dP.outerSize(); ++c)
    for (SpMat::InnerIterator it(g.dP, c); it; ++it)
      it.valueRef() = -sx[it.row()] * sol.x[it.col()];
  g.dA = qp.A;
  for (int c = 0; c < g.dA.outerSize(); ++c)
    for (SpMat::InnerIterator it(g.dA, c); it; ++it)
      it.valueRef() = -(sx[it.col()] * sol.y[it.row()] + sy[it.row()] * sol.x[it.col()]);
  g.dG = qp.G;
  for (int c = 0; c < g.dG.outerSize(); ++c)
    for (SpMat::InnerIterator it(g.dG, c); it; ++it) {
      int a = act_pos[static_cast<int>(it.row())];
      it.valueRef() = a < 0 ? 0.0 : -(sx[it.col()] * sol.z[it.row()] + sz[a] * sol.x[it.col()]);
    }
  return g;
}

}  // namespace kmpc
