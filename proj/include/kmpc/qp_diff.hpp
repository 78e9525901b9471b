#pragma once

#include "kmpc/qp.hpp"

namespace kmpc {

struct QpDiffOptions {
  // Tikhonov guard on the adjoint KKT factorization. The partial-pivoting LU
  // backend stays stable with a tiny guard, and iterative refinement against
  // the unregularized operator needs reg * ||K^-1|| << 1 to converge on
  // ill-conditioned active sets, so the default is well below the duals'
  // scale.
  double reg = 1e-11;
  double active_tol = 1e-7;  // strict-complementarity margin, min_i (z_i + s_i)
};

// Gradients of a scalar loss L with respect to the QP data, given dL/dx* at
// the primal solution. Matrix gradients are restricted to the structural
// nonzeros of the corresponding input and share its sparsity pattern.
struct QpGradients {
  Eigen::VectorXd dq;
  Eigen::VectorXd db;
  Eigen::VectorXd dh;
  SpMat dP;
  SpMat dA;
  SpMat dG;
  double strict_comp_margin = 0.0;  // min over active rows of (z_i + s_i)
};

// Implicit differentiation through the KKT conditions at the solution:
// inequality rows with z_i > s_i are treated as active equalities, the rest
// are dropped, and the adjoint system is solved once. Throws when the adjoint
// KKT system stays singular after regularization (degenerate active set).
QpGradients diff_qp(const QpProblem& qp, const QpSolution& sol, const Eigen::VectorXd& dLdx,
                    const QpDiffOptions& opt = {});

}  // namespace kmpc
