#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <memory>
#include <string>
#include <vector>

namespace kmpc {

using SpMat = Eigen::SparseMatrix<double>;

// min 1/2 x'Px + q'x  s.t.  Ax = b,  Gx <= h.
// P is the full symmetric matrix (not just a triangle).
struct QpProblem {
  SpMat P;
  Eigen::VectorXd q;
  SpMat A;
  Eigen::VectorXd b;
  SpMat G;
  Eigen::VectorXd h;

  int n() const { return static_cast<int>(q.size()); }
  int me() const { return static_cast<int>(b.size()); }
  int mi() const { return static_cast<int>(h.size()); }
};

enum class QpStatus { Solved, MaxIterations, NumericalFailure };

struct QpSolution {
  Eigen::VectorXd x;  // primal
  Eigen::VectorXd y;  // equality duals
  Eigen::VectorXd z;  // inequality duals (>= 0)
  Eigen::VectorXd s;  // inequality slacks (>= 0)
  QpStatus status = QpStatus::NumericalFailure;
  int iterations = 0;
  double res_stat = 0.0;
  double res_eq = 0.0;
  double res_ineq = 0.0;
  double max_comp = 0.0;  // max_i |z_i s_i|
  bool ok() const { return status == QpStatus::Solved; }
};

struct QpOptions {
  double tol = 1e-8;
  int max_iters = 100;
  double reg = 1e-11;  // static regularization of the KKT factorization
  // After interior-point convergence, re-solve the equality KKT on the
  // detected active set; accepted only when it stays primal/dual feasible.
  // Gives machine-precision solutions aligned with the active set used by
  // implicit differentiation.
  bool polish = true;
};

// Primal-dual interior point (Mehrotra predictor-corrector) on the reduced
// augmented system, factored with a sparse LDL^T. The symbolic analysis and
// assembly index maps are cached, so a solver instance amortizes setup cost
// across repeated solves of structurally identical problems.
class QpSolver {
 public:
  QpSolution solve(const QpProblem& qp, const QpOptions& opt = {});

 private:
  struct Cache {
    SpMat K;                        // augmented matrix [P+G'WG, A'; A, -reg]
    std::vector<double> base;       // K values with all inequality weights zero
    std::vector<int> contrib_idx;   // per G-row pair contributions into K
    std::vector<int> contrib_ga;    // positions into G's value array
    std::vector<int> contrib_gb;
    std::vector<int> contrib_off;   // offsets per inequality row
    std::vector<int> a_idx;         // value indices of the A / A^T blocks
    std::vector<int> p_idx;         // value indices of the P entries
    std::vector<int> diag_idx;      // value indices of the diagonal
    std::unique_ptr<Eigen::SparseLU<SpMat>> lu;  // wrapped: SparseLU is not movable
    // pattern signature
    std::vector<int> sig;
    bool valid = false;
  };

  void build_cache(const QpProblem& qp, double reg);
  bool cache_matches(const QpProblem& qp) const;
  static std::vector<int> pattern_signature(const QpProblem& qp);

  Cache cache_;
};

// One-shot convenience wrapper.
QpSolution solve_qp(const QpProblem& qp, const QpOptions& opt = {});

std::string qp_status_str(QpStatus s);

}  // namespace kmpc
