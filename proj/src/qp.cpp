#include "kmpc/qp.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace kmpc {

namespace {

// Equality-KKT re-solve on the active set detected by the interior point
// iterate (rows with z > threshold * s). Returns false when the polished
// point violates an inactive constraint or active dual nonnegativity.
bool polish_solution(const QpProblem& qp, double reg, QpSolution& sol, double threshold = 1.0) {
  const int n = qp.n(), me = qp.me(), mi = qp.mi();
  std::vector<int> active;
  for (int i = 0; i < mi; ++i)
    if (sol.z[i] > threshold * sol.s[i]) active.push_back(i);
  const int ma = static_cast<int>(active.size());
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
  for (int i = 0; i < dim; ++i) trips.emplace_back(i, i, i < n ? reg : -reg);

  SpMat K(dim, dim);
  K.setFromTriplets(trips.begin(), trips.end());
  K.makeCompressed();

  Eigen::SparseLU<SpMat> lu;
  lu.analyzePattern(K);
  lu.factorize(K);
  if (lu.info() != Eigen::Success) return false;

  Eigen::VectorXd rhs(dim);
  rhs.head(n) = -qp.q;
  if (me > 0) rhs.segment(n, me) = qp.b;
  for (int a = 0; a < ma; ++a) rhs[n + me + a] = qp.h[active[a]];

  // refine against the unregularized KKT operator
  Eigen::VectorXd reg_diag(dim);
  for (int i = 0; i < dim; ++i) reg_diag[i] = i < n ? reg : -reg;
  Eigen::VectorXd sv = lu.solve(rhs);
  for (int pass = 0; pass < 6; ++pass) {
    Eigen::VectorXd res = K * sv - reg_diag.cwiseProduct(sv) - rhs;
    if (res.cwiseAbs().maxCoeff() < 1e-13 * std::max(1.0, rhs.cwiseAbs().maxCoeff())) break;
    sv -= lu.solve(res);
  }
  if (!sv.allFinite()) return false;

  Eigen::VectorXd x = sv.head(n);
  Eigen::VectorXd zfull = Eigen::VectorXd::Zero(mi);
  for (int a = 0; a < ma; ++a) zfull[active[a]] = sv[n + me + a];

  // feasibility of the polished point
  Eigen::VectorXd slack = mi > 0 ? (qp.h - qp.G * x).eval() : Eigen::VectorXd();
  for (int i = 0; i < mi; ++i) {
    if (act_pos[i] < 0 && slack[i] < -1e-9) return false;
    if (act_pos[i] >= 0 && zfull[i] < -1e-9) return false;
  }
  sol.x = x;
  if (me > 0) sol.y = sv.segment(n, me);
  sol.z = zfull.cwiseMax(0.0);
  sol.s = slack.cwiseMax(0.0);
  for (int a = 0; a < ma; ++a) sol.s[active[a]] = 0.0;
  return true;
}

}  // namespace

namespace {

// value index of entry (row, col) in a compressed column-major sparse matrix
int value_index(const SpMat& m, int row, int col) {
  const int* outer = m.outerIndexPtr();
  const int* inner = m.innerIndexPtr();
  int lo = outer[col], hi = outer[col + 1];
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (inner[mid] < row)
      lo = mid + 1;
    else
      hi = mid;
  }
  if (lo >= outer[col + 1] || inner[lo] != row) throw std::runtime_error("qp: missing KKT entry");
  return lo;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

std::string qp_status_str(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

std::vector<int> QpSolver::pattern_signature(const QpProblem& qp) {
  std::vector<int> sig{qp.n(), qp.me(), qp.mi()};
  auto push_pattern = [&sig](const SpMat& m) {
    sig.push_back(static_cast<int>(m.nonZeros()));
    sig.insert(sig.end(), m.outerIndexPtr(), m.outerIndexPtr() + m.outerSize() + 1);
    sig.insert(sig.end(), m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());
  };
  push_pattern(qp.P);
  push_pattern(qp.A);
  push_pattern(qp.G);
  return sig;
}

bool QpSolver::cache_matches(const QpProblem& qp) const {
  return cache_.valid && cache_.sig == pattern_signature(qp);
}

void QpSolver::build_cache(const QpProblem& qp, double reg) {
  const int n = qp.n(), me = qp.me(), mi = qp.mi();
  const int dim = n + me;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(qp.P.nonZeros() + 2 * qp.A.nonZeros() + dim) + 12u * qp.G.nonZeros());

  for (int c = 0; c < qp.P.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.P, c); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), 0.0);
  for (int c = 0; c < qp.A.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.A, c); it; ++it) {
      trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), 0.0);
      trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), 0.0);
    }
  for (int i = 0; i < dim; ++i) trips.emplace_back(i, i, 0.0);

  // G^T W G pattern: pairwise products within each inequality row's support.
  // Entries are referenced by position in G's value array so that later
  // solves with new values on the same pattern stay consistent.
  std::vector<std::vector<std::pair<int, int>>> rows(mi);  // (column, value position)
  {
    int pos = 0;
    for (int c = 0; c < qp.G.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.G, c); it; ++it, ++pos)
        rows[it.row()].emplace_back(static_cast<int>(it.col()), pos);
  }
  for (int k = 0; k < mi; ++k)
    for (std::size_t a = 0; a < rows[k].size(); ++a)
      for (std::size_t b = 0; b < rows[k].size(); ++b)
        trips.emplace_back(rows[k][a].first, rows[k][b].first, 0.0);

  cache_.K = SpMat(dim, dim);
  cache_.K.setFromTriplets(trips.begin(), trips.end());
  cache_.K.makeCompressed();

  // index maps for fast per-iteration value assembly
  cache_.p_idx.clear();
  for (int c = 0; c < qp.P.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.P, c); it; ++it)
      cache_.p_idx.push_back(value_index(cache_.K, static_cast<int>(it.row()), static_cast<int>(it.col())));
  cache_.a_idx.clear();
  for (int c = 0; c < qp.A.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.A, c); it; ++it) {
      cache_.a_idx.push_back(value_index(cache_.K, static_cast<int>(it.col()), n + static_cast<int>(it.row())));
      cache_.a_idx.push_back(value_index(cache_.K, n + static_cast<int>(it.row()), static_cast<int>(it.col())));
    }

  cache_.contrib_idx.clear();
  cache_.contrib_ga.clear();
  cache_.contrib_gb.clear();
  cache_.contrib_off.assign(mi + 1, 0);
  for (int k = 0; k < mi; ++k) {
    for (std::size_t a = 0; a < rows[k].size(); ++a)
      for (std::size_t b = 0; b < rows[k].size(); ++b) {
        cache_.contrib_idx.push_back(value_index(cache_.K, rows[k][a].first, rows[k][b].first));
        cache_.contrib_ga.push_back(rows[k][a].second);
        cache_.contrib_gb.push_back(rows[k][b].second);
      }
    cache_.contrib_off[k + 1] = static_cast<int>(cache_.contrib_idx.size());
  }

  cache_.diag_idx.resize(dim);
  for (int i = 0; i < dim; ++i) cache_.diag_idx[i] = value_index(cache_.K, i, i);

  cache_.base.assign(cache_.K.nonZeros(), 0.0);
  cache_.lu = std::make_unique<Eigen::SparseLU<SpMat>>();
  cache_.lu->analyzePattern(cache_.K);
  cache_.sig = pattern_signature(qp);
  cache_.valid = true;
  (void)reg;
}

QpSolution QpSolver::solve(const QpProblem& qp, const QpOptions& opt) {
  const int n = qp.n(), me = qp.me(), mi = qp.mi();
  if (qp.P.rows() != n || qp.P.cols() != n) throw std::runtime_error("qp: P dimension mismatch");
  if (qp.A.rows() != me || (me > 0 && qp.A.cols() != n)) throw std::runtime_error("qp: A dimension mismatch");
  if (qp.G.rows() != mi || (mi > 0 && qp.G.cols() != n)) throw std::runtime_error("qp: G dimension mismatch");

  if (!cache_matches(qp)) build_cache(qp, opt.reg);

  const int dim = n + me;
  double reg = opt.reg;

  // refresh base values (pattern is cached, values may differ per call)
  auto refresh_base = [&]() {
    std::fill(cache_.base.begin(), cache_.base.end(), 0.0);
    std::size_t t = 0;
    for (int c = 0; c < qp.P.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.P, c); it; ++it) cache_.base[cache_.p_idx[t++]] += it.value();
    t = 0;
    for (int c = 0; c < qp.A.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.A, c); it; ++it) {
        cache_.base[cache_.a_idx[t++]] += it.value();
        cache_.base[cache_.a_idx[t++]] += it.value();
      }
  };
  refresh_base();

  Eigen::VectorXd w = Eigen::VectorXd::Ones(mi);
  const double* gv = qp.G.valuePtr();
  auto assemble_and_factor = [&]() -> bool {
    double* vals = cache_.K.valuePtr();
    std::copy(cache_.base.begin(), cache_.base.end(), vals);
    for (int k = 0; k < mi; ++k) {
      double wk = w[k];
      for (int t2 = cache_.contrib_off[k]; t2 < cache_.contrib_off[k + 1]; ++t2)
        vals[cache_.contrib_idx[t2]] += wk * gv[cache_.contrib_ga[t2]] * gv[cache_.contrib_gb[t2]];
    }
    // static regularization keeps the factorization quasi-definite
    for (int i = 0; i < dim; ++i) vals[cache_.diag_idx[i]] += (i < n) ? reg : -reg;
    cache_.lu->factorize(cache_.K);
    return cache_.lu->info() == Eigen::Success;
  };

  // solve the augmented system; refine against the unregularized operator
  // only when the direct solve is measurably off
  auto solve_aug = [&](const Eigen::VectorXd& r1, const Eigen::VectorXd& r2, Eigen::VectorXd& dx,
                       Eigen::VectorXd& dy) {
    Eigen::VectorXd rhs(dim);
    rhs.head(n) = r1;
    if (me > 0) rhs.tail(me) = r2;
    Eigen::VectorXd sol = cache_.lu->solve(rhs);
    double refine_tol = std::min(1e-10, 0.01 * opt.tol) * std::max(1.0, inf_norm(rhs));
    for (int pass = 0; pass < 2; ++pass) {
      Eigen::VectorXd sx = sol.head(n);
      Eigen::VectorXd t1 = qp.P * sx - r1;
      if (mi > 0) t1 += qp.G.transpose() * (w.cwiseProduct(qp.G * sx));
      Eigen::VectorXd res(dim);
      if (me > 0) {
        t1 += qp.A.transpose() * sol.tail(me);
        res.head(n) = t1;
        res.tail(me) = qp.A * sx - r2;
      } else {
        res = t1;
      }
      if (inf_norm(res) < refine_tol) break;
      sol -= cache_.lu->solve(res);
    }
    dx = sol.head(n);
    dy = me > 0 ? sol.tail(me).eval() : Eigen::VectorXd();
  };

  QpSolution out;
  out.x = Eigen::VectorXd::Zero(n);
  out.y = Eigen::VectorXd::Zero(me);
  out.z = Eigen::VectorXd::Ones(mi);
  out.s = Eigen::VectorXd::Ones(mi);

  if (!assemble_and_factor()) {
    for (int attempt = 0; attempt < 4 && cache_.lu->info() != Eigen::Success; ++attempt) {
      reg *= 100.0;
      if (!assemble_and_factor()) continue;
    }
    if (cache_.lu->info() != Eigen::Success) {
      out.status = QpStatus::NumericalFailure;
      return out;
    }
  }

  // equality-constrained warm point
  solve_aug(-qp.q, qp.b, out.x, out.y);
  if (mi > 0) {
    Eigen::VectorXd v = qp.h - qp.G * out.x;
    for (int i = 0; i < mi; ++i) out.s[i] = std::max(v[i], 1.0);
  }

  auto residuals = [&](Eigen::VectorXd& rd, Eigen::VectorXd& rp, Eigen::VectorXd& rg) {
    rd = qp.P * out.x + qp.q;
    if (me > 0) rd += qp.A.transpose() * out.y;
    if (mi > 0) rd += qp.G.transpose() * out.z;
    rp = me > 0 ? (qp.A * out.x - qp.b).eval() : Eigen::VectorXd();
    rg = mi > 0 ? (qp.G * out.x + out.s - qp.h).eval() : Eigen::VectorXd();
  };

  Eigen::VectorXd rd, rp, rg;
  auto refresh_stats = [&]() {
    residuals(rd, rp, rg);
    out.res_stat = inf_norm(rd);
    out.res_eq = inf_norm(rp);
    out.res_ineq = mi > 0 ? std::max(0.0, (qp.G * out.x - qp.h).maxCoeff()) : 0.0;
    out.max_comp = mi > 0 ? (out.z.array() * out.s.array()).abs().maxCoeff() : 0.0;
  };
  auto converged = [&]() {
    double mean_comp = mi > 0 ? out.z.dot(out.s) / mi : 0.0;
    return out.res_stat <= opt.tol && out.res_eq <= opt.tol && out.res_ineq <= opt.tol &&
           (out.max_comp <= 10.0 * opt.tol || mean_comp <= opt.tol);
  };

  if (mi == 0) {
    refresh_stats();
    out.status =
        (out.res_stat <= opt.tol && out.res_eq <= opt.tol) ? QpStatus::Solved : QpStatus::NumericalFailure;
    return out;
  }

  QpSolution best = out;
  double best_merit = std::numeric_limits<double>::infinity();
  int stalls = 0;

  for (int it = 0; it < opt.max_iters; ++it) {
    residuals(rd, rp, rg);
    double mu = out.z.dot(out.s) / mi;
    out.res_stat = inf_norm(rd);
    out.res_eq = inf_norm(rp);
    out.res_ineq = inf_norm(rg);
    out.iterations = it;

    double merit = std::max({out.res_stat, out.res_eq, out.res_ineq, mu});
    if (merit < best_merit) {
      best_merit = merit;
      best = out;
    }
    if (out.res_stat <= opt.tol && out.res_eq <= opt.tol && out.res_ineq <= opt.tol && mu <= opt.tol) break;
    if (stalls >= 3 || !std::isfinite(merit)) break;

    for (int i = 0; i < mi; ++i) w[i] = std::clamp(out.z[i] / out.s[i], 1e-14, 1e14);
    if (!assemble_and_factor()) {
      reg *= 100.0;
      if (!assemble_and_factor()) break;
    }

    auto max_step = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
      return a;
    };

    // affine (predictor) direction
    Eigen::VectorXd rhs1 = -rd;
    rhs1 += qp.G.transpose() * (out.z - w.cwiseProduct(rg));
    Eigen::VectorXd dx, dy;
    solve_aug(rhs1, -rp, dx, dy);
    Eigen::VectorXd dz = -out.z + w.cwiseProduct(rg + qp.G * dx);
    Eigen::VectorXd ds = -rg - qp.G * dx;

    double a_aff = std::min(max_step(out.s, ds), max_step(out.z, dz));
    double mu_aff = (out.s + a_aff * ds).dot(out.z + a_aff * dz) / mi;
    double sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 0.0, 1.0);

    // corrector
    Eigen::VectorXd r_sz =
        (sigma * mu) * Eigen::VectorXd::Ones(mi) - out.z.cwiseProduct(out.s) - ds.cwiseProduct(dz);
    rhs1 = -rd - qp.G.transpose() * (r_sz.cwiseQuotient(out.s) + w.cwiseProduct(rg));
    solve_aug(rhs1, -rp, dx, dy);
    dz = r_sz.cwiseQuotient(out.s) + w.cwiseProduct(rg + qp.G * dx);
    ds = -rg - qp.G * dx;

    double alpha = std::min(1.0, 0.99 * std::min(max_step(out.s, ds), max_step(out.z, dz)));
    stalls = alpha < 1e-9 ? stalls + 1 : 0;
    out.x += alpha * dx;
    if (me > 0) out.y += alpha * dy;
    out.z += alpha * dz;
    out.s += alpha * ds;
  }

  {
    int iters = std::max(out.iterations, best.iterations);
    out = best;
    out.iterations = iters;
  }
  if (opt.polish) {
    QpSolution saved = out;
    bool dbg = std::getenv("KMPC_QP_DEBUG") != nullptr;
    // sweep the active-set classification threshold; keep the first polished
    // point that satisfies the full KKT conditions
    for (double threshold : {1.0, 4.0, 0.25, 16.0}) {
      QpSolution polished = saved;
      if (!polish_solution(qp, 1e-13, polished, threshold)) {
        if (dbg) std::fprintf(stderr, "[qp] polish t=%g rejected by validation\n", threshold);
        continue;
      }
      polished.iterations = saved.iterations;
      out = polished;
      refresh_stats();
      if (converged()) break;
      if (dbg)
        std::fprintf(stderr, "[qp] polish t=%g not converged: stat=%.3e eq=%.3e ineq=%.3e comp=%.3e\n", threshold,
                     out.res_stat, out.res_eq, out.res_ineq, out.max_comp);
      out = saved;
    }
  }
  refresh_stats();
  out.status = converged() ? QpStatus::Solved : QpStatus::MaxIterations;
  return out;
}

QpSolution solve_qp(const QpProblem& qp, const QpOptions& opt) {
  QpSolver solver;
  return solver.solve(qp, opt);
}

}  // namespace kmpc
