#include "kmpc/ocp.hpp"

#include <cmath>
#include <stdexcept>

namespace kmpc {

OcpLayout make_ocp_layout(const OcpSpec& spec, int latent_dim) {
  OcpLayout L;
  L.H = spec.horizon;
  L.S = spec.substeps;
  L.K = L.H * L.S;
  L.d = latent_dim;

  L.off_u = 0;
  L.off_z = 2 * L.H;
  L.off_st = L.off_z + L.d * (L.K + 1);
  L.off_sct = L.off_st + L.H;
  L.off_sst = L.off_sct + 2 * L.K;
  L.n = L.off_sst + L.H;

  L.row_z0 = 0;
  L.row_dyn = L.d;
  L.row_st = L.row_dyn + L.d * L.K;
  L.me = L.row_st + L.H;

  L.irow_ub = 0;
  L.irow_lb = L.irow_ub + 2 * L.K;
  L.irow_st_ub = L.irow_lb + 2 * L.K;
  L.irow_st_lb = L.irow_st_ub + L.H;
  L.irow_ubox = L.irow_st_lb + L.H;
  L.irow_snn = L.irow_ubox + 4 * L.H;
  L.mi = L.irow_snn + 2 * L.K + L.H;
  return L;
}

OcpBounds make_ocp_bounds(const OcpSpec& spec, const NormStats& stats, const StateBounds& bounds,
                          const PlantParams& params) {
  OcpBounds bc;
  bc.c_lo = (bounds.c_lo - stats.state_mean[0]) / stats.state_scale[0];
  bc.c_hi = (bounds.c_hi - stats.state_mean[0]) / stats.state_scale[0];
  bc.T_lo = (bounds.T_lo - stats.state_mean[1]) / stats.state_scale[1];
  bc.T_hi = (bounds.T_hi - stats.state_mean[1]) / stats.state_scale[1];
  auto ulo = stats.norm_input(bounds.rho_lo, bounds.F_lo);
  auto uhi = stats.norm_input(bounds.rho_hi, bounds.F_hi);
  bc.u_lo[0] = ulo[0];
  bc.u_lo[1] = ulo[1];
  bc.u_hi[0] = uhi[0];
  bc.u_hi[1] = uhi[1];
  auto uss = stats.norm_input(params.rho_ss, params.F_ss);
  bc.u_ss[0] = uss[0];
  bc.u_ss[1] = uss[1];

  double st_mid = 0.5 * (bounds.storage_lo + bounds.storage_hi);
  double st_half = 0.5 * bounds.storage_span();
  bc.rho_coef = spec.dt_ctrl * stats.input_scale[0] / st_half;
  bc.rho_rhs = spec.dt_ctrl * (stats.input_mean[0] - params.rho_ss) / st_half;
  (void)st_mid;

  bc.price_coef = spec.alpha * spec.dt_ctrl * stats.input_scale[1];
  return bc;
}

QpProblem build_ocp_qp(const OcpSpec& spec, const OcpLayout& L, const OcpBounds& bc, const Tensor& A,
                       const Tensor& B, const Tensor& C, const OcpInputs& in) {
  if (!A.all_finite() || !B.all_finite() || !C.all_finite())
    throw std::runtime_error("ocp: non-finite model parameters");
  if (static_cast<int>(in.prices.size()) != L.H) throw std::runtime_error("ocp: price forecast length mismatch");
  if (static_cast<int>(in.z0.size()) != L.d) throw std::runtime_error("ocp: latent init dimension mismatch");

  QpProblem qp;
  const int d = L.d;

  // objective
  std::vector<Eigen::Triplet<double>> pt;
  qp.q = Eigen::VectorXd::Zero(L.n);
  for (int k = 0; k < L.H; ++k) {
    for (int ch = 0; ch < 2; ++ch) {
      pt.emplace_back(L.u(k, ch), L.u(k, ch), 2.0 * spec.control_reg);
      qp.q[L.u(k, ch)] += -2.0 * spec.control_reg * bc.u_ss[ch];
    }
    qp.q[L.u(k, 1)] += bc.price_coef * in.prices[k];
  }
  for (int j = 1; j <= L.K; ++j)
    for (int ch = 0; ch < 2; ++ch) pt.emplace_back(L.sct(j, ch), L.sct(j, ch), 2.0 * spec.slack_penalty);
  for (int k = 1; k <= L.H; ++k) pt.emplace_back(L.sst(k), L.sst(k), 2.0 * spec.slack_penalty);
  qp.P = SpMat(L.n, L.n);
  qp.P.setFromTriplets(pt.begin(), pt.end());
  qp.P.makeCompressed();

  // equalities
  std::vector<Eigen::Triplet<double>> at;
  qp.b = Eigen::VectorXd::Zero(L.me);
  for (int i = 0; i < d; ++i) {
    at.emplace_back(L.row_z0 + i, L.z(0, i), 1.0);
    qp.b[L.row_z0 + i] = in.z0[i];
  }
  for (int j = 0; j < L.K; ++j) {
    int hour = j / L.S;
    for (int i = 0; i < d; ++i) {
      int r = L.row_dyn + d * j + i;
      at.emplace_back(r, L.z(j + 1, i), 1.0);
      for (int l = 0; l < d; ++l) at.emplace_back(r, L.z(j, l), -A.at(i, l));
      for (int m = 0; m < 2; ++m) at.emplace_back(r, L.u(hour, m), -B.at(i, m));
    }
  }
  for (int k = 0; k < L.H; ++k) {
    int r = L.row_st + k;
    at.emplace_back(r, L.st(k + 1), 1.0);
    if (k > 0) at.emplace_back(r, L.st(k), -1.0);
    at.emplace_back(r, L.u(k, 0), -bc.rho_coef);
    qp.b[r] = bc.rho_rhs + (k == 0 ? in.storage_norm : 0.0);
  }
  qp.A = SpMat(L.me, L.n);
  qp.A.setFromTriplets(at.begin(), at.end());
  qp.A.makeCompressed();

  // inequalities
  std::vector<Eigen::Triplet<double>> gt;
  qp.h = Eigen::VectorXd::Zero(L.mi);
  double state_hi[2] = {bc.c_hi, bc.T_hi};
  double state_lo[2] = {bc.c_lo, bc.T_lo};
  for (int j = 1; j <= L.K; ++j) {
    for (int ch = 0; ch < 2; ++ch) {
      int ru = L.irow_ub + 2 * (j - 1) + ch;
      int rl = L.irow_lb + 2 * (j - 1) + ch;
      for (int i = 0; i < d; ++i) {
        gt.emplace_back(ru, L.z(j, i), C.at(ch, i));
        gt.emplace_back(rl, L.z(j, i), -C.at(ch, i));
      }
      gt.emplace_back(ru, L.sct(j, ch), -1.0);
      gt.emplace_back(rl, L.sct(j, ch), -1.0);
      qp.h[ru] = state_hi[ch];
      qp.h[rl] = -state_lo[ch];
    }
  }
  for (int k = 1; k <= L.H; ++k) {
    int ru = L.irow_st_ub + (k - 1);
    int rl = L.irow_st_lb + (k - 1);
    gt.emplace_back(ru, L.st(k), 1.0);
    gt.emplace_back(ru, L.sst(k), -1.0);
    gt.emplace_back(rl, L.st(k), -1.0);
    gt.emplace_back(rl, L.sst(k), -1.0);
    qp.h[ru] = bc.st_hi;
    qp.h[rl] = -bc.st_lo;
  }
  for (int k = 0; k < L.H; ++k)
    for (int ch = 0; ch < 2; ++ch) {
      int ru = L.irow_ubox + 4 * k + 2 * ch;
      gt.emplace_back(ru, L.u(k, ch), 1.0);
      qp.h[ru] = bc.u_hi[ch];
      gt.emplace_back(ru + 1, L.u(k, ch), -1.0);
      qp.h[ru + 1] = -bc.u_lo[ch];
    }
  {
    int r = L.irow_snn;
    for (int j = 1; j <= L.K; ++j)
      for (int ch = 0; ch < 2; ++ch) gt.emplace_back(r++, L.sct(j, ch), -1.0);
    for (int k = 1; k <= L.H; ++k) gt.emplace_back(r++, L.sst(k), -1.0);
  }
  qp.G = SpMat(L.mi, L.n);
  qp.G.setFromTriplets(gt.begin(), gt.end());
  qp.G.makeCompressed();
  return qp;
}

OcpGradients map_ocp_gradients(const OcpSpec& spec, const OcpLayout& L, const OcpBounds& bc,
                               const QpGradients& g) {
  (void)spec;
  OcpGradients out;
  const int d = L.d;
  out.dA = Tensor::zeros({d, d});
  out.dB = Tensor::zeros({d, 2});
  out.dC = Tensor::zeros({2, d});
  out.dz0.assign(d, 0.0);
  out.dprices.assign(L.H, 0.0);

  for (int i = 0; i < d; ++i) out.dz0[i] = g.db[L.row_z0 + i];
  out.dstorage_norm = g.db[L.row_st];

  // dynamics rows carry -A and -B entries
  for (int c = 0; c < g.dA.outerSize(); ++c)
    for (SpMat::InnerIterator it(g.dA, c); it; ++it) {
      int r = static_cast<int>(it.row());
      int col = static_cast<int>(it.col());
      if (r < L.row_dyn || r >= L.row_st) continue;
      int j = (r - L.row_dyn) / d;
      int i = (r - L.row_dyn) % d;
      if (col >= L.z(j, 0) && col < L.z(j, 0) + d) {
        out.dA.at(i, col - L.z(j, 0)) -= it.value();
      } else if (col >= L.off_u && col < L.off_z) {
        int hour = (col - L.off_u) / 2;
        int m = (col - L.off_u) % 2;
        if (hour == j / L.S) out.dB.at(i, m) -= it.value();
      }
    }

  // state-bound rows carry +C (upper) and -C (lower) entries
  for (int c = 0; c < g.dG.outerSize(); ++c)
    for (SpMat::InnerIterator it(g.dG, c); it; ++it) {
      int r = static_cast<int>(it.row());
      int col = static_cast<int>(it.col());
      if (col < L.off_z || col >= L.off_st) continue;
      int j = (col - L.off_z) / d;
      int i = (col - L.off_z) % d;
      if (j < 1) continue;
      if (r >= L.irow_ub && r < L.irow_lb) {
        int ch = (r - L.irow_ub) % 2;
        if ((r - L.irow_ub) / 2 == j - 1) out.dC.at(ch, i) += it.value();
      } else if (r >= L.irow_lb && r < L.irow_st_ub) {
        int ch = (r - L.irow_lb) % 2;
        if ((r - L.irow_lb) / 2 == j - 1) out.dC.at(ch, i) -= it.value();
      }
    }

  for (int k = 0; k < L.H; ++k) out.dprices[k] = g.dq[L.u(k, 1)] * bc.price_coef;
  return out;
}

}  // namespace kmpc
