#pragma once

#include <vector>

#include "kmpc/koopman.hpp"
#include "kmpc/plant.hpp"
#include "kmpc/qp.hpp"
#include "kmpc/qp_diff.hpp"

namespace kmpc {

// Receding-horizon optimal control problem built from the Koopman surrogate:
// hourly control blocks, latent dynamics at the model's 15-minute grid kept
// as equality-constrained variables, soft state bounds with quadratically
// penalized slacks, and exact linear storage bookkeeping.
struct OcpSpec {
  int horizon = 9;            // control steps (hours)
  int substeps = 4;           // model steps per control step
  double dt_ctrl = 1.0;       // hours
  double slack_penalty = 1e3;  // M
  double control_reg = 1e-6;  // eps_u, strict convexity in u
  double alpha = 1e-3;        // economic weight in the stage cost
  QpOptions solver;
  QpDiffOptions diff;
};

// Decision vector layout and row bookkeeping for one OCP instance.
struct OcpLayout {
  int H = 0, S = 0, K = 0, d = 0;
  int n = 0, me = 0, mi = 0;
  int off_u = 0, off_z = 0, off_st = 0, off_sct = 0, off_sst = 0;
  int row_z0 = 0, row_dyn = 0, row_st = 0;
  int irow_ub = 0, irow_lb = 0, irow_st_ub = 0, irow_st_lb = 0, irow_ubox = 0, irow_snn = 0;

  int u(int k, int ch) const { return off_u + 2 * k + ch; }
  int z(int j, int i) const { return off_z + d * j + i; }
  int st(int k) const { return off_st + (k - 1); }        // k = 1..H
  int sct(int j, int ch) const { return off_sct + 2 * (j - 1) + ch; }  // j = 1..K
  int sst(int k) const { return off_sst + (k - 1); }      // k = 1..H
};

OcpLayout make_ocp_layout(const OcpSpec& spec, int latent_dim);

// Problem data that varies per control step.
struct OcpInputs {
  std::vector<double> z0;      // psi(x_t), latent_dim
  double storage_norm = 0.0;   // storage scaled to [-1, 1]
  std::vector<double> prices;  // horizon entries
};

// Normalized bound constants shared across instances.
struct OcpBounds {
  double c_lo, c_hi, T_lo, T_hi;    // in model-normalized units
  double u_lo[2], u_hi[2];          // control box, normalized
  double u_ss[2];                   // steady-state control, normalized
  double st_lo = -1.0, st_hi = 1.0;
  double rho_coef = 0.0;            // storage gain per normalized rho deviation
  double rho_rhs = 0.0;             // constant part of the storage balance
  double price_coef = 0.0;          // objective weight per unit price on u_F
};

OcpBounds make_ocp_bounds(const OcpSpec& spec, const NormStats& stats, const StateBounds& bounds,
                          const PlantParams& params);

// Assemble the convex QP for the current state/prices. Throws on non-finite
// model parameters.
QpProblem build_ocp_qp(const OcpSpec& spec, const OcpLayout& lay, const OcpBounds& bc, const Tensor& A,
                       const Tensor& B, const Tensor& C, const OcpInputs& in);

// Gradients of the loss w.r.t. the model-facing inputs, mapped back from the
// QP-data gradients.
struct OcpGradients {
  Tensor dA, dB, dC;
  std::vector<double> dz0;
  double dstorage_norm = 0.0;
  std::vector<double> dprices;
};

OcpGradients map_ocp_gradients(const OcpSpec& spec, const OcpLayout& lay, const OcpBounds& bc,
                               const QpGradients& g);

}  // namespace kmpc
