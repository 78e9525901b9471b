#pragma once

#include "kmpc/tape.hpp"

namespace kmpc {

// Dimensionless CSTR constants. V, N, T_f, T_c are configuration values; the
// rate constant k and cooling coefficient alpha_c are derived in closed form
// from the published steady state so that ode_rhs(steady state) == 0 holds
// exactly for any choice of the configurable four.
struct PlantParams {
  double V = 20.0;
  double N = 5.0;
  double T_f = 0.3947;
  double T_c = 0.3816;

  double c_ss = 0.1367;
  double T_ss = 0.7293;
  double rho_ss = 1.0;
  double F_ss = 390.0;

  double k = 0.0;
  double alpha_c = 0.0;

  // k = (1-c_ss) rho_ss / (V c_ss e^{-N/T_ss})
  // alpha_c = [(T_f-T_ss) rho_ss/V + (1-c_ss) rho_ss/V] / (F_ss (T_ss-T_c))
  void derive_rate_constants();

  static PlantParams defaults() {
    PlantParams p;
    p.derive_rate_constants();
    return p;
  }
};

struct PlantState {
  double c = 0.0;
  double T = 0.0;
  double storage = 0.0;
};

struct ControlInput {
  double rho = 0.0;  // production rate [1/h]
  double F = 0.0;    // coolant flow rate [1/h]
};

// Box constraints on states and controls plus storage capacity.
struct StateBounds {
  double c_lo, c_hi;
  double T_lo, T_hi;
  double storage_lo = 0.0, storage_hi = 6.0;
  double rho_lo = 0.8, rho_hi = 1.2;
  double F_lo = 0.0, F_hi = 700.0;

  static StateBounds from_params(const PlantParams& p) {
    StateBounds b;
    b.c_lo = 0.9 * p.c_ss;
    b.c_hi = 1.1 * p.c_ss;
    b.T_lo = 0.8 * p.T_ss;
    b.T_hi = 1.2 * p.T_ss;
    return b;
  }

  double c_span() const { return c_hi - c_lo; }
  double T_span() const { return T_hi - T_lo; }
  double storage_span() const { return storage_hi - storage_lo; }
  double rho_span() const { return rho_hi - rho_lo; }
  double F_span() const { return F_hi - F_lo; }
};

// (dc/dt, dT/dt); throws when T <= 0 (the Arrhenius exponent leaves the
// physical regime).
void ode_rhs(const PlantParams& p, double c, double T, double rho, double F, double& cdot, double& Tdot);

// Same dynamics as tape nodes. x is a 2-vector node (c, T), u a 2-vector
// node (rho, F). Returns the 2-vector node (cdot, Tdot).
int ode_rhs_node(Tape& tape, const PlantParams& p, int x, int u);

// Classic RK4 with fixed step dt, off tape and on tape.
void rk4_step(const PlantParams& p, double dt, double& c, double& T, double rho, double F);
int rk4_step_node(Tape& tape, const PlantParams& p, double dt, int x, int u);

}  // namespace kmpc
