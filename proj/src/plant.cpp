#include "kmpc/plant.hpp"

#include <cmath>
#include <stdexcept>

namespace kmpc {

void PlantParams::derive_rate_constants() {
  k = (1.0 - c_ss) * rho_ss / (V * c_ss * std::exp(-N / T_ss));
  alpha_c = ((T_f - T_ss) * rho_ss / V + (1.0 - c_ss) * rho_ss / V) / (F_ss * (T_ss - T_c));
}

void ode_rhs(const PlantParams& p, double c, double T, double rho, double F, double& cdot, double& Tdot) {
  if (T <= 0.0) throw std::runtime_error("plant: temperature " + std::to_string(T) + " outside physical regime");
  double reaction = c * p.k * std::exp(-p.N / T);
  cdot = (1.0 - c) * rho / p.V - reaction;
  Tdot = (p.T_f - T) * rho / p.V + reaction - F * p.alpha_c * (T - p.T_c);
}

int ode_rhs_node(Tape& tape, const PlantParams& p, int x, int u) {
  int c = tape.slice(x, 0, 1);
  int T = tape.slice(x, 1, 2);
  if (tape.val(T).item() <= 0.0)
    throw std::runtime_error("plant: temperature " + std::to_string(tape.val(T).item()) +
                             " outside physical regime");
  int rho = tape.slice(u, 0, 1);
  int F = tape.slice(u, 1, 2);

  int reaction = tape.mul(c, tape.scale(tape.exp_(tape.scale(tape.recip(T), -p.N)), p.k));
  int rho_over_V = tape.scale(rho, 1.0 / p.V);
  int cdot = tape.sub(tape.mul(tape.shift(tape.neg(c), 1.0), rho_over_V), reaction);
  int heat_in = tape.mul(tape.shift(tape.neg(T), p.T_f), rho_over_V);
  int cooling = tape.mul(F, tape.scale(tape.shift(T, -p.T_c), p.alpha_c));
  int Tdot = tape.sub(tape.add(heat_in, reaction), cooling);
  return tape.concat({cdot, Tdot});
}

void rk4_step(const PlantParams& p, double dt, double& c, double& T, double rho, double F) {
  double k1c, k1T, k2c, k2T, k3c, k3T, k4c, k4T;
  ode_rhs(p, c, T, rho, F, k1c, k1T);
  ode_rhs(p, c + 0.5 * dt * k1c, T + 0.5 * dt * k1T, rho, F, k2c, k2T);
  ode_rhs(p, c + 0.5 * dt * k2c, T + 0.5 * dt * k2T, rho, F, k3c, k3T);
  ode_rhs(p, c + dt * k3c, T + dt * k3T, rho, F, k4c, k4T);
  c += dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
  T += dt / 6.0 * (k1T + 2.0 * k2T + 2.0 * k3T + k4T);
}

int rk4_step_node(Tape& tape, const PlantParams& p, double dt, int x, int u) {
  int k1 = ode_rhs_node(tape, p, x, u);
  int k2 = ode_rhs_node(tape, p, tape.add(x, tape.scale(k1, 0.5 * dt)), u);
  int k3 = ode_rhs_node(tape, p, tape.add(x, tape.scale(k2, 0.5 * dt)), u);
  int k4 = ode_rhs_node(tape, p, tape.add(x, tape.scale(k3, dt)), u);
  int incr = tape.add(tape.add(k1, k4), tape.scale(tape.add(k2, k3), 2.0));
  return tape.add(x, tape.scale(incr, dt / 6.0));
}

}  // namespace kmpc
