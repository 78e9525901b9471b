#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kmpc/env.hpp"
#include "kmpc/policy.hpp"

namespace kmpc {

struct EvalStepLog {
  long t = 0;
  double price = 0.0;
  double c = 0.0, T = 0.0, storage = 0.0;
  double rho = 0.0, F = 0.0;
  double r_cost = 0.0, r_con = 0.0, r_total = 0.0;
  int violation_events = 0;
  double max_rel_violation = 0.0;
};

struct EvalReport {
  double cost_ratio = 0.0;          // sum F_t p_t / sum F_ss p_t over the episode
  double violation_step_pct = 0.0;  // % of control steps with >= 1 bound violation
  double mean_violation_size = 0.0; // relative magnitude, averaged over events
  long violation_events = 0;
  long violating_steps = 0;
  long steps = 0;
  double total_reward = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::vector<EvalStepLog> log;
};

using Controller = std::function<ControlInput(const PlantState&, const std::vector<double>& price_window)>;

// Deterministic closed-loop evaluation from the steady state with empty
// storage. A controller failure aborts the episode and yields a partial
// report. The price window handed to the controller has `horizon` entries.
EvalReport evaluate_controller(const Controller& controller, CstrEnv& env, long n_steps, int horizon);
EvalReport evaluate_policy(MpcPolicy& policy, CstrEnv& env, long n_steps);

// Metrics recomputed from the per-step log alone (self-consistency checks).
double violation_pct_from_log(const std::vector<EvalStepLog>& log);

nlohmann::json eval_report_to_json(const EvalReport& report);
void write_trajectory_csv(const EvalReport& report, const std::string& path);

}  // namespace kmpc
