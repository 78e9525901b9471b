#include "kmpc/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace kmpc {

EvalReport evaluate_controller(const Controller& controller, CstrEnv& env, long n_steps, int horizon) {
  EvalReport rep;
  Rng dummy(0);
  env.reset_at(ResetMode::SteadyState, 0, dummy);

  double cost = 0.0, nominal_cost = 0.0;
  double violation_sum = 0.0;

  for (long t = 0; t < n_steps; ++t) {
    EvalStepLog row;
    row.t = t;
    row.price = env.current_price();
    const PlantState& s = env.state();
    row.c = s.c;
    row.T = s.T;
    row.storage = s.storage;

    ControlInput u;
    try {
      u = controller(s, env.price_window(horizon));
    } catch (const std::exception& e) {
      rep.aborted = true;
      rep.abort_reason = e.what();
      break;
    }
    row.rho = u.rho;
    row.F = u.F;

    RewardBreakdown r;
    try {
      auto [next, rb] = env.step_raw(u);
      r = rb;
    } catch (const std::exception& e) {
      rep.aborted = true;
      rep.abort_reason = e.what();
      break;
    }
    row.r_cost = r.r_cost;
    row.r_con = r.r_con;
    row.r_total = r.r_total;
    rep.total_reward += r.r_total;

    const auto& events = env.last_violations();
    row.violation_events = static_cast<int>(events.size());
    for (double v : events) {
      violation_sum += v;
      row.max_rel_violation = std::max(row.max_rel_violation, v);
    }
    rep.violation_events += row.violation_events;
    if (!events.empty()) rep.violating_steps += 1;

    cost += u.F * row.price * env.config().dt_ctrl;
    nominal_cost += env.params().F_ss * row.price * env.config().dt_ctrl;

    rep.log.push_back(row);
    rep.steps += 1;
  }

  rep.cost_ratio = nominal_cost > 0.0 ? cost / nominal_cost : 0.0;
  rep.violation_step_pct = rep.steps > 0 ? 100.0 * static_cast<double>(rep.violating_steps) / rep.steps : 0.0;
  rep.mean_violation_size = rep.violation_events > 0 ? violation_sum / rep.violation_events : 0.0;
  return rep;
}

EvalReport evaluate_policy(MpcPolicy& policy, CstrEnv& env, long n_steps) {
  return evaluate_controller(
      [&policy](const PlantState& s, const std::vector<double>& prices) {
        return policy.act(s, prices, false, nullptr);
      },
      env, n_steps, policy.spec().horizon);
}

double violation_pct_from_log(const std::vector<EvalStepLog>& log) {
  if (log.empty()) return 0.0;
  long violating = 0;
  for (const auto& row : log)
    if (row.violation_events > 0) ++violating;
  return 100.0 * static_cast<double>(violating) / static_cast<double>(log.size());
}

nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["schema"] = "eval-report-v1";
  j["cost_ratio"] = rep.cost_ratio;
  j["violation_step_pct"] = rep.violation_step_pct;
  j["mean_violation_size"] = rep.mean_violation_size;
  j["violation_events"] = rep.violation_events;
  j["violating_steps"] = rep.violating_steps;
  j["steps"] = rep.steps;
  j["total_reward"] = rep.total_reward;
  j["aborted"] = rep.aborted;
  if (rep.aborted) j["abort_reason"] = rep.abort_reason;
  return j;
}

void write_trajectory_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("eval: cannot open '" + path + "' for writing");
  f << "t,price,c,T,storage,rho,F,r_cost,r_con,r_total,violation_events,max_rel_violation\n";
  char buf[512];
  for (const auto& r : rep.log) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g\n", r.t,
                  r.price, r.c, r.T, r.storage, r.rho, r.F, r.r_cost, r.r_con, r.r_total, r.violation_events,
                  r.max_rel_violation);
    f << buf;
  }
}

}  // namespace kmpc
