#pragma once

#include <memory>
#include <string>

#include "json.hpp"
#include "kmpc/dataset.hpp"
#include "kmpc/env.hpp"
#include "kmpc/ocp.hpp"
#include "kmpc/ppo.hpp"
#include "kmpc/prices.hpp"
#include "kmpc/shac.hpp"
#include "kmpc/si.hpp"

namespace kmpc {

struct BoundsConfig {
  double c_lo_frac = 0.9, c_hi_frac = 1.1;
  double T_lo_frac = 0.8, T_hi_frac = 1.2;
  double storage_hours = 6.0;
  double rho_lo = 0.8, rho_hi = 1.2;
  double F_lo = 0.0, F_hi = 700.0;
};

struct PricesConfig {
  std::string csv;  // empty: synthesize
  int synth_hours = 4416;
  SynthPriceConfig synth;
};

struct KoopmanConfig {
  DatasetConfig dataset;
  SiConfig si;
  int si_seeds = 10;
};

struct EvalConfig {
  int hours = 336;  // test episode length in control steps
};

struct GradStudyConfig {
  int n_grads = 100;
  int critic_fit_updates = 200;
  int ppo_rollout = 256;
  int ppo_fit_rollout = 128;
  int shac_horizon = 16;
  int shac_envs = 4;
  bool freeze_critic_during_recording = false;
  bool fixed_resets = false;
  double sigma_frac = -1.0;  // < 0: use the policy default
};

// Full run configuration; every module's decision knobs in one place.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "runs/default";

  PlantParams plant = PlantParams::defaults();
  BoundsConfig bounds;
  EnvConfig env;
  PricesConfig prices;
  KoopmanConfig koopman;
  OcpSpec ocp;
  double explore_sigma_frac = 0.02;
  ShacConfig shac;
  PpoConfig ppo;
  EvalConfig eval;
  GradStudyConfig grad_study;
};

// Parse and validate; unknown keys are rejected with their schema path.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json config_to_json(const RunConfig& cfg);

// assembly helpers
StateBounds make_bounds(const RunConfig& cfg);
std::shared_ptr<const PriceSeries> make_prices(const RunConfig& cfg);
CstrEnv make_env(const RunConfig& cfg, std::shared_ptr<const PriceSeries> prices);
MpcPolicy make_policy(const RunConfig& cfg, const KoopmanModel& model);

}  // namespace kmpc
