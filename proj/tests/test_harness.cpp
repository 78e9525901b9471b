#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kmpc/config.hpp"
#include "kmpc/dataset.hpp"
#include "kmpc/eval.hpp"
#include "kmpc/grad_study.hpp"
#include "kmpc/si.hpp"

using namespace kmpc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
  const char* env = std::getenv("KMPC_BIN");
  return env ? env : "../kmpc";
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  std::string cmd = cli_path() + " " + args + " >/tmp/kmpc_test_out.txt 2>&1";
  int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream f("/tmp/kmpc_test_out.txt");
    *output = std::string(std::istreambuf_iterator<char>(f), {});
  }
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::shared_ptr<const PriceSeries> flat_prices(int hours, double value) {
  auto p = std::make_shared<PriceSeries>();
  for (int t = 0; t < hours; ++t) {
    p->values.push_back(value);
    p->timestamps.push_back(1514764800 + 3600ll * t);
  }
  return p;
}

// small SI model shared by grad-study tests
struct SiFixture {
  RunConfig cfg;
  KoopmanModel model;
  SiFixture() {
    cfg.koopman.dataset.n_traj = 12;
    cfg.koopman.dataset.steps = 200;
    cfg.koopman.dataset.n_train = 9;
    cfg.koopman.si.epochs = 40;
    cfg.koopman.si.patience = 40;
    cfg.koopman.si.batches_per_epoch = 60;
    cfg.koopman.si.batch = 64;
    cfg.prices.synth_hours = 900;
    cfg.seed = 910;
    Rng rng(911);
    TrajectoryDataset data = generate_dataset(cfg.plant, make_bounds(cfg), cfg.koopman.dataset, rng);
    SiSweepResult sweep = si_seed_sweep(data, cfg.koopman.si, 1, 912);
    model = sweep.best_model;
  }
};

SiFixture& si_fixture() {
  static SiFixture f;
  return f;
}

}  // namespace

TEST_CASE("cosine similarity closed forms and errors") {
  std::vector<double> v{1.0, 2.0, -3.0};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> neg{-1.0, -2.0, 3.0};
  CHECK(cosine_similarity(v, neg) == doctest::Approx(-1.0).epsilon(1e-14));
  std::vector<double> orth{2.0, -1.0, 0.0};
  CHECK(cosine_similarity(v, orth) == doctest::Approx(0.0).epsilon(1e-14));
  std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(v, zero), std::runtime_error);

  // n identical gradients -> similarity 1; n = 2 -> the single pair
  std::vector<std::vector<double>> same(5, v);
  CHECK(mean_pairwise_cosine(same) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<std::vector<double>> pair{v, orth};
  CHECK(mean_pairwise_cosine(pair) == doctest::Approx(cosine_similarity(v, orth)).epsilon(1e-14));
}

TEST_CASE("cost ratio: nominal controls give 1, zero cooling gives 0") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  {
    CstrEnv env(params, bounds, EnvConfig{}, flat_prices(48, 6.0));
    auto rep = evaluate_controller(
        [&](const PlantState&, const std::vector<double>&) {
          return ControlInput{params.rho_ss, params.F_ss};
        },
        env, 24, 9);
    CHECK(rep.cost_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.violation_step_pct == 0.0);
    CHECK(rep.steps == 24);
  }
  {
    CstrEnv env(params, bounds, EnvConfig{}, flat_prices(48, 6.0));
    auto rep = evaluate_controller(
        [&](const PlantState&, const std::vector<double>&) { return ControlInput{params.rho_ss, 0.0}; }, env, 6,
        9);
    CHECK(rep.cost_ratio == 0.0);
    // uncooled reactor heats out of its temperature box
    CHECK(rep.violating_steps > 0);
  }
}

TEST_CASE("cost ratio <= 1 for any controller never exceeding F_ss under positive prices") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  Rng rng(13);
  auto prices = std::make_shared<PriceSeries>();
  *prices = synth_prices(64, rng);
  CstrEnv env(params, bounds, EnvConfig{}, prices);
  Rng crng(14);
  auto rep = evaluate_controller(
      [&](const PlantState&, const std::vector<double>&) {
        return ControlInput{crng.uniform(0.8, 1.2), crng.uniform(0.0, params.F_ss)};
      },
      env, 40, 9);
  CHECK(rep.cost_ratio <= 1.0);
}

TEST_CASE("violation percentage is reproducible from the trajectory log") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  CstrEnv env(params, bounds, EnvConfig{}, flat_prices(64, 6.0));
  Rng crng(15);
  auto rep = evaluate_controller(
      [&](const PlantState&, const std::vector<double>&) {
        return ControlInput{crng.uniform(0.8, 1.2), crng.uniform(0.0, 700.0)};
      },
      env, 48, 9);
  CHECK(violation_pct_from_log(rep.log) == doctest::Approx(rep.violation_step_pct).epsilon(1e-12));
  if (rep.violation_events > 0) CHECK(rep.mean_violation_size > 0.0);
}

TEST_CASE("eval report json carries the schema version") {
  EvalReport rep;
  rep.steps = 3;
  json j = eval_report_to_json(rep);
  CHECK(j.at("schema") == "eval-report-v1");
  CHECK(j.at("steps") == 3);
}

TEST_CASE("config: unknown keys are rejected with their path") {
  json j{{"shac", {{"gama", 0.99}}}};
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("$.shac.gama"), std::runtime_error);
  json j2{{"nonsense", 1}};
  CHECK_THROWS_WITH_AS(config_from_json(j2), doctest::Contains("$.nonsense"), std::runtime_error);
  json j3{{"shac", {{"gamma", 1.7}}}};
  CHECK_THROWS_AS(config_from_json(j3), std::runtime_error);
  // round-trip: defaults -> json -> config parses cleanly
  RunConfig def;
  RunConfig back = config_from_json(config_to_json(def));
  CHECK(back.shac.horizon == def.shac.horizon);
  CHECK(back.ocp.slack_penalty == def.ocp.slack_penalty);
}

TEST_CASE("grad study with zero noise, fixed resets and frozen critic has similarity ~1") {
  auto& f = si_fixture();
  RunConfig cfg = f.cfg;
  cfg.seed = 920;
  cfg.env.episode_steps = 4;  // reset (to the fixed state) after every window
  cfg.grad_study.n_grads = 4;
  cfg.grad_study.critic_fit_updates = 0;
  cfg.grad_study.shac_horizon = 4;
  cfg.grad_study.shac_envs = 1;
  cfg.grad_study.fixed_resets = true;
  cfg.grad_study.sigma_frac = 0.0;
  cfg.grad_study.freeze_critic_during_recording = true;

  GradStudyResult res = gradient_similarity_study(GradStudyAlgorithm::Shac, cfg, f.model);
  REQUIRE(res.n_recorded >= 2);
  CHECK(res.mean_pairwise > 0.99);
}

TEST_CASE("cli: evaluate on a 3-hour toy price file produces a 3-step report") {
  fs::path dir = fs::temp_directory_path() / "kmpc_cli_eval";
  fs::remove_all(dir);
  fs::create_directories(dir);

  fs::path csv = dir / "prices.csv";
  {
    std::ofstream f(csv);
    f << "2018-03-26T00:00:00,31.2\n2018-03-26T01:00:00,8.9\n2018-03-26T02:00:00,27.0\n";
  }
  fs::path model_path = dir / "model.ntc";
  si_fixture().model.save(model_path.string());

  json cfg;
  cfg["run_dir"] = (dir / "run").string();
  cfg["prices"] = {{"csv", csv.string()}};
  cfg["eval"] = {{"hours", 3}};
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream f(cfg_path);
    f << cfg.dump();
  }

  std::string out;
  int rc = run_cli("evaluate --config " + cfg_path.string() + " --model " + model_path.string(), &out);
  INFO(out);
  CHECK(rc == 0);
  json rep = json::parse(slurp(dir / "run" / "evaluate_summary.json"));
  CHECK(rep.at("steps") == 3);
  CHECK(rep.at("command") == "evaluate");
  CHECK(fs::exists(dir / "run" / "trajectory.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cli: unknown subcommand and bad config fail with nonzero exit") {
  std::string out;
  int rc = run_cli("frobnicate", &out);
  CHECK(rc != 0);
  CHECK(out.find("help") != std::string::npos);  // usage hint

  fs::path dir = fs::temp_directory_path() / "kmpc_cli_bad";
  fs::create_directories(dir);
  fs::path cfg_path = dir / "bad.json";
  {
    std::ofstream f(cfg_path);
    f << R"({"shac": {"gama": 0.9}})";
  }
  rc = run_cli("gen-data --config " + cfg_path.string(), &out);
  CHECK(rc != 0);
  CHECK(out.find("$.shac.gama") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli determinism: identical config and seed give identical summaries") {
  fs::path dir = fs::temp_directory_path() / "kmpc_cli_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  json cfg;
  cfg["run_dir"] = (dir / "run").string();
  cfg["seed"] = 31;
  cfg["koopman"] = {{"dataset", {{"n_traj", 6}, {"steps", 120}, {"n_train", 4}}},
                    {"si", {{"epochs", 8}, {"patience", 8}, {"batches_per_epoch", 30}}},
                    {"si_seeds", 1}};
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream f(cfg_path);
    f << cfg.dump();
  }

  std::string out;
  REQUIRE(run_cli("gen-data --config " + cfg_path.string(), &out) == 0);
  REQUIRE(run_cli("train-si --config " + cfg_path.string(), &out) == 0);
  std::string gen1 = slurp(dir / "run" / "gen_data_summary.json");
  std::string si1 = slurp(dir / "run" / "train_si_summary.json");

  fs::remove_all(dir / "run");
  REQUIRE(run_cli("gen-data --config " + cfg_path.string(), &out) == 0);
  REQUIRE(run_cli("train-si --config " + cfg_path.string(), &out) == 0);
  CHECK(slurp(dir / "run" / "gen_data_summary.json") == gen1);
  CHECK(slurp(dir / "run" / "train_si_summary.json") == si1);
  fs::remove_all(dir);
}
