#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kmpc/checkpoint.hpp"
#include "kmpc/config.hpp"
#include "kmpc/eval.hpp"
#include "kmpc/grad_study.hpp"
#include "kmpc/si.hpp"

namespace py = pybind11;
using namespace kmpc;
using nlohmann::json;

namespace {

RunConfig parse_config(const std::string& config_json) {
  if (config_json.empty()) return RunConfig{};
  return config_from_json(json::parse(config_json));
}

py::dict report_to_dict(const EvalReport& rep) {
  py::dict d;
  d["cost_ratio"] = rep.cost_ratio;
  d["violation_step_pct"] = rep.violation_step_pct;
  d["mean_violation_size"] = rep.mean_violation_size;
  d["violation_events"] = rep.violation_events;
  d["steps"] = rep.steps;
  d["total_reward"] = rep.total_reward;
  d["aborted"] = rep.aborted;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Koopman eNMPC toolkit core bindings";

  py::class_<PlantState>(m, "PlantState")
      .def(py::init<>())
      .def_readwrite("c", &PlantState::c)
      .def_readwrite("T", &PlantState::T)
      .def_readwrite("storage", &PlantState::storage)
      .def("__repr__", [](const PlantState& s) {
        std::ostringstream os;
        os << "PlantState(c=" << s.c << ", T=" << s.T << ", storage=" << s.storage << ")";
        return os.str();
      });

  py::class_<ControlInput>(m, "ControlInput")
      .def(py::init<>())
      .def_readwrite("rho", &ControlInput::rho)
      .def_readwrite("F", &ControlInput::F);

  py::class_<PriceSeries>(m, "PriceSeries")
      .def_readonly("values", &PriceSeries::values)
      .def_readonly("timestamps", &PriceSeries::timestamps)
      .def("__len__", [](const PriceSeries& p) { return p.size(); });

  m.def(
      "synth_prices",
      [](int n_hours, std::uint64_t seed) {
        Rng rng(seed);
        return synth_prices(n_hours, rng);
      },
      py::arg("n_hours"), py::arg("seed") = 0, "Synthetic hourly electricity prices");
  m.def("load_prices", &load_prices, py::arg("csv_path"));

  py::class_<KoopmanModel>(m, "KoopmanModel")
      .def_static("load", &KoopmanModel::load, py::arg("path"))
      .def("save", &KoopmanModel::save, py::arg("path"))
      .def(
          "encode",
          [](const KoopmanModel& model, double c, double T) {
            return model.encode_raw(model.norm().norm_state(c, T));
          },
          py::arg("c"), py::arg("T"), "Latent embedding of a physical state")
      .def(
          "rollout",
          [](const KoopmanModel& model, std::pair<double, double> x0,
             const std::vector<std::pair<double, double>>& controls) {
            auto x0n = model.norm().norm_state(x0.first, x0.second);
            std::vector<std::array<double, 2>> u;
            u.reserve(controls.size());
            for (auto& [rho, F] : controls) u.push_back(model.norm().norm_input(rho, F));
            auto pred = model.rollout(x0n, u);
            std::vector<std::pair<double, double>> out;
            for (auto& p : pred) {
              auto xp = model.norm().denorm_state(p[0], p[1]);
              out.emplace_back(xp[0], xp[1]);
            }
            return out;
          },
          py::arg("x0"), py::arg("controls"),
          "Multi-step prediction in physical units from one encoded state");

  py::class_<CstrEnv>(m, "CstrEnv")
      .def(py::init([](const std::string& config_json) {
             RunConfig cfg = parse_config(config_json);
             return CstrEnv(make_env(cfg, make_prices(cfg)));
           }),
           py::arg("config_json") = "")
      .def(
          "reset",
          [](CstrEnv& env, bool randomized, std::uint64_t seed) {
            Rng rng(seed);
            return env.reset(randomized ? ResetMode::Randomized : ResetMode::SteadyState, rng);
          },
          py::arg("randomized") = false, py::arg("seed") = 0)
      .def(
          "step",
          [](CstrEnv& env, double rho, double F) {
            auto [state, r] = env.step_raw({rho, F});
            py::dict breakdown;
            breakdown["r_cost"] = r.r_cost;
            breakdown["r_con"] = r.r_con;
            breakdown["r_total"] = r.r_total;
            return py::make_tuple(state, breakdown);
          },
          py::arg("rho"), py::arg("F"))
      .def_property_readonly("state", &CstrEnv::state)
      .def("price_window", &CstrEnv::price_window, py::arg("len"));

  py::class_<MpcPolicy>(m, "MpcPolicy")
      .def(py::init([](const KoopmanModel& model, const std::string& config_json) {
             RunConfig cfg = parse_config(config_json);
             return make_policy(cfg, model);
           }),
           py::arg("model"), py::arg("config_json") = "")
      .def(
          "act",
          [](MpcPolicy& policy, const PlantState& state, const std::vector<double>& prices, bool explore,
             std::uint64_t seed) {
            Rng rng(seed);
            return policy.act(state, prices, explore, &rng);
          },
          py::arg("state"), py::arg("prices"), py::arg("explore") = false, py::arg("seed") = 0,
          "Solve the OCP and return the first control move");

  m.def(
      "generate_dataset",
      [](const std::string& config_json, const std::string& out_path) {
        RunConfig cfg = parse_config(config_json);
        Rng rng = Rng(cfg.seed).fork(0xDA7A);
        TrajectoryDataset data = generate_dataset(cfg.plant, make_bounds(cfg), cfg.koopman.dataset, rng);
        data.save(out_path, cfg.seed);
        py::dict d;
        d["n_traj"] = data.n_traj();
        d["n_train"] = data.n_train;
        d["steps"] = data.cfg.steps;
        return d;
      },
      py::arg("config_json"), py::arg("out_path"));

  m.def(
      "train_si",
      [](const std::string& config_json, const std::string& dataset_path, const std::string& out_path) {
        RunConfig cfg = parse_config(config_json);
        TrajectoryDataset data = TrajectoryDataset::load(dataset_path);
        SiSweepResult sweep = si_seed_sweep(data, cfg.koopman.si, cfg.koopman.si_seeds, cfg.seed);
        sweep.best_model.save(out_path);
        py::dict d;
        d["best_seed_index"] = sweep.best_seed_index;
        d["val_losses"] = sweep.val_losses;
        auto rmse = validation_rmse(sweep.best_model, data, cfg.koopman.si.window);
        d["val_rmse_12step"] = std::vector<double>{rmse[0], rmse[1]};
        return d;
      },
      py::arg("config_json"), py::arg("dataset_path"), py::arg("out_path"));

  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& model_path) {
        RunConfig cfg = parse_config(config_json);
        KoopmanModel model = KoopmanModel::load(model_path);
        auto prices = make_prices(cfg);
        long steps = std::min<long>(cfg.eval.hours, static_cast<long>(prices->size()));
        CstrEnv env = make_env(cfg, prices);
        MpcPolicy policy = make_policy(cfg, model);
        return report_to_dict(evaluate_policy(policy, env, steps));
      },
      py::arg("config_json"), py::arg("model_path"), "Deterministic closed-loop evaluation");

  m.def("cosine_similarity", &cosine_similarity, py::arg("v"), py::arg("w"));
}
