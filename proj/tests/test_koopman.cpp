#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "fd_check.hpp"
#include "kmpc/dataset.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/si.hpp"

using namespace kmpc;
using kmpc_test::central_diff;
using kmpc_test::rel_err;

namespace {

KoopmanModel fresh_model(std::uint64_t seed, NormStats stats = {}) {
  KoopmanModel model(KoopmanArch{}, stats);
  Rng rng(seed);
  model.init_params(rng);
  return model;
}

DatasetConfig small_dataset_cfg() {
  DatasetConfig cfg;
  cfg.n_traj = 12;
  cfg.steps = 200;
  cfg.n_train = 9;
  return cfg;
}

}  // namespace

TEST_CASE("architecture dimensions match the fixed layout") {
  KoopmanModel model = fresh_model(0);
  CHECK(model.A().shape == std::vector<int>{8, 8});
  CHECK(model.B().shape == std::vector<int>{8, 2});
  CHECK(model.C().shape == std::vector<int>{2, 8});
  CHECK(model.params().at("koopman/enc/W0").shape == std::vector<int>{4, 2});
  CHECK(model.params().at("koopman/enc/W1").shape == std::vector<int>{6, 4});
  CHECK(model.params().at("koopman/enc/W2").shape == std::vector<int>{8, 6});
}

TEST_CASE("encode: zero final layer collapses to the bias vector") {
  KoopmanModel model = fresh_model(1);
  auto& W2 = model.params().at("koopman/enc/W2");
  for (auto& v : W2.v) v = 0.0;
  auto& b2 = model.params().at("koopman/enc/b2");
  for (int i = 0; i < 8; ++i) b2.v[i] = 0.1 * (i + 1);

  auto z = model.encode_raw({0.3, -0.7});
  for (int i = 0; i < 8; ++i) CHECK(z[i] == doctest::Approx(0.1 * (i + 1)).epsilon(1e-15));

  // determinism: same input, same encoding
  auto z2 = model.encode_raw({0.3, -0.7});
  for (int i = 0; i < 8; ++i) CHECK(z[i] == z2[i]);
}

TEST_CASE("encode is differentiable: tape Jacobian matches finite differences") {
  KoopmanModel model = fresh_model(2);
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    std::vector<double> cot(8);
    for (auto& v : cot) v = rng.normal();

    auto f = [&](const std::vector<double>& in) {
      Tape t;
      KoopmanLeaves lv = model.bind(t);
      int z = model.encode_node(t, lv, t.constant(Tensor::vec(in)));
      return t.val(t.dot(z, t.constant(Tensor::vec(cot)))).item();
    };
    Tape t;
    KoopmanLeaves lv = model.bind(t);
    int xin = t.leaf("x", Tensor::vec(x));
    int z = model.encode_node(t, lv, xin);
    t.backward(t.dot(z, t.constant(Tensor::vec(cot))));
    auto fd = central_diff(f, x, 1e-6);
    CHECK(rel_err(t.adjoint(xin).v, fd) < 1e-5);
  }
}

TEST_CASE("tape encoder equals the raw encoder, vector and batch") {
  KoopmanModel model = fresh_model(4);
  auto zr = model.encode_raw({0.25, -0.5});
  Tape t;
  KoopmanLeaves lv = model.bind(t);
  int zv = model.encode_node(t, lv, t.constant(Tensor::vec({0.25, -0.5})));
  Tensor X = Tensor::matrix(2, 2, {0.25, -0.5, 0.25, -0.5});
  int zb = model.encode_batch_node(t, lv, t.constant(X));
  for (int i = 0; i < 8; ++i) {
    CHECK(t.val(zv).v[i] == doctest::Approx(zr[i]).epsilon(1e-14));
    CHECK(t.val(zb).at(0, i) == doctest::Approx(zr[i]).epsilon(1e-14));
    CHECK(t.val(zb).at(1, i) == doctest::Approx(zr[i]).epsilon(1e-14));
  }
}

TEST_CASE("rollout: A=I, B=0 freezes the latent state") {
  KoopmanModel model = fresh_model(5);
  // defaults: A=I, B=0; give C some content
  auto& C = model.params().at("koopman/C");
  Rng rng(6);
  for (auto& v : C.v) v = rng.normal();

  auto z0 = model.encode_raw({0.2, 0.4});
  std::vector<std::array<double, 2>> u(5, {0.7, -0.3});
  auto pred = model.rollout({0.2, 0.4}, u);
  REQUIRE(pred.size() == 5);
  std::array<double, 2> expect{0.0, 0.0};
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < 8; ++j) expect[r] += C.at(r, j) * z0[j];
  for (const auto& x : pred) {
    CHECK(x[0] == doctest::Approx(expect[0]).epsilon(1e-13));
    CHECK(x[1] == doctest::Approx(expect[1]).epsilon(1e-13));
  }
}

TEST_CASE("rollout: A=0 makes step k depend only on u_{k-1}") {
  KoopmanModel model = fresh_model(7);
  auto& A = model.params().at("koopman/A");
  for (auto& v : A.v) v = 0.0;
  auto& B = model.params().at("koopman/B");
  Rng rng(8);
  for (auto& v : B.v) v = rng.normal();
  auto& C = model.params().at("koopman/C");
  for (auto& v : C.v) v = rng.normal();

  std::vector<std::array<double, 2>> u1{{0.1, 0.2}, {-0.5, 0.9}, {0.3, 0.3}};
  std::vector<std::array<double, 2>> u2{{-0.8, 0.6}, {-0.5, 0.9}, {0.3, 0.3}};  // differs only at k=0
  auto p1 = model.rollout({0.0, 0.0}, u1);
  auto p2 = model.rollout({0.5, -0.5}, u2);
  // from k=2 on, predictions agree regardless of x0 and u0
  for (std::size_t k = 1; k < 3; ++k) {
    CHECK(p1[k][0] == doctest::Approx(p2[k][0]).epsilon(1e-13));
    CHECK(p1[k][1] == doctest::Approx(p2[k][1]).epsilon(1e-13));
  }
}

TEST_CASE("rollout invokes the encoder exactly once") {
  KoopmanModel model = fresh_model(9);
  model.reset_encode_calls();
  std::vector<std::array<double, 2>> u(12, {0.0, 0.0});
  model.rollout({0.1, 0.1}, u);
  CHECK(model.encode_calls() == 1);
}

TEST_CASE("normalization round-trip is exact to 1e-12") {
  NormStats st;
  st.state_mean = {0.136, 0.73};
  st.state_scale = {0.011, 0.055};
  st.input_mean = {1.0, 350.0};
  st.input_scale = {0.12, 200.0};
  Rng rng(10);
  for (int i = 0; i < 100; ++i) {
    double c = rng.uniform(0.1, 0.17), T = rng.uniform(0.5, 0.9);
    auto n = st.norm_state(c, T);
    auto back = st.denorm_state(n[0], n[1]);
    CHECK(std::fabs(back[0] - c) < 1e-12);
    CHECK(std::fabs(back[1] - T) < 1e-12);
    double rho = rng.uniform(0.8, 1.2), F = rng.uniform(0.0, 700.0);
    auto ni = st.norm_input(rho, F);
    auto bi = st.denorm_input(ni[0], ni[1]);
    CHECK(std::fabs(bi[0] - rho) < 1e-12);
    CHECK(std::fabs(bi[1] - F) < 1e-12);
  }
}

TEST_CASE("reference dataset geometry: 84 trajectories x 480 steps, split 63/21, inputs in the box") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  Rng rng(2023);
  DatasetConfig cfg;  // defaults: 84 x 480 at 15 min
  TrajectoryDataset data = generate_dataset(params, bounds, cfg, rng);

  REQUIRE(data.n_traj() == 84);
  CHECK(data.n_train == 63);
  CHECK(data.n_val() == 21);
  for (int i = 0; i < data.n_traj(); ++i) {
    REQUIRE(data.states[i].shape == std::vector<int>{480, 2});
    REQUIRE(data.inputs[i].shape == std::vector<int>{480, 2});
    for (int k = 0; k < 480; ++k) {
      CHECK(data.inputs[i].at(k, 0) >= bounds.rho_lo);
      CHECK(data.inputs[i].at(k, 0) <= bounds.rho_hi);
      CHECK(data.inputs[i].at(k, 1) >= bounds.F_lo);
      CHECK(data.inputs[i].at(k, 1) <= bounds.F_hi);
    }
  }

  // deterministic per seed
  Rng rng2(2023);
  TrajectoryDataset data2 = generate_dataset(params, bounds, cfg, rng2);
  CHECK(data.states[83].v == data2.states[83].v);

  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "kmpc_dataset_test.ntc";
  data.save(path.string(), 2023);
  TrajectoryDataset loaded = TrajectoryDataset::load(path.string());
  CHECK(loaded.n_traj() == 84);
  CHECK(loaded.n_train == 63);
  CHECK(loaded.states[17].v == data.states[17].v);
  CHECK(loaded.stats.state_mean == data.stats.state_mean);
  fs::remove(path);
}

TEST_CASE("si loss of a perfect model on its own linear-system data is zero") {
  KoopmanModel model = fresh_model(11);
  Rng rng(12);
  auto& A = model.params().at("koopman/A");
  for (auto& v : A.v) v = 0.05 * rng.normal();
  for (int i = 0; i < 8; ++i) A.at(i, i) += 0.8;
  auto& B = model.params().at("koopman/B");
  for (auto& v : B.v) v = 0.1 * rng.normal();
  auto& C = model.params().at("koopman/C");
  for (auto& v : C.v) v = rng.normal();

  const int window = 12;
  TrajectoryDataset data;
  data.cfg.steps = window + 1;
  data.cfg.n_traj = 2;
  data.n_train = 1;
  data.stats = NormStats{};  // identity normalization
  for (int tr = 0; tr < 2; ++tr) {
    std::array<double, 2> x0{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<std::array<double, 2>> u(window + 1);
    for (auto& ui : u) ui = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto pred = model.rollout(x0, u);
    Tensor S = Tensor::zeros({window + 1, 2});
    Tensor U = Tensor::zeros({window + 1, 2});
    S.at(0, 0) = x0[0];
    S.at(0, 1) = x0[1];
    for (int k = 1; k <= window; ++k) {
      S.at(k, 0) = pred[k - 1][0];
      S.at(k, 1) = pred[k - 1][1];
    }
    for (int k = 0; k <= window; ++k) {
      U.at(k, 0) = u[k][0];
      U.at(k, 1) = u[k][1];
    }
    data.states.push_back(S);
    data.inputs.push_back(U);
  }
  double loss = si_window_loss(model, data, {{0, 0}, {1, 0}}, window);
  CHECK(loss < 1e-16);
}

TEST_CASE("si training loss strictly decreases over the first 5 epochs") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  Rng rng(77);
  TrajectoryDataset data = generate_dataset(params, bounds, small_dataset_cfg(), rng);

  KoopmanModel model(KoopmanArch{}, data.stats);
  Rng mrng(78);
  model.init_params(mrng);
  std::vector<std::array<double, 2>> init_states;
  for (int k = 0; k < 200; k += 5)
    init_states.push_back(data.stats.norm_state(data.states[0].at(k, 0), data.states[0].at(k, 1)));
  model.init_decoder(init_states);

  SiConfig cfg;
  cfg.epochs = 5;
  cfg.patience = 5;
  cfg.batches_per_epoch = 40;
  cfg.seed = 79;
  SiResult res = train_si(model, data, cfg);
  REQUIRE(res.train_loss.size() == 5);
  for (int e = 1; e < 5; ++e) CHECK(res.train_loss[e] < res.train_loss[e - 1]);
}

TEST_CASE("short si run already beats the mean predictor at 12 steps") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  Rng rng(101);
  TrajectoryDataset data = generate_dataset(params, bounds, small_dataset_cfg(), rng);

  KoopmanModel model(KoopmanArch{}, data.stats);
  Rng mrng(102);
  model.init_params(mrng);
  std::vector<std::array<double, 2>> init_states;
  for (int k = 0; k < 200; k += 5)
    init_states.push_back(data.stats.norm_state(data.states[0].at(k, 0), data.states[0].at(k, 1)));
  model.init_decoder(init_states);

  SiConfig cfg;
  cfg.epochs = 12;
  cfg.patience = 12;
  cfg.batches_per_epoch = 60;
  cfg.seed = 103;
  train_si(model, data, cfg);

  auto rmse = validation_rmse(model, data, 12);
  auto base = mean_predictor_rmse(data, 12);
  CHECK(rmse[0] < base[0]);
  CHECK(rmse[1] < base[1]);
}

TEST_CASE("seed sweep returns the argmin of validation loss") {
  PlantParams params = PlantParams::defaults();
  StateBounds bounds = StateBounds::from_params(params);
  Rng rng(55);
  DatasetConfig dcfg = small_dataset_cfg();
  dcfg.n_traj = 6;
  dcfg.n_train = 4;
  TrajectoryDataset data = generate_dataset(params, bounds, dcfg, rng);

  SiConfig cfg;
  cfg.epochs = 3;
  cfg.patience = 3;
  cfg.batches_per_epoch = 20;
  SiSweepResult sweep = si_seed_sweep(data, cfg, 3, 500);
  REQUIRE(sweep.val_losses.size() == 3);
  int argmin = 0;
  for (int i = 1; i < 3; ++i)
    if (sweep.val_losses[i] < sweep.val_losses[argmin]) argmin = i;
  CHECK(sweep.best_seed_index == argmin);

  // model save/load round-trip
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "kmpc_model_test.ntc";
  sweep.best_model.save(path.string());
  KoopmanModel loaded = KoopmanModel::load(path.string());
  CHECK(loaded.A().v == sweep.best_model.A().v);
  CHECK(loaded.norm().state_mean == sweep.best_model.norm().state_mean);
  fs::remove(path);
}
