#include "kmpc/koopman.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "kmpc/checkpoint.hpp"

namespace kmpc {

namespace {
const char* kA = "koopman/A";
const char* kB = "koopman/B";
const char* kC = "koopman/C";
std::string w_name(int layer) { return "koopman/enc/W" + std::to_string(layer); }
std::string b_name(int layer) { return "koopman/enc/b" + std::to_string(layer); }
}  // namespace

KoopmanModel::KoopmanModel(KoopmanArch arch, NormStats norm) : arch_(std::move(arch)), norm_(std::move(norm)) {}

void KoopmanModel::init_params(Rng& rng) {
  params_.clear();
  const int d = arch_.latent_dim;

  Tensor A = Tensor::zeros({d, d});
  for (int i = 0; i < d; ++i) A.at(i, i) = 1.0;
  params_.emplace(kA, std::move(A));
  params_.emplace(kB, Tensor::zeros({d, arch_.input_dim}));
  params_.emplace(kC, Tensor::zeros({arch_.state_dim, d}));

  std::vector<int> dims;
  dims.push_back(arch_.state_dim);
  for (int h : arch_.hidden) dims.push_back(h);
  dims.push_back(d);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    int fan_in = dims[l], fan_out = dims[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor W = Tensor::zeros({fan_out, fan_in});
    for (auto& v : W.v) v = rng.uniform(-bound, bound);
    Tensor bias = Tensor::zeros({fan_out});
    for (auto& v : bias.v) v = rng.uniform(-bound, bound);
    params_.emplace(w_name(static_cast<int>(l)), std::move(W));
    params_.emplace(b_name(static_cast<int>(l)), std::move(bias));
  }
}

void KoopmanModel::init_decoder(const std::vector<std::array<double, 2>>& norm_states, double ridge) {
  const int d = arch_.latent_dim;
  const int n = static_cast<int>(norm_states.size());
  Eigen::MatrixXd Z(n, d);
  Eigen::MatrixXd X(n, arch_.state_dim);
  for (int i = 0; i < n; ++i) {
    auto z = encode_raw(norm_states[i]);
    for (int j = 0; j < d; ++j) Z(i, j) = z[j];
    X(i, 0) = norm_states[i][0];
    X(i, 1) = norm_states[i][1];
  }
  Eigen::MatrixXd gram = Z.transpose() * Z + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd Ct = gram.ldlt().solve(Z.transpose() * X);  // d x state_dim
  Tensor& C = params_.at(kC);
  for (int r = 0; r < arch_.state_dim; ++r)
    for (int c = 0; c < d; ++c) C.at(r, c) = Ct(c, r);
}

KoopmanLeaves KoopmanModel::bind(Tape& tape) const {
  KoopmanLeaves lv;
  lv.A = tape.leaf(kA, params_.at(kA));
  lv.B = tape.leaf(kB, params_.at(kB));
  lv.C = tape.leaf(kC, params_.at(kC));
  for (std::size_t l = 0; l <= arch_.hidden.size(); ++l) {
    lv.W.push_back(tape.leaf(w_name(static_cast<int>(l)), params_.at(w_name(static_cast<int>(l)))));
    lv.b.push_back(tape.leaf(b_name(static_cast<int>(l)), params_.at(b_name(static_cast<int>(l)))));
  }
  return lv;
}

int KoopmanModel::encode_node(Tape& tape, const KoopmanLeaves& lv, int x_norm) const {
  ++encode_calls_;
  int h = x_norm;
  for (std::size_t l = 0; l < lv.W.size(); ++l) {
    h = tape.add(tape.matmul(lv.W[l], h), lv.b[l]);
    if (l + 1 < lv.W.size()) h = tape.tanh_(h);
  }
  return h;
}

int KoopmanModel::encode_batch_node(Tape& tape, const KoopmanLeaves& lv, int X_norm) const {
  ++encode_calls_;
  int n = tape.val(X_norm).rows();
  int ones = tape.constant(Tensor::full({n, 1}, 1.0));
  int H = X_norm;
  for (std::size_t l = 0; l < lv.W.size(); ++l) {
    int bias_rows = tape.matmul(ones, lv.b[l], false, true);
    H = tape.add(tape.matmul(H, lv.W[l], false, true), bias_rows);
    if (l + 1 < lv.W.size()) H = tape.tanh_(H);
  }
  return H;
}

int KoopmanModel::latent_step_node(Tape& tape, const KoopmanLeaves& lv, int z, int u) const {
  return tape.add(tape.matmul(lv.A, z), tape.matmul(lv.B, u));
}

int KoopmanModel::latent_step_batch_node(Tape& tape, const KoopmanLeaves& lv, int Z, int U) const {
  return tape.add(tape.matmul(Z, lv.A, false, true), tape.matmul(U, lv.B, false, true));
}

int KoopmanModel::decode_node(Tape& tape, const KoopmanLeaves& lv, int z) const {
  return tape.matmul(lv.C, z);
}

int KoopmanModel::decode_batch_node(Tape& tape, const KoopmanLeaves& lv, int Z) const {
  return tape.matmul(Z, lv.C, false, true);
}

std::vector<double> KoopmanModel::encode_raw(const std::array<double, 2>& x_norm) const {
  ++encode_calls_;
  std::vector<double> h(x_norm.begin(), x_norm.end());
  for (std::size_t l = 0; l <= arch_.hidden.size(); ++l) {
    const Tensor& W = params_.at(w_name(static_cast<int>(l)));
    const Tensor& bias = params_.at(b_name(static_cast<int>(l)));
    std::vector<double> out(W.rows());
    for (int r = 0; r < W.rows(); ++r) {
      double acc = bias.v[r];
      for (int c = 0; c < W.cols(); ++c) acc += W.at(r, c) * h[c];
      out[r] = (l + 1 <= arch_.hidden.size()) ? std::tanh(acc) : acc;
    }
    h = std::move(out);
  }
  return h;
}

std::vector<std::array<double, 2>> KoopmanModel::rollout(const std::array<double, 2>& x0_norm,
                                                         const std::vector<std::array<double, 2>>& u_norm) const {
  const Tensor& A = this->A();
  const Tensor& B = this->B();
  const Tensor& C = this->C();
  const int d = arch_.latent_dim;
  std::vector<double> z = encode_raw(x0_norm);
  std::vector<std::array<double, 2>> out;
  out.reserve(u_norm.size());
  std::vector<double> zn(d);
  for (const auto& u : u_norm) {
    for (int i = 0; i < d; ++i) {
      double acc = B.at(i, 0) * u[0] + B.at(i, 1) * u[1];
      for (int j = 0; j < d; ++j) acc += A.at(i, j) * z[j];
      zn[i] = acc;
    }
    z = zn;
    std::array<double, 2> x{0.0, 0.0};
    for (int r = 0; r < 2; ++r)
      for (int j = 0; j < d; ++j) x[r] += C.at(r, j) * z[j];
    out.push_back(x);
  }
  return out;
}

void KoopmanModel::save(const std::string& path) const {
  nlohmann::json meta;
  meta["arch"] = {{"state_dim", arch_.state_dim},
                  {"input_dim", arch_.input_dim},
                  {"latent_dim", arch_.latent_dim},
                  {"hidden", arch_.hidden}};
  meta["norm"] = {{"state_mean", norm_.state_mean},
                  {"state_scale", norm_.state_scale},
                  {"input_mean", norm_.input_mean},
                  {"input_scale", norm_.input_scale}};
  save_tensors(path, params_, meta);
}

KoopmanModel KoopmanModel::load(const std::string& path) {
  TensorContainer c = load_tensors(path);
  KoopmanArch arch;
  NormStats norm;
  const auto& meta = c.metadata;
  arch.state_dim = meta.at("arch").at("state_dim").get<int>();
  arch.input_dim = meta.at("arch").at("input_dim").get<int>();
  arch.latent_dim = meta.at("arch").at("latent_dim").get<int>();
  arch.hidden = meta.at("arch").at("hidden").get<std::vector<int>>();
  norm.state_mean = meta.at("norm").at("state_mean").get<std::vector<double>>();
  norm.state_scale = meta.at("norm").at("state_scale").get<std::vector<double>>();
  norm.input_mean = meta.at("norm").at("input_mean").get<std::vector<double>>();
  norm.input_scale = meta.at("norm").at("input_scale").get<std::vector<double>>();
  KoopmanModel model(arch, norm);
  model.params_ = std::move(c.tensors);
  return model;
}

}  // namespace kmpc
