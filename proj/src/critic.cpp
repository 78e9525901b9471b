#include "kmpc/critic.hpp"

#include <cmath>
#include <stdexcept>

namespace kmpc {

Critic::Critic(int input_dim, std::vector<int> hidden, std::string name_prefix)
    : input_dim_(input_dim), hidden_(std::move(hidden)), prefix_(std::move(name_prefix)) {}

std::string Critic::layer_name(const char* kind, int layer) const {
  return prefix_ + "/" + kind + std::to_string(layer);
}

void Critic::init_params(Rng& rng) {
  params_.clear();
  std::vector<int> dims;
  dims.push_back(input_dim_);
  for (int h : hidden_) dims.push_back(h);
  dims.push_back(1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    Tensor W = Tensor::zeros({dims[l + 1], dims[l]});
    for (auto& v : W.v) v = rng.uniform(-bound, bound);
    Tensor b = Tensor::zeros({dims[l + 1]});
    for (auto& v : b.v) v = rng.uniform(-bound, bound);
    params_.emplace(layer_name("W", static_cast<int>(l)), std::move(W));
    params_.emplace(layer_name("b", static_cast<int>(l)), std::move(b));
  }
}

Critic::Leaves Critic::bind(Tape& tape) const {
  Leaves lv;
  for (std::size_t l = 0; l <= hidden_.size(); ++l) {
    lv.W.push_back(tape.leaf(layer_name("W", static_cast<int>(l)), params_.at(layer_name("W", static_cast<int>(l)))));
    lv.b.push_back(tape.leaf(layer_name("b", static_cast<int>(l)), params_.at(layer_name("b", static_cast<int>(l)))));
  }
  return lv;
}

int Critic::value_node(Tape& tape, const Leaves& lv, int obs_node) const {
  int h = obs_node;
  for (std::size_t l = 0; l < lv.W.size(); ++l) {
    h = tape.add(tape.matmul(lv.W[l], h), lv.b[l]);
    if (l + 1 < lv.W.size()) h = tape.elu(h);
  }
  return h;
}

int Critic::value_batch_node(Tape& tape, const Leaves& lv, int obs_matrix) const {
  int n = tape.val(obs_matrix).rows();
  int ones = tape.constant(Tensor::full({n, 1}, 1.0));
  int h = obs_matrix;
  for (std::size_t l = 0; l < lv.W.size(); ++l) {
    h = tape.add(tape.matmul(h, lv.W[l], false, true), tape.matmul(ones, lv.b[l], false, true));
    if (l + 1 < lv.W.size()) h = tape.elu(h);
  }
  return h;
}

double Critic::value(const std::vector<double>& obs) const {
  if (static_cast<int>(obs.size()) != input_dim_)
    throw std::runtime_error("critic: obs dim " + std::to_string(obs.size()) + " != " + std::to_string(input_dim_));
  std::vector<double> h = obs;
  for (std::size_t l = 0; l <= hidden_.size(); ++l) {
    const Tensor& W = params_.at(layer_name("W", static_cast<int>(l)));
    const Tensor& b = params_.at(layer_name("b", static_cast<int>(l)));
    std::vector<double> out(W.rows());
    for (int r = 0; r < W.rows(); ++r) {
      double acc = b.v[r];
      for (int c = 0; c < W.cols(); ++c) acc += W.at(r, c) * h[c];
      out[r] = (l < hidden_.size() && acc <= 0.0) ? std::expm1(acc) : acc;
    }
    h = std::move(out);
  }
  return h[0];
}

void Critic::soft_update_from(const Critic& src, double tau) {
  for (auto& [name, t] : params_) {
    // source registry uses its own prefix; match by suffix after '/'
    auto pos = name.find('/');
    const Tensor& s = src.params_.at(src.prefix_ + name.substr(pos));
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = (1.0 - tau) * t.v[i] + tau * s.v[i];
  }
}

}  // namespace kmpc
