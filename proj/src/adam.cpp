#include "kmpc/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace kmpc {

void adam_step(ParamRegistry& params, const GradMap& grads, AdamState& state) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.v.size() != p.v.size())
      throw std::runtime_error("adam: gradient shape mismatch for '" + name + "'");
    if (!g.all_finite()) throw std::runtime_error("adam: non-finite gradient for parameter '" + name + "'");

    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      m.v[i] = state.beta1 * m.v[i] + (1.0 - state.beta1) * g.v[i];
      v.v[i] = state.beta2 * v.v[i] + (1.0 - state.beta2) * g.v[i] * g.v[i];
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      p.v[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

std::vector<double> flatten_grads(const ParamRegistry& params, const GradMap& grads) {
  std::vector<double> out;
  for (const auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      out.insert(out.end(), p.v.size(), 0.0);
    } else {
      out.insert(out.end(), git->second.v.begin(), git->second.v.end());
    }
  }
  return out;
}

}  // namespace kmpc
