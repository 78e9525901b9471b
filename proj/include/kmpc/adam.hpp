#pragma once

#include <map>
#include <string>

#include "kmpc/tensor.hpp"

namespace kmpc {

// Named master copies of trainable tensors. std::map keeps iteration (and
// therefore flattened-gradient and update) order deterministic.
using ParamRegistry = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments

  explicit AdamState(double learning_rate = 1e-3) : lr(learning_rate) {}
};

// One Adam update with bias correction over all parameters present in grads.
// Parameters without a gradient entry are left untouched. Throws on non-finite
// gradients, naming the offending parameter.
void adam_step(ParamRegistry& params, const GradMap& grads, AdamState& state);

// Flatten gradients in registry order into one vector (used for gradient
// direction studies).
std::vector<double> flatten_grads(const ParamRegistry& params, const GradMap& grads);

}  // namespace kmpc
