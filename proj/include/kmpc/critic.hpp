#pragma once

#include <string>
#include <vector>

#include "kmpc/adam.hpp"
#include "kmpc/rng.hpp"
#include "kmpc/tape.hpp"

namespace kmpc {

// Feedforward value network with ELU activations.
class Critic {
 public:
  Critic() = default;
  Critic(int input_dim, std::vector<int> hidden, std::string name_prefix = "critic");

  void init_params(Rng& rng);

  struct Leaves {
    std::vector<int> W, b;
  };
  Leaves bind(Tape& tape) const;
  int value_node(Tape& tape, const Leaves& lv, int obs_node) const;  // scalar node
  // batched values for an (n x input_dim) observation matrix -> (n x 1)
  int value_batch_node(Tape& tape, const Leaves& lv, int obs_matrix) const;
  double value(const std::vector<double>& obs) const;

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  int input_dim() const { return input_dim_; }

  // this <- (1 - tau) * this + tau * src
  void soft_update_from(const Critic& src, double tau);

 private:
  std::string layer_name(const char* kind, int layer) const;

  int input_dim_ = 0;
  std::vector<int> hidden_;
  std::string prefix_ = "critic";
  ParamRegistry params_;
};

}  // namespace kmpc
