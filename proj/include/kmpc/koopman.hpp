#pragma once

#include <array>
#include <string>
#include <vector>

#include "kmpc/adam.hpp"
#include "kmpc/rng.hpp"
#include "kmpc/tape.hpp"

namespace kmpc {

// Per-channel affine normalization for model inputs and outputs.
struct NormStats {
  std::vector<double> state_mean{0.0, 0.0};
  std::vector<double> state_scale{1.0, 1.0};
  std::vector<double> input_mean{0.0, 0.0};
  std::vector<double> input_scale{1.0, 1.0};

  std::array<double, 2> norm_state(double c, double T) const {
    return {(c - state_mean[0]) / state_scale[0], (T - state_mean[1]) / state_scale[1]};
  }
  std::array<double, 2> denorm_state(double cn, double Tn) const {
    return {state_mean[0] + state_scale[0] * cn, state_mean[1] + state_scale[1] * Tn};
  }
  std::array<double, 2> norm_input(double rho, double F) const {
    return {(rho - input_mean[0]) / input_scale[0], (F - input_mean[1]) / input_scale[1]};
  }
  std::array<double, 2> denorm_input(double rn, double Fn) const {
    return {input_mean[0] + input_scale[0] * rn, input_mean[1] + input_scale[1] * Fn};
  }
};

struct KoopmanArch {
  int state_dim = 2;
  int input_dim = 2;
  int latent_dim = 8;
  std::vector<int> hidden{4, 6};
};

// Tape leaf ids of the trainable parameters, valid for one tape.
struct KoopmanLeaves {
  int A = -1, B = -1, C = -1;
  std::vector<int> W, b;
};

// Lifted-linear surrogate: nonlinear encoder psi into a latent space with
// linear dynamics z+ = A z + B u and linear readout x_hat = C z. The encoder
// is applied once, at the start of a prediction window.
class KoopmanModel {
 public:
  KoopmanModel() : KoopmanModel(KoopmanArch{}, NormStats{}) {}
  KoopmanModel(KoopmanArch arch, NormStats norm);

  // Encoder weights get uniform fan-in init, A starts at the identity and B
  // at zero so the latent recursion is stable before training.
  void init_params(Rng& rng);
  // C from a ridge least-squares fit of states onto their encodings.
  void init_decoder(const std::vector<std::array<double, 2>>& norm_states, double ridge = 1e-9);

  KoopmanLeaves bind(Tape& tape) const;

  // x_norm: 2-vector node -> latent 8-vector node
  int encode_node(Tape& tape, const KoopmanLeaves& lv, int x_norm) const;
  // X_norm: (n x 2) matrix node -> (n x latent) matrix node
  int encode_batch_node(Tape& tape, const KoopmanLeaves& lv, int X_norm) const;
  int latent_step_node(Tape& tape, const KoopmanLeaves& lv, int z, int u) const;
  int latent_step_batch_node(Tape& tape, const KoopmanLeaves& lv, int Z, int U) const;
  int decode_node(Tape& tape, const KoopmanLeaves& lv, int z) const;
  int decode_batch_node(Tape& tape, const KoopmanLeaves& lv, int Z) const;

  // Off-tape K-step prediction in normalized units; the encoder runs only at
  // k = 0 and the latent state is propagated linearly.
  std::vector<std::array<double, 2>> rollout(const std::array<double, 2>& x0_norm,
                                             const std::vector<std::array<double, 2>>& u_norm) const;
  std::vector<double> encode_raw(const std::array<double, 2>& x_norm) const;

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const KoopmanArch& arch() const { return arch_; }
  const NormStats& norm() const { return norm_; }
  NormStats& norm() { return norm_; }

  const Tensor& A() const { return params_.at("koopman/A"); }
  const Tensor& B() const { return params_.at("koopman/B"); }
  const Tensor& C() const { return params_.at("koopman/C"); }

  void save(const std::string& path) const;
  static KoopmanModel load(const std::string& path);

  long encode_calls() const { return encode_calls_; }
  void reset_encode_calls() { encode_calls_ = 0; }

 private:
  KoopmanArch arch_;
  NormStats norm_;
  ParamRegistry params_;
  mutable long encode_calls_ = 0;
};

}  // namespace kmpc
