#pragma once

#include <vector>

#include "kmpc/config.hpp"
#include "kmpc/koopman.hpp"

namespace kmpc {

// cos(v, w) = <v, w> / (|v| |w|); throws on zero vectors.
double cosine_similarity(const std::vector<double>& v, const std::vector<double>& w);

// mean over all n(n-1)/2 pairs
double mean_pairwise_cosine(const std::vector<std::vector<double>>& grads);

enum class GradStudyAlgorithm { Shac, Ppo };

struct GradStudyResult {
  double mean_pairwise = 0.0;
  int n_recorded = 0;
  int n_excluded_zero = 0;
  std::vector<std::vector<double>> gradients;  // flattened in registry order
};

// Freezes the policy parameters at the given model, fits the critic to the
// frozen policy, then records n policy gradients without applying them.
GradStudyResult gradient_similarity_study(GradStudyAlgorithm algorithm, const RunConfig& cfg,
                                          const KoopmanModel& model);

}  // namespace kmpc
