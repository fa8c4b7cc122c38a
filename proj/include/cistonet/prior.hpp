#pragma once

#include <string>
#include <vector>

#include "cistonet/mlp.hpp"

namespace cistonet {

// Two-component mixture Gaussian (spike-and-slab) prior on network
// parameters. Both components are properly normalized densities.
struct PriorHyper {
  double lambda_n;  // slab mixture proportion, in (0,1)
  double sigma0;    // spike std
  double sigma1;    // slab std

  static PriorHyper from_variances(double lambda_n, double sigma0_sq,
                                   double sigma1_sq);
  void validate() const;  // throws ConfigError

  // |theta*| at which the weighted component densities cross; entries with
  // |theta| above it are kept by prune_mask.
  double prune_threshold() const;
};

double log_prior(const Vector& theta, const PriorHyper& hyper);
Vector log_prior_grad(const Vector& theta, const PriorHyper& hyper);

double log_prior(const MlpParams& params, const PriorHyper& hyper);
MlpParams log_prior_grad(const MlpParams& params, const PriorHyper& hyper);

// keep[i] == true iff the slab dominates: lambda*N(theta_i;0,sigma1^2) >=
// (1-lambda)*N(theta_i;0,sigma0^2)
std::vector<bool> prune_mask(const Vector& theta, const PriorHyper& hyper);

// Advisory check of the prior-hyperparameter window
//   (n/K_n)^c < lambda_n < n/K_n
//   (n/K_n)^c < sigma_0 < min{1 - n/K_n, delta_n / sqrt(c log K_n - (c-1) log n)}
// Non-fatal; never blocks training.
struct HyperValidity {
  bool lambda_ok = false;
  bool sigma0_ok = false;
  double lambda_lo = 0, lambda_hi = 0;
  double sigma0_lo = 0, sigma0_hi = 0;
  std::vector<std::string> warnings;
  bool all_ok() const { return lambda_ok && sigma0_ok; }
};

HyperValidity validate_hyper(long n, long K_n, const PriorHyper& hyper,
                             double delta_n, double c = 1.1);

}  // namespace cistonet
