#pragma once

#include <optional>
#include <vector>

#include "cistonet/prior.hpp"
#include "cistonet/rng.hpp"
#include "cistonet/stonet.hpp"
#include "cistonet/trainer.hpp"

namespace cistonet {

// Logistic regression (affine score + sigmoid) fit by gradient ascent on the
// mean log-likelihood, Barzilai-Borwein step, tolerance 1e-8 on the gradient
// norm or 500 iterations.
struct PropensityModel {
  Vector coef;  // intercept first, then one slope per latent column
  Vector predict(const Matrix& z) const;
};

PropensityModel fit_propensity(const Matrix& z, const Vector& a);

struct OverlapOptions {
  int burn_in = 200;
  int thin = 10;
  double eps = -1.0;  // <=0: auto, 0.3 * sqrt(sigma_z2)
  double eta = -1.0;  // <=0: auto, 0.5 / eps
};

struct OverlapReport {
  double alpha = 0;
  int B = 0;
  Vector s_values;   // per posterior draw: fraction of extreme propensities
  double s_bar = 0;  // mean of s_values
};

// For b = 1..B: one posterior Z draw per unit from an impute_latent_step
// chain (initialized at mu1, burn-in then thinning), a propensity fit on
// (Z^(b), A), and S_alpha^(b) = (1/n) sum 1{e_i < alpha or e_i > 1 - alpha}.
OverlapReport overlap_stress_test(const StoNetModel& model, const Dataset& data,
                                  double alpha, int B, Rng& rng,
                                  const OverlapOptions& opts = {});

struct BootstrapOptions {
  int B = 100;
  double level = 0.95;
  int short_epochs = 20;
  double eps = 1e-4;                // imputation rate for the short phase
  std::vector<double> gammas;       // per-module rates for the short phase
  double eta = 1.0;
  int minibatch = 0;
  int hmc_steps_per_iter = 1;
  bool normalize_by_n = true;
  bool leapfrog = false;
  int M = 100;                      // estimator draws per unit
  double sigma_z_alpha = 1.0, sigma_z_beta = 1.0;
  std::optional<double> fixed_sigma_z2;  // bypass the per-replicate re-estimate
  int threads = 1;
};

struct BootstrapResult {
  double tau_hat = 0;   // full-data estimate (passed through)
  Vector taus;          // per-replicate estimates, replicate order
  double lower = 0, upper = 0;
  double level = 0;
};

// Warm-start percentile bootstrap: each replicate resamples rows with
// replacement, copies the trained (pruned) parameters, runs a short
// Algorithm 1 phase, and recomputes the ATE. Deterministic given seed;
// replicate-level parallelism never changes the result.
BootstrapResult bootstrap_ci(const StoNetModel& trained, const Dataset& data,
                             const PriorHyper& prior, double tau_hat,
                             const BootstrapOptions& opts, std::uint64_t seed);

}  // namespace cistonet
