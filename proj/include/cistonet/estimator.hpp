#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cistonet/rng.hpp"
#include "cistonet/stonet.hpp"

namespace cistonet {

// Monte-Carlo potential-outcome machinery. For every unit i the latent draws
// are z_i^(l) ~ N(mu1(input_i), sigma_z2 * I) with input_i the observed A_i
// (simple confounding) or X_i (proxy variants); the intervention value
// replaces the observed treatment in the outcome net for every unit.
struct EstimateOptions {
  int M = 100;                 // draws per unit
  double sigma_z2 = 0.0;       // >= 0; typically the Eq.-style re-estimate
  std::uint64_t seed = 0;
};

struct PsiEstimate {
  double value = 0;
  double se = 0;         // from the per-unit means
  double mc_se = 0;      // Monte-Carlo error of the pooled mean at this M
  Vector per_unit;       // unit-level Monte Carlo means
};

PsiEstimate potential_outcome(const StoNetModel& model, const Dataset& data,
                              const Eigen::RowVectorXd& a,
                              const EstimateOptions& opts);

// psi_hat(1) - psi_hat(0) for a scalar binary treatment; the z-draws are
// shared between arms (common random numbers).
double ate(const StoNetModel& model, const Dataset& data,
           const EstimateOptions& opts);

// Per-unit treatment-effect contrasts with shared draws across arms.
Vector cate_per_unit(const StoNetModel& model, const Dataset& data,
                     const EstimateOptions& opts);

// Symmetric finite-difference contrast around each unit's observed
// treatment: effect_j = mean_i mean_l [mu(z, a_i + d e_j) - mu(z, a_i - d e_j)] / (2d).
struct MarginalEffects {
  Vector effect;    // d_A
  Vector se;        // d_A, from per-unit contrast spread
  Matrix per_unit;  // n x d_A
};

MarginalEffects marginal_effects(const StoNetModel& model, const Dataset& data,
                                 double delta, const EstimateOptions& opts);

// sqrt(mean((tau_hat - tau_true)^2))
double pehe(const Vector& cate_hat, const Vector& cate_true);

struct MetricRecord {
  std::string name;
  double value = 0;
  double sd = 0;  // across datasets (MAE only)
  int n_datasets = 0;
};

MetricRecord mae_ate(const std::vector<double>& estimates,
                     const std::vector<double>& truths);
MetricRecord rmse_ate(const std::vector<double>& estimates,
                      const std::vector<double>& truths);

// Map from labelled treatment value to its estimate; what `estimate` exports.
struct CausalEstimate {
  std::map<std::string, PsiEstimate> psi;
  std::optional<double> ate;
  Vector cate;
  std::optional<MarginalEffects> marginal;
  int M = 0;
  std::uint64_t seed = 0;
};

}  // namespace cistonet
