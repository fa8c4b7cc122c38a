#pragma once

#include <optional>
#include <string>

#include "cistonet/rng.hpp"
#include "cistonet/stonet.hpp"

namespace cistonet {

enum class DgpKind {
  SeparableConfounding,
  NonSeparableConfounding,
  ProxySim,
  MisspecBasicProxy,
  MisspecOutcomeProxy,
  MisspecTreatmentProxy,
};

DgpKind dgp_kind_from_string(const std::string& s);
std::string to_string(DgpKind k);

struct DgpSpec {
  DgpKind kind = DgpKind::SeparableConfounding;
  int n_train = 1000, n_val = 500, n_test = 500;
  std::uint64_t seed = 0;

  // configurable constants; defaults follow the reference recipes
  Vector beta;                        // xi coefficients, default ones(6)
  std::optional<Vector> theta;        // f1 coefficients; default U(-1,1)^9 per dataset
  std::optional<double> theta0;       // default U(-1,1) per dataset
  double tau = 3.0;
  double misspec_gamma = 0.5;         // proxy term weight, outcome-depending scenario
  bool outcome_noise = true;          // tests may force epsilon = 0
};

struct DgpManifest {
  DgpKind kind;
  std::uint64_t seed = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  Vector beta, theta;
  double theta0 = 0.0;
  double misspec_gamma = 0.0;
  double centering_constant = 0.0;  // ProxySim eta-centering term
};

struct GeneratedData {
  Dataset train, val, test;
  DgpManifest manifest;
};

// --- pieces exposed for oracles/tests ---

// xi(Z) = sum_{i<=2} b_i sin z_i + sum_{j=3,4} b_j cos z_j
//       + sum_{k=5,6} 1 / (1 + exp(-b_k z_k + 0.5))
double xi(const Vector& z6, const Vector& beta6);

// Closed-form inversion of F(a) = [softplus(c a) - softplus(-c)] /
// [softplus(c) - softplus(-c)] on [-1, 1]; c -> 0 limit is uniform.
double sample_treatment_inverse_cdf(double c, double u);
double treatment_cdf(double c, double a);  // analytic F used by KS oracles

double normal_cdf(double x);
double beta24_cdf(double u);  // Beta(2,4) CDF
// 0.25 * (1 + B24((Phi(z1)+Phi(z3)+Phi(z5))/3)), in [0.25, 0.5]
double proxy_propensity(const Eigen::RowVectorXd& z5);
double proxy_outcome_f(double w);  // f(w) = 2 / (1 + exp(-w + 0.5))

// E[f(z1) f(z2)] frozen from a one-off 1e6-draw Monte Carlo run.
extern const double kProxyEtaCentering;

GeneratedData gen_simple_confounding(const DgpSpec& spec);
GeneratedData gen_proxy_sim(const DgpSpec& spec);
GeneratedData gen_dag_misspec(const DgpSpec& spec);
GeneratedData generate(const DgpSpec& spec);

// Analytic marginal-effect oracle for the simple-confounding settings: the
// estimator's symmetric-difference contrast applied to the noiseless outcome
// function (exact for any delta since f1, f2 are quadratic in a).
struct TrueMarginalEffects {
  Vector effect;  // mean over units, per treatment component
  Vector sd;      // spread over units
};
TrueMarginalEffects true_marginal_effects(const DatasetTruth& truth,
                                          const Matrix& a);

}  // namespace cistonet
