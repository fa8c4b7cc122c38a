#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cistonet/mlp.hpp"

namespace cistonet {

// Four causal-DAG wirings.
//   SimpleConfounding:  Z = mu1(A) + e_z,            Y = mu_out(Z, A) + e_y
//   BasicProxy:         Z = mu1(X) + e_z, A = mu2(Z),    Y = mu_out(Z, A) + e_y
//   OutcomeProxy:       Z = mu1(X) + e_z, A = mu2(Z),    Y = mu_out(Z, A, X) + e_y
//   TreatmentProxy:     Z = mu1(X) + e_z, A = mu2(Z, X), Y = mu_out(Z, A) + e_y
enum class DagVariant { SimpleConfounding, BasicProxy, OutcomeProxy, TreatmentProxy };

enum class TreatmentKind { Continuous, Binary };

DagVariant variant_from_string(const std::string& s);
std::string to_string(DagVariant v);
TreatmentKind treatment_kind_from_string(const std::string& s);
std::string to_string(TreatmentKind k);

inline bool uses_proxy(DagVariant v) { return v != DagVariant::SimpleConfounding; }

struct DatasetTruth {
  std::optional<double> ate;
  Vector cate;             // per-unit tau, empty when undefined
  Matrix z;                // true confounders, empty when unknown
  // simple-confounding generator parameters needed by the analytic
  // marginal-effect oracle
  Vector theta;
  double theta0 = 0.0;
  Vector beta;
  int dgp_kind = -1;
};

struct Dataset {
  Matrix a;                       // n x d_A
  Matrix y;                       // n x d_Y
  std::optional<Matrix> x;        // n x d_X, proxy variants only
  std::optional<DatasetTruth> truth;

  int n() const { return static_cast<int>(a.rows()); }
  int d_a() const { return static_cast<int>(a.cols()); }
  int d_y() const { return static_cast<int>(y.cols()); }
  int d_x() const { return x ? static_cast<int>(x->cols()) : 0; }

  Dataset subset(const std::vector<int>& rows) const;
  void validate_rows() const;  // throws DimensionError on row-count mismatch
};

struct StoNetConfig {
  DagVariant variant = DagVariant::SimpleConfounding;
  TreatmentKind treatment_kind = TreatmentKind::Continuous;
  int d_a = 1, d_y = 1, d_z = 1, d_x = 0;
  std::vector<int> latent_hidden;     // mu1 hidden widths
  std::vector<int> treatment_hidden;  // mu2 hidden widths (proxy variants)
  std::vector<int> outcome_hidden;    // outcome-net hidden widths
  Activation hidden_activation = Activation::Tanh;
  double sigma_z2 = 1e-5, sigma_a2 = 1e-4, sigma_y2 = 1e-3;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
};

struct StoNetModel {
  DagVariant variant;
  TreatmentKind treatment_kind = TreatmentKind::Continuous;
  int d_z = 0;

  MlpSpec latent_spec;     // mu1
  MlpParams latent_params;
  std::optional<MlpSpec> treatment_spec;  // mu2, proxy variants only
  std::optional<MlpParams> treatment_params;
  MlpSpec outcome_spec;    // mu2 in simple confounding, mu3 in proxy variants
  MlpParams outcome_params;

  double sigma_z2 = 0, sigma_a2 = 0, sigma_y2 = 0;

  // prune masks (1 keep / 0 frozen at zero); set at finetune start
  std::optional<MlpParams> latent_mask, treatment_mask, outcome_mask;

  std::uint64_t seed = 0;  // seed lineage root used at init

  int n_modules() const { return treatment_spec ? 3 : 2; }
  long param_count() const;
  double pruned_fraction() const;
  void validate_against(const Dataset& data) const;
};

StoNetModel build_model(const StoNetConfig& config);

// mu1 applied row-wise to A (simple confounding) or X (proxy variants)
Matrix latent_conditional_mean(const StoNetModel& model, const Dataset& data);

// input matrix for the outcome net: (Z, A[, X]) in that column order
Matrix outcome_input(const StoNetModel& model, const Matrix& z, const Matrix& a,
                     const std::optional<Matrix>& x);

// outcome-net mean at the concatenated (Z, A[, X])
Matrix predict_outcome(const StoNetModel& model, const Matrix& z, const Matrix& a,
                       const std::optional<Matrix>& x = std::nullopt);

// Per-row gradient of
//   log pi(Z|input) [+ log pi(A|Z[,X])] + log pi(Y|Z,A[,X])
// with respect to Z.
Matrix latent_log_density_grad(const StoNetModel& model, const Dataset& data,
                               const Matrix& z);

// Conditional log-likelihood gradients of each module w.r.t. its own
// parameters, summed over rows; modules are gradient-isolated.
struct ModuleGrads {
  MlpParams latent;
  std::optional<MlpParams> treatment;
  MlpParams outcome;
};
ModuleGrads param_log_density_grads(const StoNetModel& model, const Dataset& data,
                                    const Matrix& z);

// Scalar total log density (sum of the per-module conditional terms above,
// including normalizing constants). Used by TrainLog and the test oracles.
double total_log_density(const StoNetModel& model, const Dataset& data,
                         const Matrix& z);
double latent_log_density(const StoNetModel& model, const Dataset& data,
                          const Matrix& z);
double treatment_log_density(const StoNetModel& model, const Dataset& data,
                             const Matrix& z);
double outcome_log_density(const StoNetModel& model, const Dataset& data,
                           const Matrix& z);

}  // namespace cistonet
