#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cistonet/prior.hpp"
#include "cistonet/rng.hpp"
#include "cistonet/stonet.hpp"

namespace cistonet {

// Per-observation imputed confounders and HMC momenta.
struct LatentState {
  Matrix z;  // n x d_z
  Matrix v;  // n x d_z
};

enum class DecayKind { Harmonic, Empirical };

struct Decay {
  DecayKind kind = DecayKind::Empirical;
  double alpha = 0.95;
  double c_e = 1.0;  // Harmonic offset; must be > 0
};

// Rate at step k.
//   Harmonic:  base * c_e / (c_e + k^alpha), alpha in (0,1)
//   Empirical: lr(0) = base, lr(k) = lr(k-1) / (1 + lr(k-1) * k^alpha)
double lr_at(long k, double base, const Decay& decay);

struct TrainSchedule {
  int pretrain_epochs = 100;
  int train_epochs = 500;
  int finetune_epochs = 100;
  double eps0 = 1e-3;               // initial imputation rate
  std::vector<double> gamma0;       // initial parameter rate per module
  double eta = 1.0;                 // SGHMC friction
  Decay eps_decay{DecayKind::Empirical, 0.95, 1.0};
  Decay gamma_decay{DecayKind::Empirical, 0.7, 1.0};
  int hmc_steps_per_iter = 1;
  int minibatch = 0;                // 0 (or >= n) = full data
  double finetune_scale = 0.1;      // rate multiplier during finetune
  // Divide the (already n/m-rescaled) update direction by n so the printed
  // Appendix-style rates are usable; disable for the literal sum form.
  bool normalize_by_n = true;
  bool leapfrog = false;            // Z update uses v^(k+1) instead of v^(k)
  bool update_sigma_z_each_epoch = false;
  double sigma_z_alpha = 1.0, sigma_z_beta = 1.0;
  std::uint64_t seed = 0;

  void validate(int n_modules) const;
};

struct TrainLogRow {
  int epoch = 0;
  std::string stage;
  double log_density = 0;
  double grad_norm_m1 = 0, grad_norm_m2 = 0, grad_norm_m3 = 0;
  double sigma_z2 = 0;
  double pruned_frac = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
};

// One SGHMC imputation update on the given rows (all rows when batch_rows is
// empty):
//   v <- (1 - eps*eta) v + eps * grad_Z log pi(Z | ...) + sqrt(2 eps eta) e
//   Z <- Z + eps * v_old        (v_new when leapfrog is set)
void impute_latent_step(LatentState& state, const StoNetModel& model,
                        const Dataset& data, const std::vector<int>& batch_rows,
                        double eps, double eta, Rng& rng, bool leapfrog = false);

// One parameter ascent step per module on its own conditional log-likelihood
// plus the prior. batch/z_batch hold the minibatch rows; full_n <= 0 means
// full_n = batch size (literal Algorithm 1 form). Pruned entries stay zero.
void update_params_step(StoNetModel& model, const Dataset& batch,
                        const Matrix& z_batch,
                        const std::vector<double>& gammas,
                        const PriorHyper& prior, int full_n = -1,
                        bool normalize_by_n = false);

// Closed-form inverse-gamma posterior mode for sigma_z^2 given residuals
// Z - mu1; the count n is the number of scalar latent components.
double update_sigma_z(const Matrix& z, const Matrix& mu1_values, double alpha,
                      double beta);

struct TrainResult {
  StoNetModel model;
  TrainLog log;
  LatentState state;  // final imputed confounders / momenta
};

TrainResult train(StoNetModel model, const Dataset& data,
                  const TrainSchedule& schedule, const PriorHyper& prior);

// Warm-start continuation used by the bootstrap: runs `epochs` epochs of the
// Algorithm 1 loop at fixed rates, keeping existing prune masks frozen.
LatentState continue_training(StoNetModel& model, const Dataset& data,
                              double eps, const std::vector<double>& gammas,
                              double eta, int epochs, int minibatch,
                              int hmc_steps_per_iter, const PriorHyper& prior,
                              bool normalize_by_n, bool leapfrog, Rng& rng);

}  // namespace cistonet
