#include "cistonet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cistonet {

double lr_at(long k, double base, const Decay& decay) {
  if (k < 0) throw ConfigError("lr_at: k must be >= 0");
  if (!(base > 0.0)) throw ConfigError("lr_at: base rate must be positive");
  if (decay.kind == DecayKind::Harmonic) {
    if (!(decay.alpha > 0.0 && decay.alpha < 1.0))
      throw ConfigError("lr_at: Harmonic decay requires alpha in (0,1)");
    if (!(decay.c_e > 0.0))
      throw ConfigError("lr_at: Harmonic decay requires c_e > 0");
    return base * decay.c_e / (decay.c_e + std::pow(static_cast<double>(k), decay.alpha));
  }
  if (!(decay.alpha > 0.0))
    throw ConfigError("lr_at: Empirical decay requires alpha > 0");
  // 1/lr(k) = 1/base + sum_{j=1..k} j^alpha
  double inv = 1.0 / base;
  for (long j = 1; j <= k; ++j) inv += std::pow(static_cast<double>(j), decay.alpha);
  return 1.0 / inv;
}

void TrainSchedule::validate(int n_modules) const {
  if (pretrain_epochs < 0 || train_epochs < 0 || finetune_epochs < 0)
    throw ConfigError("schedule: stage epochs must be non-negative");
  if (!(eps0 > 0.0)) throw ConfigError("schedule: eps0 must be positive");
  if (static_cast<int>(gamma0.size()) != n_modules)
    throw ConfigError("schedule: gamma0 needs one rate per module (" +
                      std::to_string(n_modules) + ")");
  for (double g : gamma0)
    if (!(g > 0.0)) throw ConfigError("schedule: parameter rates must be positive");
  if (!(eta > 0.0)) throw ConfigError("schedule: eta must be positive");
  if (hmc_steps_per_iter < 1)
    throw ConfigError("schedule: hmc_steps_per_iter must be >= 1");
  if (!(finetune_scale > 0.0))
    throw ConfigError("schedule: finetune_scale must be positive");
  if (eps_decay.kind == DecayKind::Harmonic &&
      !(eps_decay.alpha > 0.0 && eps_decay.alpha < 1.0))
    throw ConfigError("schedule: Harmonic imputation decay needs alpha in (0,1)");
  if (gamma_decay.kind == DecayKind::Harmonic &&
      !(gamma_decay.alpha > 0.0 && gamma_decay.alpha < 1.0))
    throw ConfigError("schedule: Harmonic parameter decay needs alpha in (0,1)");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,stage,log_density,grad_norm_module1,grad_norm_module2,"
        "grad_norm_module3,sigma_z2,pruned_frac,seconds\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.stage << ',' << r.log_density << ','
       << r.grad_norm_m1 << ',' << r.grad_norm_m2 << ',' << r.grad_norm_m3
       << ',' << r.sigma_z2 << ',' << r.pruned_frac << ',' << r.seconds << '\n';
  return os.str();
}

namespace {

Dataset gather_rows(const Dataset& data, const std::vector<int>& rows) {
  return data.subset(rows);
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void apply_masks(StoNetModel& model) {
  if (model.latent_mask) model.latent_params.cwise_mul(*model.latent_mask);
  if (model.treatment_mask && model.treatment_params)
    model.treatment_params->cwise_mul(*model.treatment_mask);
  if (model.outcome_mask) model.outcome_params.cwise_mul(*model.outcome_mask);
}

MlpParams mask_from_keep(const MlpParams& params, const PriorHyper& prior) {
  MlpParams mask = params;
  Vector theta = params.flatten();
  const auto keep = prune_mask(theta, prior);
  Vector m(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) m[i] = keep[i] ? 1.0 : 0.0;
  mask.unflatten(m);
  return mask;
}

}  // namespace

void impute_latent_step(LatentState& state, const StoNetModel& model,
                        const Dataset& data, const std::vector<int>& batch_rows,
                        double eps, double eta, Rng& rng, bool leapfrog) {
  if (!(eps >= 0.0)) throw ConfigError("impute_latent_step: eps must be >= 0");
  if (!(eta >= 0.0)) throw ConfigError("impute_latent_step: eta must be >= 0");
  if (eps == 0.0) return;

  const bool full = batch_rows.empty();
  const Dataset bd = full ? Dataset() : gather_rows(data, batch_rows);
  const Dataset& dref = full ? data : bd;
  const Matrix zb = full ? state.z : gather_rows(state.z, batch_rows);
  const Matrix g = latent_log_density_grad(model, dref, zb);

  const double retain = 1.0 - eps * eta;
  const double noise_sd = std::sqrt(2.0 * eps * eta);
  const Eigen::Index nb = zb.rows();
  Matrix noise(nb, zb.cols());
  for (Eigen::Index i = 0; i < nb; ++i)
    for (Eigen::Index j = 0; j < zb.cols(); ++j) noise(i, j) = rng.normal();

  for (Eigen::Index bi = 0; bi < nb; ++bi) {
    const Eigen::Index i = full ? bi : batch_rows[static_cast<std::size_t>(bi)];
    const auto v_old = state.v.row(i).eval();
    state.v.row(i) = retain * state.v.row(i) + eps * g.row(bi) +
                     noise_sd * noise.row(bi);
    state.z.row(i) += eps * (leapfrog ? state.v.row(i) : v_old);
  }
  if (!state.z.allFinite() || !state.v.allFinite())
    throw NumericError(
        "impute_latent_step: non-finite latent update (imputation rate likely too "
        "large for the configured noise variances)");
}

void update_params_step(StoNetModel& model, const Dataset& batch,
                        const Matrix& z_batch,
                        const std::vector<double>& gammas,
                        const PriorHyper& prior, int full_n,
                        bool normalize_by_n) {
  if (static_cast<int>(gammas.size()) != model.n_modules())
    throw ConfigError("update_params_step: one gamma per module required");
  for (double g : gammas)
    if (!(g > 0.0)) throw ConfigError("update_params_step: gammas must be positive");

  const int m = batch.n();
  if (m < 1) throw ConfigError("update_params_step: empty batch");
  const int n = full_n > 0 ? full_n : m;
  const double lik_scale = static_cast<double>(n) / static_cast<double>(m);
  const double norm = normalize_by_n ? 1.0 / static_cast<double>(n) : 1.0;

  ModuleGrads lik = param_log_density_grads(model, batch, z_batch);

  auto step = [&](MlpParams& params, const MlpParams& lik_grad, double gamma,
                  const std::optional<MlpParams>& mask) {
    MlpParams dir = log_prior_grad(params, prior);
    dir.axpy(lik_scale, lik_grad);
    if (mask) dir.cwise_mul(*mask);
    params.axpy(gamma * norm, dir);
    if (!std::isfinite(params.squared_norm()))
      throw NumericError("update_params_step: non-finite parameter update");
  };

  std::size_t gi = 0;
  step(model.latent_params, lik.latent, gammas[gi++], model.latent_mask);
  if (model.treatment_params)
    step(*model.treatment_params, *lik.treatment, gammas[gi++], model.treatment_mask);
  step(model.outcome_params, lik.outcome, gammas[gi++], model.outcome_mask);
  apply_masks(model);
}

double update_sigma_z(const Matrix& z, const Matrix& mu1_values, double alpha,
                      double beta) {
  if (z.rows() != mu1_values.rows() || z.cols() != mu1_values.cols())
    throw DimensionError("update_sigma_z: shape mismatch");
  const double n = static_cast<double>(z.size());
  if (n < 1.0) throw ConfigError("update_sigma_z: needs at least one residual");
  const double denom = 0.5 * n + alpha - 1.0;
  if (!(denom > 0.0))
    throw ConfigError("update_sigma_z: denominator n/2 + alpha - 1 must be positive");
  return (beta + 0.5 * (z - mu1_values).squaredNorm()) / denom;
}

namespace {

// Deterministic end-to-end gradient step with Z = mu1(input): the latent
// residual term vanishes, so theta1's signal comes from backpropagating the
// treatment/outcome residuals through Z.
void pretrain_step(StoNetModel& model, const Dataset& batch,
                   const std::vector<double>& gammas, const PriorHyper& prior,
                   int full_n, bool normalize_by_n) {
  const int m = batch.n();
  const int n = full_n > 0 ? full_n : m;
  const double lik_scale = static_cast<double>(n) / static_cast<double>(m);
  const double norm = normalize_by_n ? 1.0 / static_cast<double>(n) : 1.0;

  ForwardTrace tr1;
  const Matrix& in1 = uses_proxy(model.variant) ? *batch.x : batch.a;
  const Matrix z = mlp_forward(model.latent_spec, model.latent_params, in1, &tr1);

  Matrix dz = Matrix::Zero(z.rows(), z.cols());
  std::optional<MlpParams> treat_grad;
  if (model.treatment_spec) {
    ForwardTrace tr;
    Matrix in = z;
    if (model.variant == DagVariant::TreatmentProxy) {
      in.resize(z.rows(), z.cols() + batch.x->cols());
      in.leftCols(z.cols()) = z;
      in.rightCols(batch.x->cols()) = *batch.x;
    }
    const Matrix out = mlp_forward(*model.treatment_spec, *model.treatment_params, in, &tr);
    MlpGradients g;
    if (model.treatment_kind == TreatmentKind::Binary)
      g = mlp_backward_preact(*model.treatment_spec, *model.treatment_params, tr,
                              batch.a - out);
    else
      g = mlp_backward(*model.treatment_spec, *model.treatment_params, tr,
                       (batch.a - out) / model.sigma_a2);
    treat_grad = std::move(g.params);
    dz += g.input.leftCols(z.cols());
  }
  MlpParams out_grad;
  {
    ForwardTrace tr;
    const Matrix in = outcome_input(model, z, batch.a, batch.x);
    const Matrix out = mlp_forward(model.outcome_spec, model.outcome_params, in, &tr);
    MlpGradients g = mlp_backward(model.outcome_spec, model.outcome_params, tr,
                                  (batch.y - out) / model.sigma_y2);
    out_grad = std::move(g.params);
    dz += g.input.leftCols(z.cols());
  }
  const MlpParams latent_grad =
      mlp_backward(model.latent_spec, model.latent_params, tr1, dz).params;

  auto step = [&](MlpParams& params, const MlpParams& lik_grad, double gamma,
                  const std::optional<MlpParams>& mask) {
    MlpParams dir = log_prior_grad(params, prior);
    dir.axpy(lik_scale, lik_grad);
    if (mask) dir.cwise_mul(*mask);
    params.axpy(gamma * norm, dir);
  };
  std::size_t gi = 0;
  step(model.latent_params, latent_grad, gammas[gi++], model.latent_mask);
  if (model.treatment_params)
    step(*model.treatment_params, *treat_grad, gammas[gi++], model.treatment_mask);
  step(model.outcome_params, out_grad, gammas[gi++], model.outcome_mask);
  if (!std::isfinite(model.latent_params.squared_norm()) ||
      !std::isfinite(model.outcome_params.squared_norm()))
    throw NumericError("pretrain: non-finite parameter update");
}

std::vector<std::vector<int>> make_batches(int n, int minibatch, Rng& rng) {
  if (minibatch <= 0 || minibatch >= n) return {{}};  // sentinel: all rows
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += minibatch) {
    const int end = std::min(n, start + minibatch);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

double grad_norm(const MlpParams& g) { return std::sqrt(g.squared_norm()); }

}  // namespace

TrainResult train(StoNetModel model, const Dataset& data,
                  const TrainSchedule& schedule, const PriorHyper& prior) {
  model.validate_against(data);
  schedule.validate(model.n_modules());
  prior.validate();

  const int n = data.n();
  Rng rng(schedule.seed);
  TrainResult result;
  result.state.z = latent_conditional_mean(model, data);
  result.state.v = Matrix::Zero(n, model.d_z);

  long k = 0;  // decay step counter; starts with the train stage
  double cur_eps = schedule.eps0;
  std::vector<double> cur_gammas = schedule.gamma0;
  auto advance_decay = [&]() {
    ++k;
    if (schedule.eps_decay.kind == DecayKind::Empirical) {
      const double kk = std::pow(static_cast<double>(k), schedule.eps_decay.alpha);
      cur_eps = cur_eps / (1.0 + cur_eps * kk);
    } else {
      cur_eps = lr_at(k, schedule.eps0, schedule.eps_decay);
    }
    for (std::size_t i = 0; i < cur_gammas.size(); ++i) {
      if (schedule.gamma_decay.kind == DecayKind::Empirical) {
        const double kk = std::pow(static_cast<double>(k), schedule.gamma_decay.alpha);
        cur_gammas[i] = cur_gammas[i] / (1.0 + cur_gammas[i] * kk);
      } else {
        cur_gammas[i] = lr_at(k, schedule.gamma0[i], schedule.gamma_decay);
      }
    }
  };

  int epoch = 0;
  auto log_epoch = [&](const std::string& stage, double seconds) {
    TrainLogRow row;
    row.epoch = epoch;
    row.stage = stage;
    row.log_density = total_log_density(model, data, result.state.z);
    ModuleGrads g = param_log_density_grads(model, data, result.state.z);
    row.grad_norm_m1 = grad_norm(g.latent);
    if (g.treatment) {
      row.grad_norm_m2 = grad_norm(*g.treatment);
      row.grad_norm_m3 = grad_norm(g.outcome);
    } else {
      row.grad_norm_m2 = grad_norm(g.outcome);
      row.grad_norm_m3 = 0.0;
    }
    row.sigma_z2 = model.sigma_z2;
    row.pruned_frac = model.pruned_fraction();
    row.seconds = seconds;
    result.log.rows.push_back(row);
    ++epoch;
  };

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  try {
    // pretrain: vanilla deterministic steps, no decay, Z pinned at mu1
    for (int e = 0; e < schedule.pretrain_epochs; ++e) {
      for (const auto& rows : make_batches(n, schedule.minibatch, rng)) {
        if (rows.empty())
          pretrain_step(model, data, schedule.gamma0, prior, n, schedule.normalize_by_n);
        else
          pretrain_step(model, gather_rows(data, rows), schedule.gamma0, prior, n,
                        schedule.normalize_by_n);
      }
      result.state.z = latent_conditional_mean(model, data);
      log_epoch("pretrain", elapsed());
    }

    auto run_stage = [&](const std::string& stage, int epochs, double rate_scale) {
      for (int e = 0; e < epochs; ++e) {
        for (const auto& rows : make_batches(n, schedule.minibatch, rng)) {
          for (int h = 0; h < schedule.hmc_steps_per_iter; ++h)
            impute_latent_step(result.state, model, data, rows,
                               rate_scale * cur_eps, schedule.eta, rng,
                               schedule.leapfrog);
          std::vector<double> gammas = cur_gammas;
          for (double& g : gammas) g *= rate_scale;
          if (rows.empty())
            update_params_step(model, data, result.state.z, gammas, prior, n,
                               schedule.normalize_by_n);
          else
            update_params_step(model, gather_rows(data, rows),
                               gather_rows(result.state.z, rows), gammas, prior,
                               n, schedule.normalize_by_n);
          advance_decay();
        }
        if (schedule.update_sigma_z_each_epoch)
          model.sigma_z2 = update_sigma_z(result.state.z,
                                          latent_conditional_mean(model, data),
                                          schedule.sigma_z_alpha,
                                          schedule.sigma_z_beta);
        log_epoch(stage, elapsed());
      }
    };

    run_stage("train", schedule.train_epochs, 1.0);

    if (schedule.finetune_epochs > 0) {
      model.latent_mask = mask_from_keep(model.latent_params, prior);
      if (model.treatment_params)
        model.treatment_mask = mask_from_keep(*model.treatment_params, prior);
      model.outcome_mask = mask_from_keep(model.outcome_params, prior);
      apply_masks(model);
      run_stage("finetune", schedule.finetune_epochs, schedule.finetune_scale);
    }
  } catch (const NumericError& err) {
    throw NumericError(std::string(err.what()) + " [epoch " +
                       std::to_string(epoch) + ", step " + std::to_string(k) + "]");
  }

  result.model = std::move(model);
  return result;
}

LatentState continue_training(StoNetModel& model, const Dataset& data,
                              double eps, const std::vector<double>& gammas,
                              double eta, int epochs, int minibatch,
                              int hmc_steps_per_iter, const PriorHyper& prior,
                              bool normalize_by_n, bool leapfrog, Rng& rng) {
  model.validate_against(data);
  const int n = data.n();
  LatentState state;
  state.z = latent_conditional_mean(model, data);
  state.v = Matrix::Zero(n, model.d_z);
  for (int e = 0; e < epochs; ++e) {
    for (const auto& rows : make_batches(n, minibatch, rng)) {
      for (int h = 0; h < hmc_steps_per_iter; ++h)
        impute_latent_step(state, model, data, rows, eps, eta, rng, leapfrog);
      if (rows.empty())
        update_params_step(model, data, state.z, gammas, prior, n, normalize_by_n);
      else
        update_params_step(model, gather_rows(data, rows),
                           gather_rows(state.z, rows), gammas, prior, n,
                           normalize_by_n);
    }
  }
  return state;
}

}  // namespace cistonet
