#include "cistonet/estimator.hpp"

#include <cmath>

namespace cistonet {

namespace {

void check_binary_treatment(const StoNetModel& model, const Dataset& data) {
  if (data.d_a() != 1)
    throw ConfigError("ate/cate require a scalar treatment");
  for (Eigen::Index i = 0; i < data.a.rows(); ++i) {
    const double v = data.a(i, 0);
    if (v != 0.0 && v != 1.0)
      throw ConfigError("ate/cate require a binary treatment (observed values 0/1)");
  }
}

// Evaluates the outcome net at a set of intervention treatment matrices,
// sharing the latent draws across all of them. Returns per-unit MC means,
// one column per intervention, plus per-unit mean squared values for SEs.
struct PooledEval {
  Matrix unit_means;   // n x n_arms
  Matrix unit_sumsq;   // n x n_arms, sum of squared per-draw values
  int M = 0;
};

PooledEval pooled_eval(const StoNetModel& model, const Dataset& data,
                       const std::vector<Matrix>& treatments,
                       const EstimateOptions& opts) {
  model.validate_against(data);
  if (opts.M < 1) throw ConfigError("estimator: M must be >= 1");
  if (opts.sigma_z2 < 0.0) throw ConfigError("estimator: sigma_z2 must be >= 0");
  if (data.d_y() != 1)
    throw ConfigError("estimator: potential-outcome estimands need a scalar outcome");

  const int n = data.n();
  const Matrix mu1 = latent_conditional_mean(model, data);
  const double sd = std::sqrt(opts.sigma_z2);
  Rng rng(derive_seed(opts.seed, {0x5a}));

  PooledEval out;
  out.M = opts.M;
  out.unit_means = Matrix::Zero(n, static_cast<Eigen::Index>(treatments.size()));
  out.unit_sumsq = Matrix::Zero(n, static_cast<Eigen::Index>(treatments.size()));
  Matrix z(n, model.d_z);
  for (int l = 0; l < opts.M; ++l) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < model.d_z; ++j)
        z(i, j) = mu1(i, j) + sd * rng.normal();
    for (std::size_t t = 0; t < treatments.size(); ++t) {
      const Matrix y = predict_outcome(model, z, treatments[t], data.x);
      out.unit_means.col(static_cast<Eigen::Index>(t)) += y.col(0);
      out.unit_sumsq.col(static_cast<Eigen::Index>(t)) += y.col(0).cwiseAbs2();
    }
  }
  out.unit_means /= static_cast<double>(opts.M);
  return out;
}

// Monte-Carlo error of the pooled mean: (1/n^2) sum_i s_i^2 / M with s_i^2
// the per-unit draw variance.
double pooled_mc_se(const PooledEval& ev, Eigen::Index col) {
  if (ev.M < 2) return 0.0;
  const double n = static_cast<double>(ev.unit_means.rows());
  const double M = static_cast<double>(ev.M);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ev.unit_means.rows(); ++i) {
    const double mean = ev.unit_means(i, col);
    const double var =
        std::max(0.0, (ev.unit_sumsq(i, col) - M * mean * mean) / (M - 1.0));
    acc += var;
  }
  return std::sqrt(acc / (n * n * M));
}

PsiEstimate summarize(const Vector& per_unit) {
  PsiEstimate e;
  e.per_unit = per_unit;
  const double n = static_cast<double>(per_unit.size());
  e.value = per_unit.mean();
  if (per_unit.size() > 1) {
    const double var =
        (per_unit.array() - e.value).square().sum() / (n - 1.0);
    e.se = std::sqrt(var / n);
  }
  return e;
}

}  // namespace

PsiEstimate potential_outcome(const StoNetModel& model, const Dataset& data,
                              const Eigen::RowVectorXd& a,
                              const EstimateOptions& opts) {
  if (a.size() != data.d_a())
    throw DimensionError("potential_outcome: intervention width != d_A");
  Matrix arm = a.replicate(data.n(), 1);
  const PooledEval ev = pooled_eval(model, data, {std::move(arm)}, opts);
  PsiEstimate e = summarize(ev.unit_means.col(0));
  e.mc_se = pooled_mc_se(ev, 0);
  return e;
}

Vector cate_per_unit(const StoNetModel& model, const Dataset& data,
                     const EstimateOptions& opts) {
  check_binary_treatment(model, data);
  const int n = data.n();
  std::vector<Matrix> arms{Matrix::Ones(n, 1), Matrix::Zero(n, 1)};
  const PooledEval ev = pooled_eval(model, data, arms, opts);
  return ev.unit_means.col(0) - ev.unit_means.col(1);
}

double ate(const StoNetModel& model, const Dataset& data,
           const EstimateOptions& opts) {
  return cate_per_unit(model, data, opts).mean();
}

MarginalEffects marginal_effects(const StoNetModel& model, const Dataset& data,
                                 double delta, const EstimateOptions& opts) {
  if (model.treatment_kind == TreatmentKind::Binary)
    throw ConfigError("marginal_effects: defined for continuous treatments");
  if (!(delta > 0.0)) throw ConfigError("marginal_effects: delta must be positive");

  const int n = data.n();
  const int d_a = data.d_a();
  std::vector<Matrix> arms;
  arms.reserve(2 * static_cast<std::size_t>(d_a));
  for (int j = 0; j < d_a; ++j) {
    Matrix up = data.a, dn = data.a;
    up.col(j).array() += delta;
    dn.col(j).array() -= delta;
    arms.push_back(std::move(up));
    arms.push_back(std::move(dn));
  }
  const PooledEval ev = pooled_eval(model, data, arms, opts);

  MarginalEffects me;
  me.effect.resize(d_a);
  me.se.resize(d_a);
  me.per_unit.resize(n, d_a);
  for (int j = 0; j < d_a; ++j) {
    me.per_unit.col(j) =
        (ev.unit_means.col(2 * j) - ev.unit_means.col(2 * j + 1)) / (2.0 * delta);
    const PsiEstimate s = summarize(me.per_unit.col(j));
    me.effect[j] = s.value;
    me.se[j] = s.se;
  }
  return me;
}

double pehe(const Vector& cate_hat, const Vector& cate_true) {
  if (cate_hat.size() != cate_true.size())
    throw DimensionError("pehe: length mismatch");
  if (cate_hat.size() == 0) throw DimensionError("pehe: empty input");
  return std::sqrt((cate_hat - cate_true).squaredNorm() /
                   static_cast<double>(cate_hat.size()));
}

MetricRecord mae_ate(const std::vector<double>& estimates,
                     const std::vector<double>& truths) {
  if (estimates.size() != truths.size() || estimates.empty())
    throw DimensionError("mae_ate: length mismatch or empty");
  const double n = static_cast<double>(estimates.size());
  double mean = 0.0;
  std::vector<double> abs_err(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    abs_err[i] = std::abs(estimates[i] - truths[i]);
    mean += abs_err[i];
  }
  mean /= n;
  double sd = 0.0;
  if (estimates.size() > 1) {
    for (double e : abs_err) sd += (e - mean) * (e - mean);
    sd = std::sqrt(sd / (n - 1.0));
  }
  return MetricRecord{"MAE_ATE", mean, sd, static_cast<int>(estimates.size())};
}

MetricRecord rmse_ate(const std::vector<double>& estimates,
                      const std::vector<double>& truths) {
  if (estimates.size() != truths.size() || estimates.empty())
    throw DimensionError("rmse_ate: length mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i)
    s += (estimates[i] - truths[i]) * (estimates[i] - truths[i]);
  return MetricRecord{"RMSE_ATE",
                      std::sqrt(s / static_cast<double>(estimates.size())), 0.0,
                      static_cast<int>(estimates.size())};
}

}  // namespace cistonet
