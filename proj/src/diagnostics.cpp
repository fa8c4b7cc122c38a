#include "cistonet/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "cistonet/estimator.hpp"
#include "cistonet/util.hpp"

namespace cistonet {

namespace {
inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Vector PropensityModel::predict(const Matrix& z) const {
  if (z.cols() + 1 != coef.size())
    throw DimensionError("propensity predict: column count mismatch");
  Vector score = Vector::Constant(z.rows(), coef[0]) + z * coef.tail(z.cols());
  return score.unaryExpr([](double s) { return expit(s); });
}

PropensityModel fit_propensity(const Matrix& z, const Vector& a) {
  const Eigen::Index n = z.rows();
  if (a.size() != n) throw DimensionError("fit_propensity: row mismatch");
  double n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (a[i] != 0.0 && a[i] != 1.0)
      throw ConfigError("fit_propensity: treatment must be 0/1");
    n_pos += a[i];
  }
  if (n_pos == 0 || n_pos == static_cast<double>(n))
    throw ConfigError("fit_propensity: single-class treatment, degenerate fit");

  Matrix x(n, z.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(z.cols()) = z;

  const double nn = static_cast<double>(n);
  Vector beta = Vector::Zero(x.cols());
  auto grad_at = [&](const Vector& b) -> Vector {
    Vector p = (x * b).unaryExpr([](double s) { return expit(s); });
    return x.transpose() * (a - p) / nn;
  };

  // conservative default step ~ 1/L, L <= 0.25 * mean ||x_i||^2
  const double step0 = 1.0 / std::max(0.25 * x.rowwise().squaredNorm().mean(), 1e-12);
  Vector g = grad_at(beta);
  Vector beta_prev = beta, g_prev = g;
  double step = step0;
  for (int it = 0; it < 500 && g.norm() > 1e-8; ++it) {
    if (it > 0) {
      const Vector s = beta - beta_prev;
      const Vector yv = g - g_prev;
      const double sy = s.dot(yv);
      step = sy < 0.0 ? std::min(s.squaredNorm() / -sy, 1e3) : step0;
    }
    beta_prev = beta;
    g_prev = g;
    beta += step * g;
    g = grad_at(beta);
  }
  return PropensityModel{beta};
}

OverlapReport overlap_stress_test(const StoNetModel& model, const Dataset& data,
                                  double alpha, int B, Rng& rng,
                                  const OverlapOptions& opts) {
  if (!(alpha > 0.0 && alpha < 0.5))
    throw ConfigError("overlap_stress_test: alpha must be in (0, 0.5)");
  if (B < 1) throw ConfigError("overlap_stress_test: B must be >= 1");
  model.validate_against(data);

  const double eps = opts.eps > 0.0 ? opts.eps : 0.3 * std::sqrt(model.sigma_z2);
  const double eta = opts.eta > 0.0 ? opts.eta : 0.5 / eps;

  LatentState state;
  state.z = latent_conditional_mean(model, data);
  state.v = Matrix::Zero(data.n(), model.d_z);
  const std::vector<int> all_rows;  // empty = full data

  for (int t = 0; t < opts.burn_in; ++t)
    impute_latent_step(state, model, data, all_rows, eps, eta, rng);

  OverlapReport report;
  report.alpha = alpha;
  report.B = B;
  report.s_values.resize(B);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < opts.thin; ++t)
      impute_latent_step(state, model, data, all_rows, eps, eta, rng);
    const PropensityModel pm = fit_propensity(state.z, data.a.col(0));
    const Vector e = pm.predict(state.z);
    double extreme = 0;
    for (Eigen::Index i = 0; i < e.size(); ++i)
      if (e[i] < alpha || e[i] > 1.0 - alpha) extreme += 1.0;
    report.s_values[b] = extreme / static_cast<double>(e.size());
  }
  report.s_bar = report.s_values.mean();
  return report;
}

BootstrapResult bootstrap_ci(const StoNetModel& trained, const Dataset& data,
                             const PriorHyper& prior, double tau_hat,
                             const BootstrapOptions& opts, std::uint64_t seed) {
  if (opts.B < 2) throw ConfigError("bootstrap_ci: B must be >= 2");
  if (!(opts.level > 0.0 && opts.level < 1.0))
    throw ConfigError("bootstrap_ci: level must be in (0,1)");
  if (opts.short_epochs > 0 &&
      static_cast<int>(opts.gammas.size()) != trained.n_modules())
    throw ConfigError("bootstrap_ci: one gamma per module required");

  const int n = data.n();
  std::vector<double> taus(opts.B);
  parallel_for(opts.B, opts.threads, [&](int b) {
    Rng rep_rng(derive_seed(seed, {0xb0, static_cast<std::uint64_t>(b)}));
    std::vector<int> rows(n);
    for (int i = 0; i < n; ++i) rows[i] = rep_rng.uniform_int(n);
    const Dataset resampled = data.subset(rows);

    StoNetModel m = trained;  // warm start from the pruned parameters
    LatentState st;
    if (opts.short_epochs > 0) {
      st = continue_training(m, resampled, opts.eps, opts.gammas, opts.eta,
                             opts.short_epochs, opts.minibatch,
                             opts.hmc_steps_per_iter, prior,
                             opts.normalize_by_n, opts.leapfrog, rep_rng);
    } else {
      st.z = latent_conditional_mean(m, resampled);
    }
    const double sigma_z2 =
        opts.fixed_sigma_z2
            ? *opts.fixed_sigma_z2
            : update_sigma_z(st.z, latent_conditional_mean(m, resampled),
                             opts.sigma_z_alpha, opts.sigma_z_beta);
    EstimateOptions eo;
    eo.M = opts.M;
    eo.sigma_z2 = sigma_z2;
    eo.seed = derive_seed(seed, {0xe5, static_cast<std::uint64_t>(b)});
    taus[b] = ate(m, resampled, eo);
  });

  BootstrapResult result;
  result.tau_hat = tau_hat;
  result.taus = Eigen::Map<const Vector>(taus.data(), static_cast<Eigen::Index>(taus.size()));
  result.level = opts.level;
  std::vector<double> sorted = taus;
  std::sort(sorted.begin(), sorted.end());
  const double tail = (1.0 - opts.level) / 2.0;
  result.lower = sorted_quantile(sorted, tail);
  result.upper = sorted_quantile(sorted, 1.0 - tail);
  return result;
}

}  // namespace cistonet
