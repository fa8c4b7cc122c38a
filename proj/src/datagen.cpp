#include "cistonet/datagen.hpp"

#include <cmath>

namespace cistonet {

DgpKind dgp_kind_from_string(const std::string& s) {
  if (s == "separable_confounding") return DgpKind::SeparableConfounding;
  if (s == "nonseparable_confounding") return DgpKind::NonSeparableConfounding;
  if (s == "proxy_sim") return DgpKind::ProxySim;
  if (s == "misspec_basic_proxy") return DgpKind::MisspecBasicProxy;
  if (s == "misspec_outcome_proxy") return DgpKind::MisspecOutcomeProxy;
  if (s == "misspec_treatment_proxy") return DgpKind::MisspecTreatmentProxy;
  throw ConfigError("unknown DGP kind: " + s);
}

std::string to_string(DgpKind k) {
  switch (k) {
    case DgpKind::SeparableConfounding: return "separable_confounding";
    case DgpKind::NonSeparableConfounding: return "nonseparable_confounding";
    case DgpKind::ProxySim: return "proxy_sim";
    case DgpKind::MisspecBasicProxy: return "misspec_basic_proxy";
    case DgpKind::MisspecOutcomeProxy: return "misspec_outcome_proxy";
    case DgpKind::MisspecTreatmentProxy: return "misspec_treatment_proxy";
  }
  return "?";
}

namespace {

constexpr int kSimpleDz = 6;
constexpr int kSimpleDa = 9;
constexpr int kProxyDz = 5;
constexpr int kProxyDx = 100;
constexpr int kMisspecDx = 50;

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

int total_n(const DgpSpec& spec) {
  if (spec.n_train < 1 || spec.n_val < 0 || spec.n_test < 0)
    throw ConfigError("dgp: sizes must be positive");
  return spec.n_train + spec.n_val + spec.n_test;
}

// split rows [0, n_train) / [n_train, n_train+n_val) / rest
void split_three(const Dataset& all, const DgpSpec& spec, GeneratedData& out) {
  std::vector<int> idx;
  auto take = [&](int from, int count) {
    idx.resize(count);
    for (int i = 0; i < count; ++i) idx[i] = from + i;
    return all.subset(idx);
  };
  out.train = take(0, spec.n_train);
  out.val = take(spec.n_train, spec.n_val);
  out.test = take(spec.n_train + spec.n_val, spec.n_test);
}

double trunc_normal(Rng& rng, double mean, double lo, double hi) {
  for (;;) {
    const double x = mean + rng.normal();
    if (x >= lo && x <= hi) return x;
  }
}

}  // namespace

double xi(const Vector& z6, const Vector& beta6) {
  if (z6.size() != kSimpleDz || beta6.size() != kSimpleDz)
    throw DimensionError("xi: needs 6 confounders and 6 coefficients");
  double v = 0.0;
  for (int i = 0; i < 2; ++i) v += beta6[i] * std::sin(z6[i]);
  for (int j = 2; j < 4; ++j) v += beta6[j] * std::cos(z6[j]);
  for (int k = 4; k < 6; ++k) v += 1.0 / (1.0 + std::exp(-beta6[k] * z6[k] + 0.5));
  return v;
}

double treatment_cdf(double c, double a) {
  if (a <= -1.0) return 0.0;
  if (a >= 1.0) return 1.0;
  if (std::abs(c) < 1e-8) return 0.5 * (a + 1.0);
  return (softplus(c * a) - softplus(-c)) / (softplus(c) - softplus(-c));
}

double sample_treatment_inverse_cdf(double c, double u) {
  if (!(u > 0.0 && u < 1.0))
    throw ConfigError("sample_treatment_inverse_cdf: u must be in (0,1)");
  if (std::abs(c) < 1e-8) return 2.0 * u - 1.0;
  const double w = softplus(-c) + u * (softplus(c) - softplus(-c));
  // log(exp(w) - 1), stable for large w
  const double log_expm1 = w > 30.0 ? w + std::log1p(-std::exp(-w))
                                    : std::log(std::expm1(w));
  const double a = log_expm1 / c;
  return std::min(1.0, std::max(-1.0, a));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double beta24_cdf(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double q = 1.0 - u;
  const double q4 = q * q * q * q;
  return 1.0 - q4 * q - 5.0 * u * q4;
}

double proxy_propensity(const Eigen::RowVectorXd& z5) {
  if (z5.size() != kProxyDz) throw DimensionError("proxy_propensity: needs 5 confounders");
  const double m =
      (normal_cdf(z5[0]) + normal_cdf(z5[2]) + normal_cdf(z5[4])) / 3.0;
  return 0.25 * (1.0 + beta24_cdf(m));
}

double proxy_outcome_f(double w) { return 2.0 / (1.0 + std::exp(-w + 0.5)); }

// Frozen from one 1e6-draw Monte Carlo pass of this module's RNG (seed
// 20240917); quadrature reference 0.6335296120562266.
const double kProxyEtaCentering = 0.63352961205622661;

GeneratedData gen_simple_confounding(const DgpSpec& spec) {
  if (spec.kind != DgpKind::SeparableConfounding &&
      spec.kind != DgpKind::NonSeparableConfounding)
    throw ConfigError("gen_simple_confounding: wrong DGP kind");
  const int n = total_n(spec);
  Rng rng(spec.seed);

  Vector beta = spec.beta.size() == kSimpleDz ? spec.beta : Vector::Ones(kSimpleDz);
  Vector theta(kSimpleDa);
  if (spec.theta) {
    if (spec.theta->size() != kSimpleDa)
      throw ConfigError("gen_simple_confounding: theta needs 9 entries");
    theta = *spec.theta;
  } else {
    for (int j = 0; j < kSimpleDa; ++j) theta[j] = rng.uniform(-1.0, 1.0);
  }
  const double theta0 = spec.theta0 ? *spec.theta0 : rng.uniform(-1.0, 1.0);

  Dataset all;
  all.a.resize(n, kSimpleDa);
  all.y.resize(n, 1);
  Matrix z(n, kSimpleDz);
  Vector xi_vals(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kSimpleDz; ++j) z(i, j) = rng.normal();
    const double c = xi(z.row(i).transpose(), beta);
    xi_vals[i] = c;
    for (int j = 0; j < kSimpleDa; ++j)
      all.a(i, j) = sample_treatment_inverse_cdf(c, rng.uniform_open());
    const double f1 = theta.dot(all.a.row(i).cwiseAbs2().transpose());
    double f2 = 0.0;
    for (int p = 0; p < kSimpleDa; ++p)
      for (int q = p + 1; q < kSimpleDa; ++q) f2 += all.a(i, p) * all.a(i, q);
    const double confound =
        spec.kind == DgpKind::SeparableConfounding ? theta0 * f2 : c * f2;
    const double eps = spec.outcome_noise ? rng.normal() : 0.0;
    all.y(i, 0) = f1 - confound + c + eps;
  }

  DatasetTruth truth;
  truth.z = std::move(z);
  truth.theta = theta;
  truth.theta0 = theta0;
  truth.beta = beta;
  truth.dgp_kind = static_cast<int>(spec.kind);
  all.truth = std::move(truth);

  GeneratedData out;
  split_three(all, spec, out);
  out.manifest = DgpManifest{spec.kind, spec.seed,  spec.n_train,
                             spec.n_val, spec.n_test, beta,
                             theta,      theta0,     spec.misspec_gamma,
                             0.0};
  return out;
}

GeneratedData gen_proxy_sim(const DgpSpec& spec) {
  if (spec.kind != DgpKind::ProxySim)
    throw ConfigError("gen_proxy_sim: wrong DGP kind");
  const int n = total_n(spec);
  Rng rng(spec.seed);

  // Oversample until both arms reach their target count, then truncate.
  const int want_treated = n / 2;
  const int want_control = n - want_treated;
  int got_treated = 0, got_control = 0;

  Dataset all;
  all.a.resize(n, 1);
  all.y.resize(n, 1);
  all.x = Matrix(n, kProxyDx);
  Matrix z(n, kProxyDz);
  Vector cate(n);

  int row = 0;
  while (row < n) {
    Eigen::RowVectorXd zi(kProxyDz);
    for (int j = 0; j < kProxyDz; ++j) zi[j] = rng.normal();
    const double mu = zi.mean();
    const double gamma_i = trunc_normal(rng, mu, -10.0, 10.0);
    Eigen::RowVectorXd xi_row(kProxyDx);
    for (int j = 0; j < kProxyDx; ++j)
      xi_row[j] = (gamma_i + trunc_normal(rng, mu, -10.0, 10.0)) / std::sqrt(2.0);
    const double p = proxy_propensity(zi);
    const int a = rng.uniform() < p ? 1 : 0;
    if (a == 1 ? got_treated >= want_treated : got_control >= want_control)
      continue;  // arm full; resample
    (a == 1 ? got_treated : got_control)++;

    const double eta = proxy_outcome_f(zi[0]) * proxy_outcome_f(zi[1]) -
                       kProxyEtaCentering;
    const double c_z = 5.0 * zi[2] / (1.0 + zi[3] * zi[3]) + 2.0 * zi[4];
    const double noise = spec.outcome_noise ? 0.25 * rng.normal() : 0.0;
    all.a(row, 0) = a;
    all.y(row, 0) = c_z + (spec.tau + eta) * a + noise;
    all.x->row(row) = xi_row;
    z.row(row) = zi;
    cate[row] = spec.tau + eta;
    ++row;
  }

  DatasetTruth truth;
  truth.ate = spec.tau;
  truth.cate = std::move(cate);
  truth.z = std::move(z);
  truth.dgp_kind = static_cast<int>(spec.kind);
  all.truth = std::move(truth);

  GeneratedData out;
  split_three(all, spec, out);
  out.manifest = DgpManifest{spec.kind,   spec.seed,  spec.n_train,
                             spec.n_val,  spec.n_test, Vector(),
                             Vector(),    0.0,         spec.misspec_gamma,
                             kProxyEtaCentering};
  return out;
}

GeneratedData gen_dag_misspec(const DgpSpec& spec) {
  if (spec.kind != DgpKind::MisspecBasicProxy &&
      spec.kind != DgpKind::MisspecOutcomeProxy &&
      spec.kind != DgpKind::MisspecTreatmentProxy)
    throw ConfigError("gen_dag_misspec: wrong DGP kind");
  const int n = total_n(spec);
  Rng rng(spec.seed);

  Dataset all;
  all.a.resize(n, 1);
  all.y.resize(n, 1);
  all.x = Matrix(n, kMisspecDx);
  Matrix z(n, kProxyDz);
  Vector cate(n);

  const double x_sd = std::sqrt(0.5);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd zi(kProxyDz);
    for (int j = 0; j < kProxyDz; ++j) zi[j] = rng.normal();
    const double h1 = std::sin(zi[0]) + 0.5 * zi[1] * zi[1] +
                      0.3 * (zi[2] + zi[3] + zi[4]);
    for (int j = 0; j < kMisspecDx; ++j)
      (*all.x)(i, j) = h1 + x_sd * rng.normal();
    const double g_x = all.x->row(i).cwiseAbs().mean();

    const double h2 = 0.7 * zi[0] + 0.3 * zi[1] - 0.2 * zi[2];
    const double score = spec.kind == DgpKind::MisspecTreatmentProxy
                             ? h2 + 0.5 * g_x
                             : h2;
    const int a = rng.uniform() < expit(score) ? 1 : 0;

    const double f_z = zi[0] * zi[0] + 0.5 * zi[1] * zi[2];
    const double tau_z = 3.0 + 0.5 * std::sin(zi[0]);
    const double proxy_term =
        spec.kind == DgpKind::MisspecOutcomeProxy ? spec.misspec_gamma * g_x : 0.0;
    const double noise = spec.outcome_noise ? 0.5 * rng.normal() : 0.0;

    all.a(i, 0) = a;
    all.y(i, 0) = f_z + a * tau_z + proxy_term + noise;
    z.row(i) = zi;
    cate[i] = tau_z;
  }

  DatasetTruth truth;
  truth.ate = 3.0;  // E[0.5 sin z1] = 0
  truth.cate = std::move(cate);
  truth.z = std::move(z);
  truth.dgp_kind = static_cast<int>(spec.kind);
  all.truth = std::move(truth);

  GeneratedData out;
  split_three(all, spec, out);
  out.manifest = DgpManifest{spec.kind,  spec.seed,  spec.n_train,
                             spec.n_val, spec.n_test, Vector(),
                             Vector(),   0.0,         spec.misspec_gamma,
                             0.0};
  return out;
}

GeneratedData generate(const DgpSpec& spec) {
  switch (spec.kind) {
    case DgpKind::SeparableConfounding:
    case DgpKind::NonSeparableConfounding:
      return gen_simple_confounding(spec);
    case DgpKind::ProxySim:
      return gen_proxy_sim(spec);
    default:
      return gen_dag_misspec(spec);
  }
}

TrueMarginalEffects true_marginal_effects(const DatasetTruth& truth,
                                          const Matrix& a) {
  const auto kind = static_cast<DgpKind>(truth.dgp_kind);
  if (kind != DgpKind::SeparableConfounding &&
      kind != DgpKind::NonSeparableConfounding)
    throw ConfigError("true_marginal_effects: defined for the simple-confounding DGPs");
  if (truth.z.rows() != a.rows())
    throw DimensionError("true_marginal_effects: truth/treatment row mismatch");

  const int n = static_cast<int>(a.rows());
  const int d_a = static_cast<int>(a.cols());
  Vector xi_vals(n);
  for (int i = 0; i < n; ++i)
    xi_vals[i] = xi(truth.z.row(i).transpose(), truth.beta);

  TrueMarginalEffects out;
  out.effect.resize(d_a);
  out.sd.resize(d_a);
  Vector per_unit(n);
  const Vector row_sums = a.rowwise().sum();
  for (int j = 0; j < d_a; ++j) {
    for (int i = 0; i < n; ++i) {
      const double f2_slope = row_sums[i] - a(i, j);  // sum_{k != j} a_ik
      const double w = kind == DgpKind::SeparableConfounding ? truth.theta0
                                                             : xi_vals[i];
      per_unit[i] = 2.0 * truth.theta[j] * a(i, j) - w * f2_slope;
    }
    out.effect[j] = per_unit.mean();
    out.sd[j] = std::sqrt((per_unit.array() - out.effect[j]).square().sum() /
                          std::max(1, n - 1));
  }
  return out;
}

}  // namespace cistonet
