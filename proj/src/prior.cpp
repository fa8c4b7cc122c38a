#include "cistonet/prior.hpp"

#include <cmath>
#include <limits>

namespace cistonet {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

struct ComponentLogs {
  double la;  // log[(1-lambda) N(theta; 0, sigma0^2)]
  double lb;  // log[lambda N(theta; 0, sigma1^2)]
};

inline ComponentLogs component_logs(double theta, const PriorHyper& h) {
  const double t2 = theta * theta;
  ComponentLogs c;
  c.la = std::log1p(-h.lambda_n) - std::log(h.sigma0) - 0.5 * kLog2Pi -
         0.5 * t2 / (h.sigma0 * h.sigma0);
  c.lb = std::log(h.lambda_n) - std::log(h.sigma1) - 0.5 * kLog2Pi -
         0.5 * t2 / (h.sigma1 * h.sigma1);
  return c;
}
}  // namespace

PriorHyper PriorHyper::from_variances(double lambda_n, double sigma0_sq,
                                      double sigma1_sq) {
  PriorHyper h{lambda_n, std::sqrt(sigma0_sq), std::sqrt(sigma1_sq)};
  h.validate();
  return h;
}

void PriorHyper::validate() const {
  if (!(lambda_n > 0.0 && lambda_n < 1.0))
    throw ConfigError("prior: lambda_n must be in (0,1)");
  if (!(sigma0 > 0.0 && sigma1 > 0.0))
    throw ConfigError("prior: sigma0 and sigma1 must be positive");
  if (!(sigma0 <= sigma1))
    throw ConfigError("prior: requires sigma0 <= sigma1 (spike narrower than slab)");
}

double PriorHyper::prune_threshold() const {
  if (sigma0 == sigma1) return 0.0;
  const double num = 2.0 * std::log((1.0 - lambda_n) * sigma1 / (lambda_n * sigma0));
  const double den = 1.0 / (sigma0 * sigma0) - 1.0 / (sigma1 * sigma1);
  if (num <= 0.0) return 0.0;  // slab dominates everywhere
  return std::sqrt(num / den);
}

double log_prior(const Vector& theta, const PriorHyper& hyper) {
  if (!theta.allFinite()) throw NumericError("log_prior: non-finite theta");
  double total = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const auto c = component_logs(theta[i], hyper);
    const double m = std::max(c.la, c.lb);
    total += m + std::log1p(std::exp(std::min(c.la, c.lb) - m));
  }
  return total;
}

Vector log_prior_grad(const Vector& theta, const PriorHyper& hyper) {
  if (!theta.allFinite()) throw NumericError("log_prior_grad: non-finite theta");
  Vector g(theta.size());
  const double inv_s0 = 1.0 / (hyper.sigma0 * hyper.sigma0);
  const double inv_s1 = 1.0 / (hyper.sigma1 * hyper.sigma1);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const auto c = component_logs(theta[i], hyper);
    const double m = std::max(c.la, c.lb);
    const double wa = std::exp(c.la - m);
    const double wb = std::exp(c.lb - m);
    const double r0 = wa / (wa + wb);  // spike responsibility
    const double r1 = wb / (wa + wb);
    g[i] = -theta[i] * (r0 * inv_s0 + r1 * inv_s1);
  }
  return g;
}

double log_prior(const MlpParams& params, const PriorHyper& hyper) {
  return log_prior(params.flatten(), hyper);
}

MlpParams log_prior_grad(const MlpParams& params, const PriorHyper& hyper) {
  MlpParams g = params;
  g.unflatten(log_prior_grad(params.flatten(), hyper));
  return g;
}

std::vector<bool> prune_mask(const Vector& theta, const PriorHyper& hyper) {
  std::vector<bool> keep(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const auto c = component_logs(theta[i], hyper);
    keep[i] = c.lb >= c.la;
  }
  return keep;
}

HyperValidity validate_hyper(long n, long K_n, const PriorHyper& hyper,
                             double delta_n, double c) {
  HyperValidity v;
  if (n < 1 || K_n < 1) {
    v.warnings.push_back("validate_hyper: n and K_n must be >= 1; skipped");
    return v;
  }
  const double ratio = static_cast<double>(n) / static_cast<double>(K_n);
  if (ratio >= 1.0)
    v.warnings.push_back("validate_hyper: intended regime is K_n > n");

  v.lambda_lo = std::pow(ratio, c);
  v.lambda_hi = ratio;
  v.lambda_ok = hyper.lambda_n > v.lambda_lo && hyper.lambda_n < v.lambda_hi;
  if (!v.lambda_ok)
    v.warnings.push_back("lambda_n=" + std::to_string(hyper.lambda_n) +
                         " outside ((n/K_n)^c, n/K_n) = (" +
                         std::to_string(v.lambda_lo) + ", " +
                         std::to_string(v.lambda_hi) + ")");

  const double root = c * std::log(static_cast<double>(K_n)) -
                      (c - 1.0) * std::log(static_cast<double>(n));
  v.sigma0_lo = v.lambda_lo;
  v.sigma0_hi = std::min(1.0 - ratio,
                         root > 0.0 ? delta_n / std::sqrt(root)
                                    : std::numeric_limits<double>::infinity());
  v.sigma0_ok = hyper.sigma0 > v.sigma0_lo && hyper.sigma0 < v.sigma0_hi;
  if (!v.sigma0_ok)
    v.warnings.push_back("sigma0=" + std::to_string(hyper.sigma0) +
                         " outside ((n/K_n)^c, " + std::to_string(v.sigma0_hi) +
                         ")");
  return v;
}

}  // namespace cistonet
