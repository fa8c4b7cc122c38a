#include "cistonet/stonet.hpp"

#include <cmath>

#include "cistonet/rng.hpp"

namespace cistonet {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

double gaussian_loglik(const Matrix& resid, double sigma2) {
  const double n_terms = static_cast<double>(resid.size());
  return -0.5 * n_terms * (kLog2Pi + std::log(sigma2)) -
         resid.squaredNorm() / (2.0 * sigma2);
}

// numerically stable log(1 + exp(x))
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// sum_i a log p + (1-a) log(1-p) with p = sigmoid(s), via pre-activations
double bernoulli_loglik(const Matrix& a, const Matrix& s) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      total += a(i, j) * (-softplus(-s(i, j))) +
               (1.0 - a(i, j)) * (-softplus(s(i, j)));
  return total;
}
}  // namespace

DagVariant variant_from_string(const std::string& s) {
  if (s == "simple_confounding") return DagVariant::SimpleConfounding;
  if (s == "basic_proxy") return DagVariant::BasicProxy;
  if (s == "outcome_proxy") return DagVariant::OutcomeProxy;
  if (s == "treatment_proxy") return DagVariant::TreatmentProxy;
  throw ConfigError("unknown DAG variant: " + s);
}

std::string to_string(DagVariant v) {
  switch (v) {
    case DagVariant::SimpleConfounding: return "simple_confounding";
    case DagVariant::BasicProxy: return "basic_proxy";
    case DagVariant::OutcomeProxy: return "outcome_proxy";
    case DagVariant::TreatmentProxy: return "treatment_proxy";
  }
  return "?";
}

TreatmentKind treatment_kind_from_string(const std::string& s) {
  if (s == "continuous") return TreatmentKind::Continuous;
  if (s == "binary") return TreatmentKind::Binary;
  throw ConfigError("unknown treatment kind: " + s);
}

std::string to_string(TreatmentKind k) {
  return k == TreatmentKind::Continuous ? "continuous" : "binary";
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.a.resize(m, a.cols());
  out.y.resize(m, y.cols());
  if (x) out.x = Matrix(m, x->cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    out.a.row(i) = a.row(rows[i]);
    out.y.row(i) = y.row(rows[i]);
    if (x) out.x->row(i) = x->row(rows[i]);
  }
  if (truth) {
    DatasetTruth t;
    t.ate = truth->ate;
    t.theta = truth->theta;
    t.theta0 = truth->theta0;
    t.beta = truth->beta;
    t.dgp_kind = truth->dgp_kind;
    if (truth->cate.size() > 0) {
      t.cate.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) t.cate[i] = truth->cate[rows[i]];
    }
    if (truth->z.size() > 0) {
      t.z.resize(m, truth->z.cols());
      for (Eigen::Index i = 0; i < m; ++i) t.z.row(i) = truth->z.row(rows[i]);
    }
    out.truth = std::move(t);
  }
  return out;
}

void Dataset::validate_rows() const {
  if (y.rows() != a.rows())
    throw DimensionError("dataset: Y row count != A row count");
  if (x && x->rows() != a.rows())
    throw DimensionError("dataset: X row count != A row count");
}

long StoNetModel::param_count() const {
  long k = latent_params.param_count() + outcome_params.param_count();
  if (treatment_params) k += treatment_params->param_count();
  return k;
}

double StoNetModel::pruned_fraction() const {
  if (!latent_mask) return 0.0;
  double zeros = 0.0, total = 0.0;
  auto count = [&](const MlpParams& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      zeros += (m.weights[l].array() == 0.0).count() +
               (m.biases[l].array() == 0.0).count();
      total += m.weights[l].size() + m.biases[l].size();
    }
  };
  count(*latent_mask);
  if (treatment_mask) count(*treatment_mask);
  count(*outcome_mask);
  return zeros / total;
}

void StoNetModel::validate_against(const Dataset& data) const {
  data.validate_rows();
  const bool proxy = uses_proxy(variant);
  if (proxy && !data.x)
    throw DimensionError("proxy variant requires X in the dataset");
  const int expect_in = proxy ? data.d_x() : data.d_a();
  if (latent_spec.input_dim() != expect_in)
    throw DimensionError("latent net input dim " +
                         std::to_string(latent_spec.input_dim()) +
                         " does not match data (" + std::to_string(expect_in) + ")");
  int out_in = d_z + data.d_a();
  if (variant == DagVariant::OutcomeProxy) out_in += data.d_x();
  if (outcome_spec.input_dim() != out_in)
    throw DimensionError("outcome net input dim mismatch");
  if (outcome_spec.output_dim() != data.d_y())
    throw DimensionError("outcome net output dim != d_Y");
  if (treatment_spec && treatment_spec->output_dim() != data.d_a())
    throw DimensionError("treatment net output dim != d_A");
}

StoNetModel build_model(const StoNetConfig& config) {
  if (config.d_z < 1) throw ConfigError("build_model: d_z must be >= 1");
  if (config.d_a < 1 || config.d_y < 1)
    throw ConfigError("build_model: d_a and d_y must be >= 1");
  const bool proxy = uses_proxy(config.variant);
  if (proxy && config.d_x < 1)
    throw ConfigError("build_model: proxy variant requires d_x >= 1");
  if (!(config.sigma_z2 > 0.0) || !(config.sigma_y2 > 0.0))
    throw ConfigError("build_model: sigma_z2 and sigma_y2 must be positive");
  if (proxy && config.treatment_kind == TreatmentKind::Continuous &&
      !(config.sigma_a2 > 0.0))
    throw ConfigError("build_model: sigma_a2 must be positive for a continuous treatment net");

  StoNetModel m;
  m.variant = config.variant;
  m.treatment_kind = config.treatment_kind;
  m.d_z = config.d_z;
  m.sigma_z2 = config.sigma_z2;
  m.sigma_a2 = config.sigma_a2;
  m.sigma_y2 = config.sigma_y2;
  m.seed = config.seed;

  auto make_spec = [&](int in, const std::vector<int>& hidden, int out,
                       OutputActivation oact) {
    MlpSpec s;
    s.layer_widths.push_back(in);
    for (int h : hidden) s.layer_widths.push_back(h);
    s.layer_widths.push_back(out);
    s.hidden_activation = config.hidden_activation;
    s.output_activation = oact;
    s.validate();
    return s;
  };

  const int latent_in = proxy ? config.d_x : config.d_a;
  m.latent_spec = make_spec(latent_in, config.latent_hidden, config.d_z,
                            OutputActivation::Identity);
  m.latent_params = init_params(m.latent_spec, derive_seed(config.seed, {1}),
                                config.init_scale);

  if (proxy) {
    const int treat_in = config.variant == DagVariant::TreatmentProxy
                             ? config.d_z + config.d_x
                             : config.d_z;
    const auto head = config.treatment_kind == TreatmentKind::Binary
                          ? OutputActivation::Sigmoid
                          : OutputActivation::Identity;
    m.treatment_spec = make_spec(treat_in, config.treatment_hidden, config.d_a, head);
    m.treatment_params = init_params(*m.treatment_spec,
                                     derive_seed(config.seed, {2}),
                                     config.init_scale);
  }

  int out_in = config.d_z + config.d_a;
  if (config.variant == DagVariant::OutcomeProxy) out_in += config.d_x;
  m.outcome_spec = make_spec(out_in, config.outcome_hidden, config.d_y,
                             OutputActivation::Identity);
  m.outcome_params = init_params(m.outcome_spec, derive_seed(config.seed, {3}),
                                 config.init_scale);
  return m;
}

Matrix latent_conditional_mean(const StoNetModel& model, const Dataset& data) {
  model.validate_against(data);
  const Matrix& in = uses_proxy(model.variant) ? *data.x : data.a;
  return mlp_forward(model.latent_spec, model.latent_params, in);
}

Matrix outcome_input(const StoNetModel& model, const Matrix& z, const Matrix& a,
                     const std::optional<Matrix>& x) {
  const bool with_x = model.variant == DagVariant::OutcomeProxy;
  if (with_x && !x) throw DimensionError("outcome_input: OutcomeProxy needs X");
  Matrix in(z.rows(), z.cols() + a.cols() + (with_x ? x->cols() : 0));
  in.leftCols(z.cols()) = z;
  in.middleCols(z.cols(), a.cols()) = a;
  if (with_x) in.rightCols(x->cols()) = *x;
  return in;
}

Matrix predict_outcome(const StoNetModel& model, const Matrix& z, const Matrix& a,
                       const std::optional<Matrix>& x) {
  if (z.rows() != a.rows())
    throw DimensionError("predict_outcome: Z and A row counts differ");
  return mlp_forward(model.outcome_spec, model.outcome_params,
                     outcome_input(model, z, a, x));
}

namespace {

Matrix treatment_input(const StoNetModel& model, const Matrix& z, const Dataset& data) {
  if (model.variant == DagVariant::TreatmentProxy) {
    Matrix in(z.rows(), z.cols() + data.x->cols());
    in.leftCols(z.cols()) = z;
    in.rightCols(data.x->cols()) = *data.x;
    return in;
  }
  return z;
}

// d(loss)/d(output or last pre-activation) for the treatment head
struct HeadGrad {
  Matrix grad;
  bool preact;  // true: gradient is w.r.t. the last pre-activation
};

HeadGrad treatment_head_grad(const StoNetModel& model, const Matrix& a,
                             const Matrix& out) {
  if (model.treatment_kind == TreatmentKind::Binary)
    return {a - out, true};  // Bernoulli with sigmoid head: d loglik / d s = a - p
  return {(a - out) / model.sigma_a2, false};
}

}  // namespace

Matrix latent_log_density_grad(const StoNetModel& model, const Dataset& data,
                               const Matrix& z) {
  model.validate_against(data);
  if (z.rows() != data.n() || z.cols() != model.d_z)
    throw DimensionError("latent_log_density_grad: Z shape mismatch");
  if (!z.allFinite()) throw NumericError("latent_log_density_grad: non-finite Z");

  Matrix grad = -(z - latent_conditional_mean(model, data)) / model.sigma_z2;

  if (model.treatment_spec) {
    ForwardTrace tr;
    const Matrix in = treatment_input(model, z, data);
    const Matrix out = mlp_forward(*model.treatment_spec, *model.treatment_params, in, &tr);
    const HeadGrad hg = treatment_head_grad(model, data.a, out);
    const MlpGradients g =
        hg.preact ? mlp_backward_preact(*model.treatment_spec, *model.treatment_params, tr, hg.grad)
                  : mlp_backward(*model.treatment_spec, *model.treatment_params, tr, hg.grad);
    grad += g.input.leftCols(model.d_z);
  }

  {
    ForwardTrace tr;
    const Matrix in = outcome_input(model, z, data.a, data.x);
    const Matrix out = mlp_forward(model.outcome_spec, model.outcome_params, in, &tr);
    const Matrix ograd = (data.y - out) / model.sigma_y2;
    const MlpGradients g = mlp_backward(model.outcome_spec, model.outcome_params, tr, ograd);
    grad += g.input.leftCols(model.d_z);
  }
  return grad;
}

ModuleGrads param_log_density_grads(const StoNetModel& model, const Dataset& data,
                                    const Matrix& z) {
  model.validate_against(data);
  if (z.rows() != data.n() || z.cols() != model.d_z)
    throw DimensionError("param_log_density_grads: Z shape mismatch");
  if (!z.allFinite()) throw NumericError("param_log_density_grads: non-finite Z");

  ModuleGrads out;
  {
    ForwardTrace tr;
    const Matrix& in = uses_proxy(model.variant) ? *data.x : data.a;
    const Matrix mu = mlp_forward(model.latent_spec, model.latent_params, in, &tr);
    out.latent = mlp_backward(model.latent_spec, model.latent_params, tr,
                              (z - mu) / model.sigma_z2)
                     .params;
  }
  if (model.treatment_spec) {
    ForwardTrace tr;
    const Matrix in = treatment_input(model, z, data);
    const Matrix mu = mlp_forward(*model.treatment_spec, *model.treatment_params, in, &tr);
    const HeadGrad hg = treatment_head_grad(model, data.a, mu);
    out.treatment =
        (hg.preact
             ? mlp_backward_preact(*model.treatment_spec, *model.treatment_params, tr, hg.grad)
             : mlp_backward(*model.treatment_spec, *model.treatment_params, tr, hg.grad))
            .params;
  }
  {
    ForwardTrace tr;
    const Matrix in = outcome_input(model, z, data.a, data.x);
    const Matrix mu = mlp_forward(model.outcome_spec, model.outcome_params, in, &tr);
    out.outcome = mlp_backward(model.outcome_spec, model.outcome_params, tr,
                               (data.y - mu) / model.sigma_y2)
                      .params;
  }
  return out;
}

double latent_log_density(const StoNetModel& model, const Dataset& data,
                          const Matrix& z) {
  return gaussian_loglik(z - latent_conditional_mean(model, data), model.sigma_z2);
}

double treatment_log_density(const StoNetModel& model, const Dataset& data,
                             const Matrix& z) {
  if (!model.treatment_spec) return 0.0;
  ForwardTrace tr;
  const Matrix in = treatment_input(model, z, data);
  const Matrix out = mlp_forward(*model.treatment_spec, *model.treatment_params, in, &tr);
  if (model.treatment_kind == TreatmentKind::Binary)
    return bernoulli_loglik(data.a, tr.pre.back());
  return gaussian_loglik(data.a - out, model.sigma_a2);
}

double outcome_log_density(const StoNetModel& model, const Dataset& data,
                           const Matrix& z) {
  return gaussian_loglik(data.y - predict_outcome(model, z, data.a, data.x),
                         model.sigma_y2);
}

double total_log_density(const StoNetModel& model, const Dataset& data,
                         const Matrix& z) {
  return latent_log_density(model, data, z) +
         treatment_log_density(model, data, z) +
         outcome_log_density(model, data, z);
}

}  // namespace cistonet
