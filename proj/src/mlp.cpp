#include "cistonet/mlp.hpp"

#include <cmath>

#include "cistonet/rng.hpp"

namespace cistonet {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown hidden activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "identity") return OutputActivation::Identity;
  if (s == "sigmoid") return OutputActivation::Sigmoid;
  throw ConfigError("unknown output activation: " + s);
}

std::string to_string(OutputActivation a) {
  return a == OutputActivation::Identity ? "identity" : "sigmoid";
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2)
    throw ConfigError("MlpSpec needs at least input and output widths");
  for (int w : layer_widths)
    if (w < 1) throw ConfigError("MlpSpec layer widths must be >= 1");
}

int MlpParams::param_count() const {
  int k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    k += static_cast<int>(weights[l].size() + biases[l].size());
  return k;
}

Vector MlpParams::flatten() const {
  Vector theta(param_count());
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& w = weights[l];
    theta.segment(pos, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
    pos += w.size();
    theta.segment(pos, biases[l].size()) = biases[l];
    pos += biases[l].size();
  }
  return theta;
}

void MlpParams::unflatten(const Vector& theta) {
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto& w = weights[l];
    Eigen::Map<Vector>(w.data(), w.size()) = theta.segment(pos, w.size());
    pos += w.size();
    biases[l] = theta.segment(pos, biases[l].size());
    pos += biases[l].size();
  }
  if (pos != theta.size())
    throw DimensionError("unflatten: parameter vector length mismatch");
}

void MlpParams::axpy(double a, const MlpParams& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += a * other.weights[l];
    biases[l] += a * other.biases[l];
  }
}

void MlpParams::cwise_mul(const MlpParams& mask) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] = weights[l].cwiseProduct(mask.weights[l]);
    biases[l] = biases[l].cwiseProduct(mask.biases[l]);
  }
}

void MlpParams::set_zero() {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l].setZero();
    biases[l].setZero();
  }
}

double MlpParams::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    s += weights[l].squaredNorm() + biases[l].squaredNorm();
  return s;
}

MlpParams MlpParams::zeros_like(const MlpSpec& spec) {
  MlpParams p;
  for (int l = 0; l < spec.n_layers(); ++l) {
    p.weights.push_back(Matrix::Zero(spec.layer_widths[l + 1], spec.layer_widths[l]));
    p.biases.push_back(Vector::Zero(spec.layer_widths[l + 1]));
  }
  return p;
}

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed, double scale) {
  spec.validate();
  if (scale < 0.0) throw ConfigError("init_params: scale must be >= 0");
  Rng rng(seed);
  MlpParams p = MlpParams::zeros_like(spec);
  for (int l = 0; l < spec.n_layers(); ++l) {
    const double bound = scale / std::sqrt(static_cast<double>(spec.layer_widths[l]));
    auto& w = p.weights[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        w(i, j) = rng.uniform(-bound, bound);
  }
  return p;
}

namespace {

inline void apply_hidden(Activation a, const Matrix& pre, Matrix& out) {
  switch (a) {
    case Activation::Tanh:
      out = pre.array().tanh();
      break;
    case Activation::ReLU:
      out = pre.cwiseMax(0.0);
      break;
    case Activation::Sigmoid:
      out = (1.0 + (-pre.array()).exp()).inverse();
      break;
  }
}

// derivative expressed through pre-activation and activation values
inline Matrix hidden_deriv(Activation a, const Matrix& pre, const Matrix& act) {
  switch (a) {
    case Activation::Tanh:
      return 1.0 - act.array().square();
    case Activation::ReLU:
      return (pre.array() > 0.0).cast<double>();
    case Activation::Sigmoid:
      return act.array() * (1.0 - act.array());
  }
  return Matrix();
}

void check_params_shape(const MlpSpec& spec, const MlpParams& params) {
  if (static_cast<int>(params.weights.size()) != spec.n_layers() ||
      static_cast<int>(params.biases.size()) != spec.n_layers())
    throw DimensionError("params layer count does not match spec");
  for (int l = 0; l < spec.n_layers(); ++l) {
    if (params.weights[l].rows() != spec.layer_widths[l + 1] ||
        params.weights[l].cols() != spec.layer_widths[l] ||
        params.biases[l].size() != spec.layer_widths[l + 1])
      throw DimensionError("params shape mismatch at layer " + std::to_string(l));
  }
}

}  // namespace

Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params,
                   const Matrix& input, ForwardTrace* trace) {
  spec.validate();
  check_params_shape(spec, params);
  if (input.cols() != spec.input_dim())
    throw DimensionError("mlp_forward: input width " + std::to_string(input.cols()) +
                         " != spec input dim " + std::to_string(spec.input_dim()));
  if (!input.allFinite()) throw NumericError("mlp_forward: non-finite input");

  const int L = spec.n_layers();
  if (trace) {
    trace->pre.assign(L, Matrix());
    trace->act.assign(L + 1, Matrix());
    trace->act[0] = input;
  }
  Matrix cur = input;
  for (int l = 0; l < L; ++l) {
    Matrix pre = (cur * params.weights[l].transpose()).rowwise() +
                 params.biases[l].transpose();
    Matrix out;
    if (l + 1 < L) {
      apply_hidden(spec.hidden_activation, pre, out);
    } else if (spec.output_activation == OutputActivation::Sigmoid) {
      out = (1.0 + (-pre.array()).exp()).inverse();
    } else {
      out = pre;
    }
    if (trace) {
      trace->pre[l] = std::move(pre);
      trace->act[l + 1] = out;
    }
    cur = std::move(out);
  }
  return cur;
}

static MlpGradients backward_impl(const MlpSpec& spec, const MlpParams& params,
                                  const ForwardTrace& trace, Matrix delta) {
  const int L = spec.n_layers();
  if (static_cast<int>(trace.pre.size()) != L ||
      static_cast<int>(trace.act.size()) != L + 1)
    throw DimensionError("mlp_backward: trace does not match spec");
  if (delta.rows() != trace.act[0].rows() || delta.cols() != spec.output_dim())
    throw DimensionError("mlp_backward: output_grad shape mismatch");

  MlpGradients g;
  g.params = MlpParams::zeros_like(spec);
  for (int l = L - 1; l >= 0; --l) {
    g.params.weights[l] = delta.transpose() * trace.act[l];
    g.params.biases[l] = delta.colwise().sum().transpose();
    Matrix back = delta * params.weights[l];
    if (l > 0)
      delta = back.cwiseProduct(
          hidden_deriv(spec.hidden_activation, trace.pre[l - 1], trace.act[l]));
    else
      g.input = std::move(back);
  }
  return g;
}

MlpGradients mlp_backward(const MlpSpec& spec, const MlpParams& params,
                          const ForwardTrace& trace, const Matrix& output_grad) {
  check_params_shape(spec, params);
  Matrix delta = output_grad;
  if (spec.output_activation == OutputActivation::Sigmoid) {
    const Matrix& p = trace.act.back();
    delta = delta.cwiseProduct(
        (p.array() * (1.0 - p.array())).matrix());
  }
  return backward_impl(spec, params, trace, std::move(delta));
}

MlpGradients mlp_backward_preact(const MlpSpec& spec, const MlpParams& params,
                                 const ForwardTrace& trace,
                                 const Matrix& last_pre_grad) {
  check_params_shape(spec, params);
  return backward_impl(spec, params, trace, last_pre_grad);
}

}  // namespace cistonet
