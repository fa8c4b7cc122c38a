#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cistonet/errors.hpp"

namespace cistonet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Tanh, ReLU, Sigmoid };
enum class OutputActivation { Identity, Sigmoid };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);
OutputActivation output_activation_from_string(const std::string& s);
std::string to_string(OutputActivation a);

// Architecture of one dense feed-forward module. layer_widths runs from the
// input dimension to the output dimension; hidden layers in between.
struct MlpSpec {
  std::vector<int> layer_widths;
  Activation hidden_activation = Activation::Tanh;
  OutputActivation output_activation = OutputActivation::Identity;

  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  // number of weight layers
  int n_layers() const { return static_cast<int>(layer_widths.size()) - 1; }

  void validate() const;  // throws ConfigError
  bool operator==(const MlpSpec&) const = default;
};

// Weight matrices are (out x in); biases are (out).
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  int param_count() const;
  Vector flatten() const;
  void unflatten(const Vector& theta);

  // shape-preserving elementwise ops used by the trainer
  void axpy(double a, const MlpParams& other);  // this += a * other
  void cwise_mul(const MlpParams& mask);        // elementwise this *= mask
  void set_zero();
  double squared_norm() const;

  static MlpParams zeros_like(const MlpSpec& spec);
};

// Per-layer pre-activations and activations for one minibatch.
// act[0] is the input; act[l+1] = sigma(pre[l]); rows are observations.
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> act;
  int batch_size() const { return act.empty() ? 0 : static_cast<int>(act[0].rows()); }
};

struct MlpGradients {
  MlpParams params;  // summed over the batch
  Matrix input;      // per-row, n x d_in
};

// Weights i.i.d. uniform on [-scale/sqrt(fan_in), +scale/sqrt(fan_in)],
// biases zero. Deterministic given seed.
MlpParams init_params(const MlpSpec& spec, std::uint64_t seed, double scale);

// Returns outputs (n x d_out); fills *trace when non-null.
Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params,
                   const Matrix& input, ForwardTrace* trace = nullptr);

// Exact reverse mode from d(loss)/d(output).
MlpGradients mlp_backward(const MlpSpec& spec, const MlpParams& params,
                          const ForwardTrace& trace, const Matrix& output_grad);

// Reverse mode starting from d(loss)/d(last pre-activation). This is the
// entry point for heads whose loss-activation pair collapses analytically
// (Bernoulli log-likelihood with a Sigmoid head gives A - p directly).
MlpGradients mlp_backward_preact(const MlpSpec& spec, const MlpParams& params,
                                 const ForwardTrace& trace,
                                 const Matrix& last_pre_grad);

}  // namespace cistonet
