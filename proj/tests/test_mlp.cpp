#include <doctest.h>

#include <cmath>

#include "cistonet/mlp.hpp"
#include "cistonet/rng.hpp"
#include "oracles.hpp"

using namespace cistonet;

namespace {

MlpSpec random_spec(Rng& rng, bool tanh_only = false) {
  MlpSpec spec;
  const int depth = 1 + rng.uniform_int(3);
  spec.layer_widths.push_back(1 + rng.uniform_int(4));
  for (int l = 0; l < depth; ++l) spec.layer_widths.push_back(1 + rng.uniform_int(5));
  if (tanh_only) {
    spec.hidden_activation = Activation::Tanh;
  } else {
    const Activation acts[] = {Activation::Tanh, Activation::ReLU, Activation::Sigmoid};
    spec.hidden_activation = acts[rng.uniform_int(3)];
  }
  spec.output_activation =
      rng.uniform() < 0.25 ? OutputActivation::Sigmoid : OutputActivation::Identity;
  return spec;
}

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// max relative error between analytic and finite-difference gradients on both
// parameters and inputs, for a random scalar loss sum(G .* output)
double fd_max_rel_err(const MlpSpec& spec, MlpParams params, const Matrix& input,
                      const Matrix& g, double step = 1e-5) {
  ForwardTrace trace;
  mlp_forward(spec, params, input, &trace);
  const MlpGradients grads = mlp_backward(spec, params, trace, g);

  auto loss_at = [&](const MlpParams& p, const Matrix& in) {
    return (mlp_forward(spec, p, in).array() * g.array()).sum();
  };

  double worst = 0.0;
  Vector theta = params.flatten();
  MlpParams probe = params;
  const Vector grad_theta = grads.params.flatten();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double fd = oracles::central_diff(
        [&](double v) {
          Vector t = theta;
          t[i] = v;
          probe.unflatten(t);
          return loss_at(probe, input);
        },
        theta[i], step);
    worst = std::max(worst, oracles::rel_err(grad_theta[i], fd));
  }
  for (Eigen::Index r = 0; r < input.rows(); ++r)
    for (Eigen::Index c = 0; c < input.cols(); ++c) {
      const double fd = oracles::central_diff(
          [&](double v) {
            Matrix in = input;
            in(r, c) = v;
            return loss_at(params, in);
          },
          input(r, c), step);
      worst = std::max(worst, oracles::rel_err(grads.input(r, c), fd));
    }
  return worst;
}

}  // namespace

TEST_CASE("init_params bounds and determinism") {
  MlpSpec spec{{3, 4, 1}};
  const MlpParams p = init_params(spec, 7, 1.0);
  for (int l = 0; l < spec.n_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(spec.layer_widths[l]);
    CHECK(p.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(p.biases[l].cwiseAbs().maxCoeff() == 0.0);
  }
  const MlpParams q = init_params(spec, 7, 1.0);
  CHECK(p.flatten() == q.flatten());
  const MlpParams r = init_params(spec, 8, 1.0);
  CHECK(p.flatten() != r.flatten());
}

TEST_CASE("init_params zero scale gives zero parameters") {
  MlpSpec spec{{2, 3, 2}};
  const MlpParams p = init_params(spec, 1, 0.0);
  CHECK(p.flatten().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_params rejects invalid spec") {
  MlpSpec bad{{3}};
  CHECK_THROWS_AS(init_params(bad, 0, 1.0), ConfigError);
  MlpSpec zero{{3, 0, 1}};
  CHECK_THROWS_AS(init_params(zero, 0, 1.0), ConfigError);
}

TEST_CASE("forward with zero weights returns bias rows") {
  MlpSpec spec{{3, 2}};
  MlpParams p = MlpParams::zeros_like(spec);
  p.biases[0] << 0.5, -1.25;
  Rng rng(3);
  const Matrix in = random_matrix(rng, 5, 3);
  const Matrix out = mlp_forward(spec, p, in);
  for (int i = 0; i < 5; ++i) {
    CHECK(out(i, 0) == 0.5);
    CHECK(out(i, 1) == -1.25);
  }
}

TEST_CASE("single identity layer is affine") {
  MlpSpec spec{{3, 2}};
  Rng rng(11);
  MlpParams p = MlpParams::zeros_like(spec);
  p.weights[0] = random_matrix(rng, 2, 3);
  p.biases[0] = random_matrix(rng, 2, 1).col(0);
  const Matrix in = random_matrix(rng, 4, 3);
  const Matrix expect = (in * p.weights[0].transpose()).rowwise() + p.biases[0].transpose();
  CHECK((mlp_forward(spec, p, in) - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches straight-line evaluation") {
  MlpSpec spec{{2, 3, 1}};
  const MlpParams p = init_params(spec, 21, 1.0);
  Rng rng(22);
  const Matrix in = random_matrix(rng, 6, 2);
  const Matrix out = mlp_forward(spec, p, in);
  for (int i = 0; i < in.rows(); ++i) {
    const auto row = oracles::straight_line_mlp(spec, p, {in(i, 0), in(i, 1)});
    CHECK(std::abs(out(i, 0) - row[0]) < 1e-14);
  }
}

TEST_CASE("forward rejects shape and numeric errors") {
  MlpSpec spec{{3, 2}};
  const MlpParams p = init_params(spec, 0, 1.0);
  CHECK_THROWS_AS(mlp_forward(spec, p, Matrix::Zero(2, 4)), DimensionError);
  Matrix bad = Matrix::Zero(2, 3);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(mlp_forward(spec, p, bad), NumericError);
}

TEST_CASE("backward zero output grad gives zero gradients") {
  MlpSpec spec{{3, 4, 2}};
  const MlpParams p = init_params(spec, 5, 1.0);
  Rng rng(6);
  const Matrix in = random_matrix(rng, 3, 3);
  ForwardTrace tr;
  mlp_forward(spec, p, in, &tr);
  const MlpGradients g = mlp_backward(spec, p, tr, Matrix::Zero(3, 2));
  CHECK(g.params.flatten().cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.input.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward linear case matches closed form") {
  MlpSpec spec{{3, 2}};
  Rng rng(9);
  MlpParams p = MlpParams::zeros_like(spec);
  p.weights[0] = random_matrix(rng, 2, 3);
  const Matrix in = random_matrix(rng, 5, 3);
  const Matrix g = random_matrix(rng, 5, 2);
  ForwardTrace tr;
  mlp_forward(spec, p, in, &tr);
  const MlpGradients grads = mlp_backward(spec, p, tr, g);
  CHECK((grads.params.weights[0] - g.transpose() * in).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((grads.params.biases[0] - g.colwise().sum().transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((grads.input - g * p.weights[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients match central finite differences on 100 random nets") {
  Rng rng(20240801);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpSpec spec = random_spec(rng);
    MlpParams p = init_params(spec, rng.next_u64(), 1.0);
    // random biases keep ReLU pre-activations off the kink, where a symmetric
    // difference and the subgradient legitimately disagree
    for (auto& b : p.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.3 * rng.normal();
    const Matrix in = random_matrix(rng, 1 + rng.uniform_int(4), spec.input_dim());
    const Matrix g = random_matrix(rng, in.rows(), spec.output_dim());
    worst = std::max(worst, fd_max_rel_err(spec, p, in, g));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward is linear in the output gradient") {
  MlpSpec spec{{3, 5, 2}};
  const MlpParams p = init_params(spec, 31, 1.0);
  Rng rng(32);
  const Matrix in = random_matrix(rng, 4, 3);
  ForwardTrace tr;
  mlp_forward(spec, p, in, &tr);
  const Matrix g1 = random_matrix(rng, 4, 2), g2 = random_matrix(rng, 4, 2);
  const double a = 0.7, b = -1.3;
  const MlpGradients lhs = mlp_backward(spec, p, tr, a * g1 + b * g2);
  const MlpGradients r1 = mlp_backward(spec, p, tr, g1);
  const MlpGradients r2 = mlp_backward(spec, p, tr, g2);
  const Vector expect = a * r1.params.flatten() + b * r2.params.flatten();
  CHECK((lhs.params.flatten() - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lhs.input - (a * r1.input + b * r2.input)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  Rng spec_rng(77);
  const MlpSpec spec = random_spec(spec_rng, true);
  const MlpParams p1 = init_params(spec, 123, 0.9);
  const MlpParams p2 = init_params(spec, 123, 0.9);
  Rng r1(55), r2(55);
  const Matrix in1 = random_matrix(r1, 5, spec.input_dim());
  const Matrix in2 = random_matrix(r2, 5, spec.input_dim());
  ForwardTrace t1, t2;
  const Matrix o1 = mlp_forward(spec, p1, in1, &t1);
  const Matrix o2 = mlp_forward(spec, p2, in2, &t2);
  CHECK(o1 == o2);
  const Matrix g = Matrix::Ones(5, spec.output_dim());
  CHECK(mlp_backward(spec, p1, t1, g).params.flatten() ==
        mlp_backward(spec, p2, t2, g).params.flatten());
}
