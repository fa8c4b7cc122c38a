#include <doctest.h>

#include <cmath>

#include "cistonet/rng.hpp"
#include "cistonet/stonet.hpp"
#include "oracles.hpp"

using namespace cistonet;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

StoNetConfig small_config(DagVariant v, TreatmentKind kind, std::uint64_t seed) {
  StoNetConfig c;
  c.variant = v;
  c.treatment_kind = kind;
  c.d_a = kind == TreatmentKind::Binary ? 1 : 2;
  c.d_y = 1;
  c.d_z = 2;
  c.d_x = uses_proxy(v) ? 3 : 0;
  c.latent_hidden = {4};
  c.treatment_hidden = {3};
  c.outcome_hidden = {4};
  c.sigma_z2 = 0.5;
  c.sigma_a2 = 0.8;
  c.sigma_y2 = 0.7;
  c.seed = seed;
  return c;
}

Dataset random_dataset(Rng& rng, const StoNetConfig& c, int n) {
  Dataset d;
  if (c.treatment_kind == TreatmentKind::Binary) {
    d.a.resize(n, 1);
    for (int i = 0; i < n; ++i) d.a(i, 0) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  } else {
    d.a = random_matrix(rng, n, c.d_a);
  }
  d.y = random_matrix(rng, n, c.d_y);
  if (c.d_x > 0) d.x = random_matrix(rng, n, c.d_x);
  return d;
}

const DagVariant kAllVariants[] = {
    DagVariant::SimpleConfounding, DagVariant::BasicProxy,
    DagVariant::OutcomeProxy, DagVariant::TreatmentProxy};

}  // namespace

TEST_CASE("build_model validates wiring") {
  // reference geometry: d_A=9, d_z=6, hidden 32 / hidden 8,4
  StoNetConfig c;
  c.variant = DagVariant::SimpleConfounding;
  c.d_a = 9;
  c.d_y = 1;
  c.d_z = 6;
  c.latent_hidden = {32};
  c.outcome_hidden = {8, 4};
  const StoNetModel m = build_model(c);
  CHECK(m.latent_spec.layer_widths == std::vector<int>{9, 32, 6});
  CHECK(m.outcome_spec.layer_widths == std::vector<int>{15, 8, 4, 1});
  CHECK_FALSE(m.treatment_spec.has_value());

  StoNetConfig bad = c;
  bad.variant = DagVariant::BasicProxy;  // proxy without d_x
  CHECK_THROWS_AS(build_model(bad), ConfigError);

  StoNetConfig zero = c;
  zero.d_z = 0;
  CHECK_THROWS_AS(build_model(zero), ConfigError);
}

TEST_CASE("latent conditional mean wiring") {
  Rng rng(4);
  // zero-weight mu1 with bias b: every row equals b
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 1);
  StoNetModel m = build_model(c);
  m.latent_params.set_zero();
  m.latent_params.biases.back() << 0.25, -0.75;
  Dataset d = random_dataset(rng, c, 4);
  const Matrix mu = latent_conditional_mean(m, d);
  for (int i = 0; i < 4; ++i) {
    CHECK(mu(i, 0) == 0.25);
    CHECK(mu(i, 1) == -0.75);
  }

  // simple variant feeds A, proxy variant feeds X
  StoNetConfig cp = small_config(DagVariant::BasicProxy, TreatmentKind::Continuous, 2);
  cp.d_a = 3;  // same width as X so the same net accepts both
  StoNetModel mp = build_model(cp);
  Dataset dp = random_dataset(rng, cp, 5);
  const Matrix via_x = latent_conditional_mean(mp, dp);
  const Matrix direct = mlp_forward(mp.latent_spec, mp.latent_params, *dp.x);
  CHECK((via_x - direct).cwiseAbs().maxCoeff() == 0.0);
  const Matrix other = mlp_forward(mp.latent_spec, mp.latent_params, dp.a);
  CHECK((via_x - other).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("latent gradient is the pure prior term when the likelihood vanishes") {
  Rng rng(7);
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 3);
  StoNetModel m = build_model(c);
  m.outcome_params.set_zero();  // mu_out == 0
  Dataset d = random_dataset(rng, c, 6);
  d.y.setZero();  // residual == 0
  const Matrix z = random_matrix(rng, 6, c.d_z);
  const Matrix g = latent_log_density_grad(m, d, z);
  const Matrix expect = -(z - latent_conditional_mean(m, d)) / m.sigma_z2;
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("latent gradient is zero at a stationary point") {
  Rng rng(9);
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 5);
  StoNetModel m = build_model(c);
  Dataset d = random_dataset(rng, c, 5);
  const Matrix z = latent_conditional_mean(m, d);  // Z = mu1
  d.y = predict_outcome(m, z, d.a, d.x);           // Y = mu2(Z, A)
  const Matrix g = latent_log_density_grad(m, d, z);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("latent gradients match finite differences for all variants") {
  Rng rng(20240802);
  for (DagVariant v : kAllVariants) {
    for (TreatmentKind kind :
         {TreatmentKind::Continuous, TreatmentKind::Binary}) {
      if (v == DagVariant::SimpleConfounding && kind == TreatmentKind::Binary)
        continue;  // simple confounding has no treatment net
      for (int trial = 0; trial < 7; ++trial) {
        StoNetConfig c = small_config(v, kind, rng.next_u64());
        const StoNetModel m = build_model(c);
        Dataset d = random_dataset(rng, c, 3);
        const Matrix z = random_matrix(rng, 3, c.d_z);
        const Matrix g = latent_log_density_grad(m, d, z);
        double worst = 0.0;
        for (int r = 0; r < 3; ++r)
          for (int col = 0; col < c.d_z; ++col) {
            const double fd = oracles::central_diff(
                [&](double val) {
                  Matrix zz = z;
                  zz(r, col) = val;
                  return total_log_density(m, d, zz);
                },
                z(r, col), 1e-5);
            worst = std::max(worst, oracles::rel_err(g(r, col), fd));
          }
        CHECK(worst < 1e-5);
      }
    }
  }
}

TEST_CASE("parameter gradients match finite differences for all variants") {
  Rng rng(20240803);
  for (DagVariant v : kAllVariants) {
    const TreatmentKind kind = uses_proxy(v) && (rng.uniform() < 0.5)
                                   ? TreatmentKind::Binary
                                   : TreatmentKind::Continuous;
    StoNetConfig c = small_config(v, kind, rng.next_u64());
    const StoNetModel m = build_model(c);
    Dataset d = random_dataset(rng, c, 3);
    const Matrix z = random_matrix(rng, 3, c.d_z);
    const ModuleGrads grads = param_log_density_grads(m, d, z);

    auto check_module = [&](const MlpParams& params, const MlpParams& grad,
                            auto mutate) {
      const Vector theta = params.flatten();
      const Vector gt = grad.flatten();
      double worst = 0.0;
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double fd = oracles::central_diff(
            [&](double val) {
              Vector t = theta;
              t[i] = val;
              StoNetModel probe = m;
              mutate(probe, t);
              return total_log_density(probe, d, z);
            },
            theta[i], 1e-5);
        worst = std::max(worst, oracles::rel_err(gt[i], fd));
      }
      CHECK(worst < 1e-5);
    };
    check_module(m.latent_params, grads.latent,
                 [](StoNetModel& probe, const Vector& t) { probe.latent_params.unflatten(t); });
    if (m.treatment_params)
      check_module(*m.treatment_params, *grads.treatment,
                   [](StoNetModel& probe, const Vector& t) { probe.treatment_params->unflatten(t); });
    check_module(m.outcome_params, grads.outcome,
                 [](StoNetModel& probe, const Vector& t) { probe.outcome_params.unflatten(t); });
  }
}

TEST_CASE("zero residuals give zero parameter gradients") {
  Rng rng(12);
  StoNetConfig c = small_config(DagVariant::BasicProxy, TreatmentKind::Continuous, 8);
  const StoNetModel m = build_model(c);
  Dataset d = random_dataset(rng, c, 4);
  const Matrix z = latent_conditional_mean(m, d);
  d.a = mlp_forward(*m.treatment_spec, *m.treatment_params, z);
  d.y = predict_outcome(m, z, d.a, d.x);
  const ModuleGrads g = param_log_density_grads(m, d, z);
  CHECK(g.latent.flatten().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.treatment->flatten().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.outcome.flatten().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("modules are gradient-isolated") {
  Rng rng(13);
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 9);
  StoNetModel m = build_model(c);
  Dataset d = random_dataset(rng, c, 5);
  const Matrix z = random_matrix(rng, 5, c.d_z);
  const Vector g1 = param_log_density_grads(m, d, z).latent.flatten();
  // perturb every outcome-net parameter; theta1's gradient must not move
  StoNetModel perturbed = m;
  Vector t = perturbed.outcome_params.flatten();
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] += 0.37 * (1 + (i % 3));
  perturbed.outcome_params.unflatten(t);
  const Vector g2 = param_log_density_grads(perturbed, d, z).latent.flatten();
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("total log density equals the sum of module conditionals") {
  Rng rng(14);
  for (DagVariant v : kAllVariants) {
    StoNetConfig c = small_config(v, TreatmentKind::Continuous, rng.next_u64());
    const StoNetModel m = build_model(c);
    Dataset d = random_dataset(rng, c, 4);
    const Matrix z = random_matrix(rng, 4, c.d_z);
    const double sum = latent_log_density(m, d, z) + treatment_log_density(m, d, z) +
                       outcome_log_density(m, d, z);
    CHECK(total_log_density(m, d, z) == sum);
  }
}

TEST_CASE("predict_outcome wiring") {
  Rng rng(15);
  // constant-output net
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 11);
  StoNetModel m = build_model(c);
  m.outcome_params.set_zero();
  m.outcome_params.biases.back() << 3.5;
  Dataset d = random_dataset(rng, c, 4);
  const Matrix z = random_matrix(rng, 4, c.d_z);
  CHECK((predict_outcome(m, z, d.a, d.x).array() == 3.5).all());

  // OutcomeProxy consumes X, BasicProxy does not
  StoNetConfig po = small_config(DagVariant::OutcomeProxy, TreatmentKind::Continuous, 12);
  const StoNetModel mo = build_model(po);
  Dataset dp = random_dataset(rng, po, 4);
  const Matrix zz = random_matrix(rng, 4, po.d_z);
  const Matrix y1 = predict_outcome(mo, zz, dp.a, dp.x);
  const Matrix y2 = predict_outcome(mo, zz, dp.a, Matrix(dp.x->array() + 1.0));
  CHECK((y1 - y2).cwiseAbs().maxCoeff() > 0.0);

  StoNetConfig pb = small_config(DagVariant::BasicProxy, TreatmentKind::Continuous, 13);
  const StoNetModel mb = build_model(pb);
  const Matrix y3 = predict_outcome(mb, zz, dp.a, dp.x);
  const Matrix y4 = predict_outcome(mb, zz, dp.a, std::nullopt);
  CHECK((y3 - y4).cwiseAbs().maxCoeff() == 0.0);

  // compositional oracle
  const Matrix in = outcome_input(mb, zz, dp.a, std::nullopt);
  CHECK((y3 - mlp_forward(mb.outcome_spec, mb.outcome_params, in)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape violations throw") {
  Rng rng(16);
  StoNetConfig c = small_config(DagVariant::SimpleConfounding, TreatmentKind::Continuous, 17);
  const StoNetModel m = build_model(c);
  Dataset d = random_dataset(rng, c, 4);
  CHECK_THROWS_AS(latent_log_density_grad(m, d, random_matrix(rng, 4, c.d_z + 1)),
                  DimensionError);
  Matrix bad = random_matrix(rng, 4, c.d_z);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(latent_log_density_grad(m, d, bad), NumericError);
  Dataset mismatched = d;
  mismatched.y = random_matrix(rng, 3, 1);
  CHECK_THROWS_AS(latent_log_density_grad(m, mismatched, random_matrix(rng, 4, c.d_z)),
                  DimensionError);
}
