#include <doctest.h>

#include <cmath>

#include "cistonet/checkpoint.hpp"
#include "cistonet/rng.hpp"
#include "cistonet/trainer.hpp"
#include "oracles.hpp"

using namespace cistonet;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Linear-Gaussian simple-confounding model: mu1 and mu2 are single identity
// layers, so pi(z | a, y) is Gaussian with closed form.
struct LinearGaussian {
  StoNetModel model;
  Dataset data;
  Eigen::RowVectorXd w_z;  // outcome weights on z
  Eigen::RowVectorXd w_a;
  double b = 0;
  Matrix post_mean;  // n x d_z closed-form posterior means
  Matrix post_cov;   // d_z x d_z (shared; mu1 affects mean only)
};

LinearGaussian make_linear_gaussian(int n, int d_a, int d_z, double sigma_z2,
                                    double sigma_y2, std::uint64_t seed) {
  Rng rng(seed);
  StoNetConfig c;
  c.variant = DagVariant::SimpleConfounding;
  c.d_a = d_a;
  c.d_y = 1;
  c.d_z = d_z;
  c.latent_hidden = {};
  c.outcome_hidden = {};
  c.sigma_z2 = sigma_z2;
  c.sigma_y2 = sigma_y2;
  c.seed = seed;
  LinearGaussian lg;
  lg.model = build_model(c);
  lg.model.latent_params.weights[0] = random_matrix(rng, d_z, d_a, 0.6);
  lg.model.latent_params.biases[0] = random_matrix(rng, d_z, 1, 0.2).col(0);
  Matrix w2 = random_matrix(rng, 1, d_z + d_a, 0.7);
  lg.model.outcome_params.weights[0] = w2;
  lg.model.outcome_params.biases[0] = random_matrix(rng, 1, 1, 0.2).col(0);
  lg.w_z = w2.leftCols(d_z);
  lg.w_a = w2.rightCols(d_a);
  lg.b = lg.model.outcome_params.biases[0][0];

  lg.data.a = random_matrix(rng, n, d_a);
  const Matrix mu1 = mlp_forward(lg.model.latent_spec, lg.model.latent_params, lg.data.a);
  Matrix z_true = mu1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d_z; ++j) z_true(i, j) += std::sqrt(sigma_z2) * rng.normal();
  lg.data.y.resize(n, 1);
  for (int i = 0; i < n; ++i)
    lg.data.y(i, 0) = lg.w_z.dot(z_true.row(i)) + lg.w_a.dot(lg.data.a.row(i)) +
                      lg.b + std::sqrt(sigma_y2) * rng.normal();

  // conjugate posterior: precision I/s_z + w_z w_z^T / s_y
  const Matrix prec = Matrix::Identity(d_z, d_z) / sigma_z2 +
                      lg.w_z.transpose() * lg.w_z / sigma_y2;
  lg.post_cov = prec.inverse();
  lg.post_mean.resize(n, d_z);
  for (int i = 0; i < n; ++i) {
    const double resid = lg.data.y(i, 0) - lg.w_a.dot(lg.data.a.row(i)) - lg.b;
    const Vector rhs = mu1.row(i).transpose() / sigma_z2 +
                       lg.w_z.transpose() * resid / sigma_y2;
    lg.post_mean.row(i) = (lg.post_cov * rhs).transpose();
  }
  return lg;
}

}  // namespace

TEST_CASE("lr_at handles both decay families") {
  Decay harmonic{DecayKind::Harmonic, 0.5, 1.0};
  CHECK(lr_at(0, 0.3, harmonic) == 0.3);
  CHECK(lr_at(1, 0.3, harmonic) == doctest::Approx(0.15));  // base/2 at k=1

  Decay emp{DecayKind::Empirical, 0.95, 1.0};
  CHECK(lr_at(0, 0.2, emp) == 0.2);
  double prev = 0.2;
  for (long k = 1; k <= 20; ++k) {
    const double cur = lr_at(k, 0.2, emp);
    CHECK(cur < prev);
    CHECK(cur > 0.0);
    prev = cur;
  }
  // closed-form recurrence: 1/lr(k) = 1/base + sum_{j<=k} j^alpha
  double inv = 1.0 / 0.2;
  for (long j = 1; j <= 5; ++j) inv += std::pow(double(j), 0.95);
  CHECK(lr_at(5, 0.2, emp) == doctest::Approx(1.0 / inv).epsilon(1e-14));

  CHECK_THROWS_AS(lr_at(1, 0.3, Decay{DecayKind::Harmonic, 1.5, 1.0}), ConfigError);
  CHECK_THROWS_AS(lr_at(1, 0.3, Decay{DecayKind::Harmonic, 0.5, 0.0}), ConfigError);
}

TEST_CASE("impute step: eps=0 is a no-op, zero gradient drifts by eps*v") {
  LinearGaussian lg = make_linear_gaussian(5, 2, 2, 1.0, 0.5, 42);
  // zero-gradient construction: zero nets, Z = 0, Y = 0
  lg.model.latent_params.set_zero();
  lg.model.outcome_params.set_zero();
  lg.data.y.setZero();
  LatentState st;
  st.z = Matrix::Zero(5, 2);
  Rng rng(1);
  st.v = random_matrix(rng, 5, 2);
  const Matrix v0 = st.v;

  LatentState copy = st;
  Rng r0(2);
  impute_latent_step(copy, lg.model, lg.data, {}, 0.0, 1.0, r0);
  CHECK(copy.z == st.z);
  CHECK(copy.v == st.v);

  // eta = 0 removes friction and noise; g = 0 leaves v unchanged
  Rng r1(3);
  impute_latent_step(st, lg.model, lg.data, {}, 0.25, 0.0, r1);
  CHECK((st.v - v0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.z - 0.25 * v0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("impute step only touches batch rows") {
  LinearGaussian lg = make_linear_gaussian(6, 2, 2, 1.0, 0.5, 43);
  LatentState st;
  st.z = latent_conditional_mean(lg.model, lg.data);
  st.v = Matrix::Zero(6, 2);
  const LatentState before = st;
  Rng rng(4);
  impute_latent_step(st, lg.model, lg.data, {1, 4}, 0.05, 1.0, rng);
  for (int i : {0, 2, 3, 5}) {
    CHECK(st.z.row(i) == before.z.row(i));
    CHECK(st.v.row(i) == before.v.row(i));
  }
  CHECK((st.v.row(1) - before.v.row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("long-run imputation matches the conjugate Gaussian posterior") {
  const int n = 60, d_z = 2;
  LinearGaussian lg = make_linear_gaussian(n, 1, d_z, 1.0, 0.5, 20240804);
  LatentState st;
  st.z = latent_conditional_mean(lg.model, lg.data);
  st.v = Matrix::Zero(n, d_z);
  Rng rng(99);

  const Decay decay{DecayKind::Harmonic, 0.25, 1.0};
  const double eps0 = 0.12, eta = 2.0;
  const int burn = 4000, keep = 60000;
  for (int k = 0; k < burn; ++k)
    impute_latent_step(st, lg.model, lg.data, {}, lr_at(k, eps0, decay), eta, rng);
  Matrix sum = Matrix::Zero(n, d_z), sumsq = Matrix::Zero(n, d_z);
  for (int k = 0; k < keep; ++k) {
    impute_latent_step(st, lg.model, lg.data, {}, lr_at(burn + k, eps0, decay), eta, rng);
    sum += st.z;
    sumsq += st.z.cwiseAbs2();
  }
  const Matrix mean = sum / keep;
  const Matrix var = sumsq / keep - mean.cwiseAbs2();

  // pooled over units: mean error relative to posterior sd, variance ratio
  const double sd0 = std::sqrt(lg.post_cov(0, 0)), sd1 = std::sqrt(lg.post_cov(1, 1));
  double worst_mean_err = 0.0;
  for (int i = 0; i < n; ++i) {
    worst_mean_err = std::max(worst_mean_err,
                              std::abs(mean(i, 0) - lg.post_mean(i, 0)) / sd0);
    worst_mean_err = std::max(worst_mean_err,
                              std::abs(mean(i, 1) - lg.post_mean(i, 1)) / sd1);
  }
  // with ~30k correlated draws the per-unit MC error is well under 0.2 sd
  CHECK(worst_mean_err < 0.2);
  CHECK(var.col(0).mean() == doctest::Approx(lg.post_cov(0, 0)).epsilon(0.10));
  CHECK(var.col(1).mean() == doctest::Approx(lg.post_cov(1, 1)).epsilon(0.10));
}

TEST_CASE("momentum stays bounded over 1e4 steps at default rates") {
  const int n = 40;
  LinearGaussian lg = make_linear_gaussian(n, 2, 2, 1.0, 0.5, 77);
  LatentState st;
  st.z = latent_conditional_mean(lg.model, lg.data);
  st.v = Matrix::Zero(n, 2);
  Rng rng(78);
  double max_norm = 0.0;
  for (int k = 0; k < 10000; ++k) {
    impute_latent_step(st, lg.model, lg.data, {}, 0.05, 1.0, rng);
    max_norm = std::max(max_norm, st.v.rowwise().norm().maxCoeff());
  }
  CHECK(std::isfinite(max_norm));
  CHECK(max_norm < 50.0);  // ~N(0, I_2) rows; 50 is far into the tail
}

TEST_CASE("update_params_step is a no-op at a stationary zero") {
  LinearGaussian lg = make_linear_gaussian(5, 2, 1, 1.0, 0.5, 80);
  lg.model.latent_params.set_zero();
  lg.model.outcome_params.set_zero();
  lg.data.y.setZero();
  const Matrix z = Matrix::Zero(5, 1);
  PriorHyper prior{0.5, 1.0, 1.0};  // gradient -theta vanishes at 0
  StoNetModel m = lg.model;
  update_params_step(m, lg.data, z, {0.1, 0.1}, prior);
  CHECK(m.latent_params.flatten() == lg.model.latent_params.flatten());
  CHECK(m.outcome_params.flatten() == lg.model.outcome_params.flatten());
}

TEST_CASE("one literal update step equals the hand-computed formula") {
  // scalar Gaussian mean model: z ~ N(w*a + b, s_z), one-dim everything
  LinearGaussian lg = make_linear_gaussian(3, 1, 1, 0.5, 0.7, 81);
  const PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1e-1);
  const Matrix z = lg.post_mean;  // any fixed z works
  const double gamma = 0.01;

  // hand formula for the latent module, literal Algorithm form
  const Matrix mu1 = latent_conditional_mean(lg.model, lg.data);
  const Matrix resid = (z - mu1) / lg.model.sigma_z2;
  const double gw = (resid.col(0).array() * lg.data.a.col(0).array()).sum();
  const double gb = resid.col(0).sum();
  const Vector theta = lg.model.latent_params.flatten();
  const Vector pg = log_prior_grad(theta, prior);
  const double expect_w = theta[0] + gamma * (gw + pg[0]);
  const double expect_b = theta[1] + gamma * (gb + pg[1]);

  StoNetModel m = lg.model;
  update_params_step(m, lg.data, z, {gamma, gamma}, prior);
  const Vector got = m.latent_params.flatten();
  CHECK(got[0] == doctest::Approx(expect_w).epsilon(1e-12));
  CHECK(got[1] == doctest::Approx(expect_b).epsilon(1e-12));
}

TEST_CASE("pruned entries stay frozen at zero across updates") {
  LinearGaussian lg = make_linear_gaussian(20, 2, 2, 1.0, 0.5, 82);
  const PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1e-1);
  StoNetModel m = lg.model;
  // force a mask: freeze half the latent weights
  MlpParams mask = MlpParams::zeros_like(m.latent_spec);
  mask.weights[0].setOnes();
  mask.biases[0].setOnes();
  mask.weights[0](0, 0) = 0.0;
  mask.biases[0](1) = 0.0;
  m.latent_mask = mask;
  m.latent_params.cwise_mul(mask);
  Rng rng(83);
  LatentState st;
  st.z = latent_conditional_mean(m, lg.data);
  st.v = Matrix::Zero(20, 2);
  for (int step = 0; step < 100; ++step) {
    impute_latent_step(st, m, lg.data, {}, 0.05, 1.0, rng);
    update_params_step(m, lg.data, st.z, {0.005, 0.005}, prior, -1, false);
  }
  CHECK(m.latent_params.weights[0](0, 0) == 0.0);
  CHECK(m.latent_params.biases[0](1) == 0.0);
  CHECK(m.latent_params.weights[0].cwiseAbs().sum() > 0.0);
}

TEST_CASE("update_sigma_z closed form and consistency") {
  Matrix z(2, 1), mu(2, 1);
  z << 1.0, 1.0;
  mu.setZero();
  CHECK(update_sigma_z(z, mu, 1.0, 1.0) == doctest::Approx(2.0));
  z.setZero();
  CHECK(update_sigma_z(z, mu, 1.0, 1.0) == doctest::Approx(1.0));

  // n = 1e5 i.i.d. N(0, s2) residuals recover s2 within 5%
  Rng rng(91);
  for (double s2 : {0.01, 1.0, 4.0}) {
    Matrix r(100000, 1), zero = Matrix::Zero(100000, 1);
    for (int i = 0; i < 100000; ++i) r(i, 0) = std::sqrt(s2) * rng.normal();
    CHECK(update_sigma_z(r, zero, 1.0, 1.0) == doctest::Approx(s2).epsilon(0.05));
  }

  CHECK_THROWS_AS(update_sigma_z(z, Matrix::Zero(3, 1), 1.0, 1.0), DimensionError);
  CHECK_THROWS_AS(update_sigma_z(z, mu, 0.0, 1.0), ConfigError);  // denom 0 at n=2? alpha=0 -> n/2-1 = 0
}

TEST_CASE("zero-epoch schedules leave the model unchanged") {
  LinearGaussian lg = make_linear_gaussian(10, 2, 2, 1.0, 0.5, 84);
  TrainSchedule sched;
  sched.pretrain_epochs = sched.train_epochs = sched.finetune_epochs = 0;
  sched.gamma0 = {0.01, 0.01};
  sched.seed = 7;
  const PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1e-1);
  const Vector before = lg.model.latent_params.flatten();
  TrainResult r = train(lg.model, lg.data, sched, prior);
  CHECK(r.model.latent_params.flatten() == before);
  CHECK(r.log.rows.empty());
}

TEST_CASE("training is deterministic given the seed") {
  LinearGaussian lg = make_linear_gaussian(30, 2, 2, 1.0, 0.5, 85);
  TrainSchedule sched;
  sched.pretrain_epochs = 3;
  sched.train_epochs = 10;
  sched.finetune_epochs = 2;
  sched.eps0 = 0.05;
  sched.gamma0 = {0.02, 0.02};
  sched.minibatch = 8;
  sched.seed = 424242;
  const PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1e-1);
  TrainResult r1 = train(lg.model, lg.data, sched, prior);
  TrainResult r2 = train(lg.model, lg.data, sched, prior);
  CHECK(checkpoint_to_json({r1.model, 0.0}) == checkpoint_to_json({r2.model, 0.0}));
  CHECK(r1.state.z == r2.state.z);
}

TEST_CASE("trained linear model recovers the identified outcome-map functionals") {
  // Y = w_z z + w_a a + b with z = W1 a + e_z; with sigma_z2/sigma_y2 fixed at
  // truth, |w_z| and the reduced-form slopes are identified
  const int n = 400, d_a = 2, d_z = 1;
  const double sigma_z2 = 0.25, sigma_y2 = 0.25;
  Rng rng(20240805);
  Matrix w1(1, 2);
  w1 << 0.8, -0.5;
  const double w_z = 1.2, b = 0.4;
  Eigen::RowVectorXd w_a(2);
  w_a << 0.6, -0.3;

  Dataset data;
  data.a = random_matrix(rng, n, d_a);
  Matrix z_true(n, d_z);
  data.y.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    z_true(i, 0) = w1.row(0).dot(data.a.row(i)) + std::sqrt(sigma_z2) * rng.normal();
    data.y(i, 0) = w_z * z_true(i, 0) + w_a.dot(data.a.row(i)) + b +
                   std::sqrt(sigma_y2) * rng.normal();
  }

  StoNetConfig c;
  c.variant = DagVariant::SimpleConfounding;
  c.d_a = d_a;
  c.d_y = 1;
  c.d_z = d_z;
  c.latent_hidden = {};
  c.outcome_hidden = {};
  c.sigma_z2 = sigma_z2;
  c.sigma_y2 = sigma_y2;
  c.seed = 5;
  StoNetModel model = build_model(c);
  // start the latent map at truth (stationary); mu2 trains from scratch
  model.latent_params.weights[0] = w1;

  TrainSchedule sched;
  sched.pretrain_epochs = 200;
  sched.train_epochs = 8000;
  sched.finetune_epochs = 0;
  sched.eps0 = 0.1;
  sched.gamma0 = {1e-4, 0.1};  // keep the pinned latent map nearly fixed
  sched.eps_decay = {DecayKind::Harmonic, 0.25, 1.0};
  sched.gamma_decay = {DecayKind::Harmonic, 0.25, 1.0};
  sched.seed = 6;
  const PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1.0);
  TrainResult r = train(model, data, sched, prior);

  // least-squares oracle on (true Z, A, Y)
  Matrix design(n, d_z + d_a + 1);
  design.col(0) = z_true.col(0);
  design.middleCols(1, d_a) = data.a;
  design.col(d_z + d_a).setOnes();
  const Vector ls = (design.transpose() * design)
                        .ldlt()
                        .solve(design.transpose() * data.y.col(0));
  const double ls_wz = ls[0];
  const Eigen::RowVectorXd ls_wa = ls.segment(1, d_a).transpose();
  const Eigen::RowVectorXd ls_slope = ls_wz * w1.row(0) + ls_wa;  // via known W1

  const Eigen::RowVectorXd got_wz = r.model.outcome_params.weights[0].leftCols(d_z);
  const Eigen::RowVectorXd got_wa = r.model.outcome_params.weights[0].rightCols(d_a);
  const Eigen::RowVectorXd got_w1 = r.model.latent_params.weights[0].row(0);
  const Eigen::RowVectorXd got_slope = got_wz[0] * got_w1 + got_wa;

  CHECK(std::abs(got_wz.norm() - std::abs(ls_wz)) / std::abs(ls_wz) < 0.10);
  for (int j = 0; j < d_a; ++j)
    CHECK(std::abs(got_slope[j] - ls_slope[j]) /
              std::max(std::abs(ls_slope[j]), 0.1) <
          0.10);

  // joint log density improves over training
  std::vector<double> ld;
  for (const auto& row : r.log.rows)
    if (row.stage == "train") ld.push_back(row.log_density);
  const std::size_t k = ld.size() / 10;
  std::vector<double> head(ld.begin(), ld.begin() + k);
  std::vector<double> tail(ld.end() - k, ld.end());
  std::sort(head.begin(), head.end());
  std::sort(tail.begin(), tail.end());
  CHECK(tail[k / 2] > head[k / 2]);
}
