#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mofit/errors.hpp"
#include "mofit/priors.hpp"
#include "test_support.hpp"

using namespace mofit;
using namespace mofit::testing;

namespace {

GaussianMixture make_mixture(Rng& rng, int K, int d) {
  GaussianMixture gmm;
  gmm.weights = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K; ++k) gmm.weights[k] = rng.uniform(0.5, 1.5);
  gmm.weights /= gmm.weights.sum();
  gmm.means = random_matrix(rng, K, d, 2.0);
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd A = random_matrix(rng, d, d, 0.5);
    gmm.covariances.push_back(A * A.transpose() +
                              0.5 * Eigen::MatrixXd::Identity(d, d));
  }
  gmm.finalize();
  return gmm;
}

// Dense oracle evaluating every component density directly.
double gmm_oracle(const Eigen::VectorXd& x, const GaussianMixture& gmm) {
  double best = std::numeric_limits<double>::infinity();
  const int d = gmm.dim();
  for (int k = 0; k < gmm.components(); ++k) {
    const Eigen::VectorXd diff = x - gmm.means.row(k).transpose();
    const Eigen::MatrixXd cov = gmm.covariances[static_cast<std::size_t>(k)];
    const double maha = diff.transpose() * cov.inverse() * diff;
    const double density = gmm.weights[k] *
                           std::pow(2.0 * M_PI, -0.5 * d) /
                           std::sqrt(cov.determinant()) * std::exp(-0.5 * maha);
    best = std::min(best, -std::log(density));
  }
  return best;
}

Eigen::VectorXd identity_params(const ParamLayout& layout) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int j = 0; j < layout.joints; ++j) {
    theta[layout.rot_offset(j) + 0] = 1.0;
    theta[layout.rot_offset(j) + 4] = 1.0;
  }
  return theta;
}

}  // namespace

TEST_CASE("single-component gmm at the mean") {
  Rng rng(1);
  const int d = 4;
  GaussianMixture gmm = make_mixture(rng, 1, d);
  const Eigen::VectorXd mu = gmm.means.row(0).transpose();
  const auto eval = gmm_prior(mu, gmm);
  const double expected =
      -std::log(gmm.weights[0] * std::pow(2.0 * M_PI, -0.5 * d) /
                std::sqrt(gmm.covariances[0].determinant()));
  CHECK(eval.value == doctest::Approx(expected).epsilon(1e-10));
  CHECK(eval.gradient.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-component gmm takes the elementwise min") {
  Rng rng(2);
  GaussianMixture gmm = make_mixture(rng, 2, 3);
  GaussianMixture only0 = gmm, only1 = gmm;
  only0.means = gmm.means.row(0);
  only0.weights = Eigen::VectorXd::Ones(1) * gmm.weights[0];
  only0.covariances = {gmm.covariances[0]};
  only1.means = gmm.means.row(1);
  only1.weights = Eigen::VectorXd::Ones(1) * gmm.weights[1];
  only1.covariances = {gmm.covariances[1]};
  // Single-component mixtures must carry weight 1 to stay valid; rescale and
  // add back the log weight analytically.
  const double lw0 = std::log(gmm.weights[0]);
  const double lw1 = std::log(gmm.weights[1]);
  only0.weights.setOnes();
  only1.weights.setOnes();
  only0.finalize();
  only1.finalize();

  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd x = random_vector(rng, 3, 2.0);
    const double v0 = gmm_prior(x, only0).value - lw0;
    const double v1 = gmm_prior(x, only1).value - lw1;
    CHECK(gmm_prior(x, gmm).value ==
          doctest::Approx(std::min(v0, v1)).epsilon(1e-10));
  }
}

TEST_CASE("gmm matches the dense oracle and finite differences") {
  Rng rng(3);
  GaussianMixture gmm = make_mixture(rng, 4, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd x = random_vector(rng, 5, 2.0);
    const auto eval = gmm_prior(x, gmm);
    CHECK(eval.value == doctest::Approx(gmm_oracle(x, gmm)).epsilon(1e-9));
    const Eigen::VectorXd fd = finite_difference_gradient(
        [&](const Eigen::VectorXd& y) { return gmm_prior(y, gmm).value; }, x);
    CHECK(max_relative_error(eval.gradient, fd) < 1e-5);
  }
}

TEST_CASE("gmm residual block reproduces value and gradient") {
  Rng rng(4);
  GaussianMixture gmm = make_mixture(rng, 3, 4);
  const double weight = 0.37;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd x = random_vector(rng, 4, 2.0);
    Eigen::VectorXd rows;
    Eigen::MatrixXd jac;
    gmm_prior_residual(x, gmm, weight, rows, jac);
    const auto eval = gmm_prior(x, gmm);
    const int k = eval.component;
    const Eigen::VectorXd diff = x - gmm.means.row(k).transpose();
    const double maha = rows.squaredNorm() / (0.5 * weight);
    CHECK(maha == doctest::Approx(diff.transpose() *
                                  gmm.covariances[k].inverse() * diff)
                      .epsilon(1e-8));
    // 2 J^T r = weight * gradient of the prior value.
    const Eigen::VectorXd g = 2.0 * jac.transpose() * rows;
    CHECK(max_relative_error(g, Eigen::VectorXd(weight * eval.gradient)) < 1e-9);
  }
}

TEST_CASE("non positive-definite covariance raises BadPrior") {
  GaussianMixture gmm;
  gmm.weights = Eigen::VectorXd::Ones(1);
  gmm.means = Eigen::MatrixXd::Zero(1, 2);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  gmm.covariances = {bad};
  CHECK_THROWS_AS(gmm.finalize(), BadPrior);
}

TEST_CASE("em with one component recovers sample moments") {
  Rng rng(5);
  const Eigen::MatrixXd samples = random_matrix(rng, 500, 3, 1.5);
  const GaussianMixture gmm = fit_gmm_em(samples, 1, 9, 5, 0.0);
  const Eigen::VectorXd mean = samples.colwise().mean();
  CHECK((gmm.means.row(0).transpose() - mean).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < samples.rows(); ++i) {
    const Eigen::VectorXd d = samples.row(i).transpose() - mean;
    cov += d * d.transpose();
  }
  cov /= samples.rows();
  CHECK((gmm.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("em separates two well-separated gaussians") {
  Rng rng(6);
  const int n = 600;
  Eigen::MatrixXd samples(n, 2);
  for (int i = 0; i < n; ++i) {
    const bool first = i < n / 2;
    samples(i, 0) = (first ? -5.0 : 5.0) + 0.5 * rng.normal();
    samples(i, 1) = (first ? 2.0 : -3.0) + 0.5 * rng.normal();
  }
  std::vector<double> history;
  const GaussianMixture gmm = fit_gmm_em(samples, 2, 7, 30, 1e-9, &history);

  // Log-likelihood is non-decreasing (up to tiny numerical slack).
  for (std::size_t i = 1; i < history.size(); ++i)
    CHECK(history[i] >= history[i - 1] - 1e-9);

  // Means recovered within 0.1 sigma.
  const Vec2 a = gmm.means.row(0).transpose().head<2>();
  const Vec2 b = gmm.means.row(1).transpose().head<2>();
  const Vec2 target1(-5.0, 2.0), target2(5.0, -3.0);
  const double direct = std::min((a - target1).norm() + (b - target2).norm(),
                                 (a - target2).norm() + (b - target1).norm());
  CHECK(direct < 2.0 * 0.1 * 0.5);
}

TEST_CASE("gravity loss value and gradient") {
  const KinematicModel body = synth_model(default_body_config(), 12);
  const ParamLayout layout = body.layout(Task::Hmd);

  SUBCASE("upright pose scores zero") {
    const auto eval = gravity_loss(body, layout, identity_params(layout));
    CHECK(eval.value == doctest::Approx(0.0));
  }

  SUBCASE("upside down scores two") {
    Eigen::VectorXd theta = identity_params(layout);
    // Rotation about x by pi: columns (1,0,0) and (0,-1,0).
    theta.segment<6>(layout.rot_offset(0)) << 1, 0, 0, 0, -1, 0;
    const auto eval = gravity_loss(body, layout, theta);
    CHECK(eval.value == doctest::Approx(2.0));
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd theta = identity_params(layout);
      for (int i = 0; i < 6; ++i)
        theta[layout.rot_offset(0) + i] += 0.6 * rng.normal();
      const auto eval = gravity_loss(body, layout, theta);
      const Eigen::VectorXd fd = finite_difference_gradient(
          [&](const Eigen::VectorXd& x) {
            return gravity_loss(body, layout, x).value;
          },
          theta);
      CHECK(max_relative_error(eval.gradient, fd) < 1e-5);
      CHECK(eval.value >= 0.0);
      CHECK(eval.value <= 2.0);
    }
  }
}

TEST_CASE("temporal loss on sequences") {
  const KinematicModel body = synth_model(default_body_config(), 13);
  const ParamLayout layout = body.layout(Task::Hmd);
  Rng rng(8);

  Eigen::VectorXd base = identity_params(layout);
  for (int j = 0; j < layout.joints; ++j)
    for (int k = 0; k < 6; ++k) base[layout.rot_offset(j) + k] += 0.3 * rng.normal();

  SUBCASE("constant sequence scores zero") {
    const auto eval = temporal_loss(body, layout, {base, base, base});
    CHECK(eval.value == doctest::Approx(0.0));
  }

  SUBCASE("two frames equal the summed transform differences") {
    Eigen::VectorXd moved = base;
    for (int k = 0; k < 6; ++k) moved[layout.rot_offset(6) + k] += 0.4 * rng.normal();
    const auto eval = temporal_loss(body, layout, {base, moved});
    const auto fka = forward_kinematics(body, layout, base);
    const auto fkb = forward_kinematics(body, layout, moved);
    double expected = 0.0;
    for (int j = 0; j < body.num_joints(); ++j)
      expected += se3_distance(fka.world[j], fkb.world[j]);
    CHECK(eval.value == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("gradients match finite differences") {
    // Every joint moves between frames: the norm is smooth at the test point.
    Eigen::VectorXd second = base, third = base;
    for (int j = 0; j < layout.joints; ++j)
      for (int k = 0; k < 6; ++k) {
        second[layout.rot_offset(j) + k] += 0.2 * rng.normal();
        third[layout.rot_offset(j) + k] += 0.2 * rng.normal();
      }
    const std::vector<Eigen::VectorXd> seq = {base, second, third};
    const auto eval = temporal_loss(body, layout, seq);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const Eigen::VectorXd fd = finite_difference_gradient(
          [&](const Eigen::VectorXd& x) {
            std::vector<Eigen::VectorXd> s = seq;
            s[t] = x;
            return temporal_loss(body, layout, s).value;
          },
          seq[t]);
      CHECK(max_relative_error(eval.gradients[t], fd) < 1e-5);
    }
  }
}
