#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "mofit/errors.hpp"
#include "mofit/geometry.hpp"
#include "test_support.hpp"

using namespace mofit;
using namespace mofit::testing;

namespace {

// Independent two-step Gram-Schmidt oracle for the 6D decode.
Mat3 gram_schmidt_oracle(const Vec6& r) {
  Vec3 a = r.head<3>();
  Vec3 b = r.tail<3>();
  a.normalize();
  b = b - a.dot(b) * a;
  b.normalize();
  Mat3 R;
  R.col(0) = a;
  R.col(1) = b;
  R.col(2) = a.cross(b);
  return R;
}

Eigen::Matrix4d to_homogeneous(const RigidTransform& T) {
  Eigen::Matrix4d H = Eigen::Matrix4d::Identity();
  H.topLeftCorner<3, 3>() = T.R;
  H.topRightCorner<3, 1>() = T.t;
  return H;
}

}  // namespace

TEST_CASE("rot6d identity and normalization") {
  Vec6 r;
  r << 1, 0, 0, 0, 1, 0;
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() == doctest::Approx(0.0));
  r << 2, 0, 0, 0, 3, 0;
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("rot6d matches Gram-Schmidt oracle on random input") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::VectorXd raw = random_vector(rng, 6);
    const Vec6 r = raw;
    const Mat3 R = rot6d_to_matrix(r);
    CHECK((R - gram_schmidt_oracle(r)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rot6d outputs are orthonormal with unit determinant") {
  Rng rng(11);
  for (int trial = 0; trial < 100000; ++trial) {
    Vec6 r;
    for (int i = 0; i < 6; ++i) r[i] = rng.normal();
    const Mat3 R = rot6d_to_matrix(r);
    CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(R.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("rot6d degenerate inputs throw") {
  Vec6 r;
  r << 0, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateInput);
  r << 1, 0, 0, 2, 0, 0;  // parallel columns
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateInput);
}

TEST_CASE("rot6d round trip from a valid rotation") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 R = random_rotation(rng);
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(R));
    CHECK((back - R).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rot6d decode jacobian matches finite differences") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd r = random_vector(rng, 6);
    const auto J = rot6d_to_matrix_jacobian(r);
    const auto fd = finite_difference_jacobian(
        [](const Eigen::VectorXd& x) {
          const Mat3 R = rot6d_to_matrix(Vec6(x));
          Eigen::VectorXd flat(9);
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) flat[3 * a + b] = R(a, b);
          return flat;
        },
        r);
    CHECK(max_relative_error(J, fd) < 1e-6);
  }
}

TEST_CASE("compose identities and inverse") {
  Rng rng(5);
  const RigidTransform T = random_transform(rng);
  const RigidTransform I;
  CHECK(se3_distance(compose(I, T), T) == doctest::Approx(0.0));
  CHECK(se3_distance(compose(T, T.inverse()), I) < 1e-12);
}

TEST_CASE("compose matches homogeneous matrix product oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const RigidTransform a = random_transform(rng);
    const RigidTransform b = random_transform(rng);
    const Eigen::Matrix4d expected = to_homogeneous(a) * to_homogeneous(b);
    const Eigen::Matrix4d got = to_homogeneous(compose(a, b));
    CHECK((expected - got).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("weak perspective projection") {
  Eigen::MatrixXd P(1, 3);
  P << 1, 2, 5;
  WeakPerspectiveCamera cam;
  CHECK(weak_perspective_project(P, cam)(0, 0) == doctest::Approx(1.0));
  CHECK(weak_perspective_project(P, cam)(0, 1) == doctest::Approx(2.0));
  cam.scale = 2.0;
  cam.translation << 3, 4;
  CHECK(weak_perspective_project(P, cam)(0, 0) == doctest::Approx(5.0));
  CHECK(weak_perspective_project(P, cam)(0, 1) == doctest::Approx(8.0));

  Rng rng(13);
  const Eigen::MatrixXd batch = random_matrix(rng, 40, 3);
  const Eigen::MatrixXd out = weak_perspective_project(batch, cam);
  for (int i = 0; i < batch.rows(); ++i) {
    CHECK(out(i, 0) == doctest::Approx(cam.scale * batch(i, 0) + cam.translation.x()));
    CHECK(out(i, 1) == doctest::Approx(cam.scale * batch(i, 1) + cam.translation.y()));
  }
}

TEST_CASE("perspective projection") {
  PerspectiveIntrinsics K;  // fx = fy = 512, cx = cy = 256
  Eigen::MatrixXd P(1, 3);
  P << 0, 0, 1;
  Eigen::MatrixXd out = perspective_project(P, K);
  CHECK(out(0, 0) == doctest::Approx(256.0));
  CHECK(out(0, 1) == doctest::Approx(256.0));
  P << 1, 0, 2;
  out = perspective_project(P, K);
  CHECK(out(0, 0) == doctest::Approx(512.0));
  CHECK(out(0, 1) == doctest::Approx(256.0));

  P << 0, 0, -1;
  CHECK_THROWS_AS(perspective_project(P, K), BehindCamera);

  Rng rng(17);
  Eigen::MatrixXd cloud = random_matrix(rng, 50, 3);
  cloud.col(2) = cloud.col(2).cwiseAbs().array() + 0.5;
  out = perspective_project(cloud, K);
  for (int i = 0; i < cloud.rows(); ++i) {
    CHECK(out(i, 0) ==
          doctest::Approx(K.fx * cloud(i, 0) / cloud(i, 2) + K.cx).epsilon(1e-12));
    CHECK(out(i, 1) ==
          doctest::Approx(K.fy * cloud(i, 1) / cloud(i, 2) + K.cy).epsilon(1e-12));
  }
}

TEST_CASE("procrustes recovers exact similarity transforms") {
  Rng rng(23);
  const Eigen::MatrixXd X = random_matrix(rng, 20, 3);

  SUBCASE("identity") {
    const auto res = procrustes_align(X, X);
    CHECK(res.scale == doctest::Approx(1.0));
    CHECK((res.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(res.t.norm() < 1e-10);
    CHECK(res.residual < 1e-10);
  }

  SUBCASE("scaled rigid copy") {
    const RigidTransform T = random_transform(rng);
    Eigen::MatrixXd Y(X.rows(), 3);
    for (int i = 0; i < X.rows(); ++i)
      Y.row(i) = (2.0 * (T.R * X.row(i).transpose()) + T.t).transpose();
    const auto res = procrustes_align(X, Y);
    CHECK(res.scale == doctest::Approx(2.0));
    CHECK((res.R - T.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((res.t - T.t).norm() < 1e-9);
    CHECK(res.residual < 1e-10);
  }
}

TEST_CASE("procrustes beats random similarity candidates on noisy targets") {
  Rng rng(29);
  const Eigen::MatrixXd X = random_matrix(rng, 15, 3);
  const RigidTransform T = random_transform(rng);
  Eigen::MatrixXd Y(X.rows(), 3);
  for (int i = 0; i < X.rows(); ++i)
    Y.row(i) = (1.3 * (T.R * X.row(i).transpose()) + T.t).transpose() +
               0.05 * Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
  const auto res = procrustes_align(X, Y);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s = std::exp(0.5 * rng.normal());
    const RigidTransform C = random_transform(rng);
    double err = 0.0;
    for (int i = 0; i < X.rows(); ++i)
      err += ((s * (C.R * X.row(i).transpose()) + C.t).transpose() - Y.row(i))
                 .squaredNorm();
    CHECK(res.residual <= err + 1e-12);
  }
}

TEST_CASE("procrustes rejects degenerate input") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(5, 3);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Random(5, 3);
  CHECK_THROWS_AS(procrustes_align(X, Y), DegenerateInput);
  Eigen::MatrixXd two = Eigen::MatrixXd::Random(2, 3);
  CHECK_THROWS_AS(procrustes_align(two, two), DegenerateInput);
}

TEST_CASE("se3 distance basics and oracle") {
  RigidTransform a, b;
  CHECK(se3_distance(a, a) == doctest::Approx(0.0));
  b.t << 3, 4, 0;
  CHECK(se3_distance(a, b) == doctest::Approx(5.0));

  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const RigidTransform x = random_transform(rng);
    const RigidTransform y = random_transform(rng);
    double sq = (x.t - y.t).squaredNorm();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) sq += (x.R(r, c) - y.R(r, c)) * (x.R(r, c) - y.R(r, c));
    CHECK(se3_distance(x, y) == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
    CHECK(se3_distance(x, y) == doctest::Approx(se3_distance(y, x)).epsilon(1e-12));
  }
}

TEST_CASE("se3 distance triangle inequality on sampled triples") {
  Rng rng(37);
  for (int trial = 0; trial < 10000; ++trial) {
    const RigidTransform a = random_transform(rng);
    const RigidTransform b = random_transform(rng);
    const RigidTransform c = random_transform(rng);
    CHECK(se3_distance(a, c) <= se3_distance(a, b) + se3_distance(b, c) + 1e-12);
  }
}

TEST_CASE("flatten transform round trip") {
  Rng rng(41);
  const RigidTransform T = random_transform(rng);
  const RigidTransform back = unflatten_transform(flatten_transform(T));
  CHECK(se3_distance(T, back) == doctest::Approx(0.0));
}
