#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mofit/metrics.hpp"
#include "test_support.hpp"

using namespace mofit;
using namespace mofit::testing;

TEST_CASE("v2v basics and subset") {
  Rng rng(1);
  const Eigen::MatrixXd M = random_matrix(rng, 30, 3);
  CHECK(v2v(M, M) == doctest::Approx(0.0));

  Eigen::MatrixXd shifted = M;
  shifted.col(0).array() += 0.003;  // 3 mm in x
  CHECK(v2v(shifted, M) == doctest::Approx(3.0).epsilon(1e-12));

  // Loop oracle on a random pair.
  const Eigen::MatrixXd other = random_matrix(rng, 30, 3);
  double acc = 0.0;
  for (int i = 0; i < 30; ++i) acc += (M.row(i) - other.row(i)).norm();
  CHECK(v2v(M, other) == doctest::Approx(1000.0 * acc / 30).epsilon(1e-12));

  const std::vector<int> subset = {1, 5, 9};
  double sub_acc = 0.0;
  for (int i : subset) sub_acc += (M.row(i) - other.row(i)).norm();
  CHECK(v2v(M, other, &subset) ==
        doctest::Approx(1000.0 * sub_acc / 3).epsilon(1e-12));
}

TEST_CASE("mpjpe basics") {
  Rng rng(2);
  Eigen::MatrixXd J = random_matrix(rng, 10, 3);
  CHECK(mpjpe(J, J) == doctest::Approx(0.0));
  Eigen::MatrixXd off = J;
  off(3, 2) += 0.005;  // one joint off by 5 mm among 10
  CHECK(mpjpe(off, J) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("procrustes-aligned metrics") {
  Rng rng(3);
  const Eigen::MatrixXd X = random_matrix(rng, 25, 3);

  SUBCASE("similarity-transformed estimate scores zero") {
    const RigidTransform T = random_transform(rng);
    Eigen::MatrixXd est(X.rows(), 3);
    for (int i = 0; i < X.rows(); ++i)
      est.row(i) = (1.7 * (T.R * X.row(i).transpose()) + T.t).transpose();
    CHECK(procrustes_aligned(&mpjpe, est, X) < 1e-7);
  }

  SUBCASE("alignment never hurts and is invariant to similarity transforms") {
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::MatrixXd est = X + 0.2 * random_matrix(rng, 25, 3);
      const double raw = mpjpe(est, X);
      const double pa = procrustes_aligned(&mpjpe, est, X);
      CHECK(pa <= raw + 1e-9);

      const RigidTransform T = random_transform(rng);
      Eigen::MatrixXd moved(est.rows(), 3);
      for (int i = 0; i < est.rows(); ++i)
        moved.row(i) = (0.8 * (T.R * est.row(i).transpose()) + T.t).transpose();
      CHECK(procrustes_aligned(&mpjpe, moved, X) == doctest::Approx(pa).epsilon(1e-9));
    }
  }
}

TEST_CASE("ground penetration") {
  Eigen::MatrixXd M(4, 3);
  M << 0, 0.5, 0, 1, 0.1, 0, 0, 2.0, 1, -1, 0.7, 0;
  CHECK(ground_penetration(M) == 0.0);

  M(2, 1) = -0.005;  // single vertex 5 mm below ground
  CHECK(ground_penetration(M) == doctest::Approx(5.0).epsilon(1e-12));

  // Invariant to adding vertices above the plane.
  Eigen::MatrixXd bigger(6, 3);
  bigger.topRows(4) = M;
  bigger.row(4) << 3, 4, 5;
  bigger.row(5) << -2, 0.1, 7;
  CHECK(ground_penetration(bigger) == doctest::Approx(5.0).epsilon(1e-12));

  // Filtered-mean oracle on a random mesh.
  Rng rng(4);
  const Eigen::MatrixXd R = random_matrix(rng, 100, 3, 0.3);
  double acc = 0.0;
  int below = 0;
  for (int i = 0; i < 100; ++i)
    if (R(i, 1) < 0) {
      acc += -R(i, 1);
      ++below;
    }
  REQUIRE(below > 0);
  CHECK(ground_penetration(R) == doctest::Approx(1000.0 * acc / below).epsilon(1e-12));
}

TEST_CASE("metrics are permutation-equivariant") {
  Rng rng(5);
  const Eigen::MatrixXd A = random_matrix(rng, 20, 3);
  const Eigen::MatrixXd B = random_matrix(rng, 20, 3);
  std::vector<int> perm(20);
  for (int i = 0; i < 20; ++i) perm[i] = i;
  std::reverse(perm.begin(), perm.end());
  Eigen::MatrixXd Ap(20, 3), Bp(20, 3);
  for (int i = 0; i < 20; ++i) {
    Ap.row(i) = A.row(perm[i]);
    Bp.row(i) = B.row(perm[i]);
  }
  CHECK(mpjpe(Ap, Bp) == doctest::Approx(mpjpe(A, B)).epsilon(1e-12));
  CHECK(procrustes_aligned(&mpjpe, Ap, Bp) ==
        doctest::Approx(procrustes_aligned(&mpjpe, A, B)).epsilon(1e-9));
}

TEST_CASE("curve aggregation") {
  Eigen::MatrixXd curves(1, 4);
  curves << 4, 3, 2, 1;
  CHECK((curve_aggregate(curves).transpose() - curves.row(0)).cwiseAbs().maxCoeff() ==
        0.0);

  Eigen::MatrixXd two(2, 3);
  two << 2, 4, 6, 4, 6, 8;
  const Eigen::VectorXd mean = curve_aggregate(two);
  CHECK(mean[0] == doctest::Approx(3.0));
  CHECK(mean[1] == doctest::Approx(5.0));
  CHECK(mean[2] == doctest::Approx(7.0));

  // Streaming-mean oracle.
  Rng rng(6);
  const Eigen::MatrixXd R = random_matrix(rng, 50, 6);
  const Eigen::VectorXd got = curve_aggregate(R);
  for (int c = 0; c < 6; ++c) {
    double acc = 0.0;
    for (int r = 0; r < 50; ++r) acc += (R(r, c) - acc) / (r + 1);
    CHECK(got[c] == doctest::Approx(acc).epsilon(1e-12));
  }
}
