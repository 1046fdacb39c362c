#pragma once

#include <Eigen/Core>

namespace mofit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;

// Rigid transform x -> R x + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  RigidTransform inverse() const;

  // RtR = I and det(R) = +1 within tol.
  bool is_valid(double tol = 1e-9) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

// Row-major flattening of the 3x4 block [R | t]:
// [R00 R01 R02 t0 R10 R11 R12 t1 R20 R21 R22 t2].
Vec12 flatten_transform(const RigidTransform& T);
RigidTransform unflatten_transform(const Vec12& v);

// Two-column Gram-Schmidt decode of the 6D rotation representation.
// r = [a; b] with columns a, b; throws DegenerateInput when a column norm is
// below 1e-12 or the columns are parallel within 1e-12.
Mat3 rot6d_to_matrix(const Vec6& r);

// First two columns of R, stacked.
Vec6 matrix_to_rot6d(const Mat3& R);

// Jacobian of the decoded rotation w.r.t. the 6 raw values. Rows follow the
// row-major flattening of R: [R00 R01 R02 R10 ... R22].
Eigen::Matrix<double, 9, 6> rot6d_to_matrix_jacobian(const Vec6& r);

struct WeakPerspectiveCamera {
  double scale = 1.0;       // pixels per meter
  Vec2 translation = Vec2::Zero();  // pixels
};

struct PerspectiveIntrinsics {
  double fx = 512.0, fy = 512.0;
  double cx = 256.0, cy = 256.0;
};

// Per-row projection s*(x, y) + t of an n x 3 point matrix.
Eigen::MatrixXd weak_perspective_project(const Eigen::MatrixXd& points,
                                         const WeakPerspectiveCamera& cam);

// (fx x/z + cx, fy y/z + cy); throws BehindCamera when any z <= 1e-6.
Eigen::MatrixXd perspective_project(const Eigen::MatrixXd& points,
                                    const PerspectiveIntrinsics& K);

struct ProcrustesResult {
  double scale = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Eigen::MatrixXd aligned;  // s R X + t, n x 3
  double residual = 0.0;    // sum of squared distances to the target
};

// Least-squares similarity alignment of X onto Y (closed-form centroid/SVD
// solution with reflection correction). Requires n >= 3 and nonzero variance.
ProcrustesResult procrustes_align(const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& Y);

// Frobenius norm of the difference of the two [R | t] blocks. The optional
// weight scales the translation part (default 1: plain Frobenius).
double se3_distance(const RigidTransform& a, const RigidTransform& b,
                    double translation_weight = 1.0);

}  // namespace mofit
