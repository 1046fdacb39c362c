#include "mofit/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mofit/errors.hpp"

namespace mofit {

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.R = R.transpose();
  out.t = -(R.transpose() * t);
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  const Mat3 gram = R.transpose() * R;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  return out;
}

Vec12 flatten_transform(const RigidTransform& T) {
  Vec12 v;
  for (int r = 0; r < 3; ++r) {
    v[4 * r + 0] = T.R(r, 0);
    v[4 * r + 1] = T.R(r, 1);
    v[4 * r + 2] = T.R(r, 2);
    v[4 * r + 3] = T.t[r];
  }
  return v;
}

RigidTransform unflatten_transform(const Vec12& v) {
  RigidTransform T;
  for (int r = 0; r < 3; ++r) {
    T.R(r, 0) = v[4 * r + 0];
    T.R(r, 1) = v[4 * r + 1];
    T.R(r, 2) = v[4 * r + 2];
    T.t[r] = v[4 * r + 3];
  }
  return T;
}

Mat3 rot6d_to_matrix(const Vec6& r) {
  const Vec3 a = r.head<3>();
  const Vec3 b = r.tail<3>();
  const double na = a.norm();
  if (na < 1e-12) throw DegenerateInput("rot6d: first column norm < 1e-12");
  const Vec3 c0 = a / na;
  const Vec3 w = b - c0.dot(b) * c0;
  const double nw = w.norm();
  if (nw < 1e-12)
    throw DegenerateInput("rot6d: columns parallel or second column degenerate");
  const Vec3 c1 = w / nw;
  Mat3 R;
  R.col(0) = c0;
  R.col(1) = c1;
  R.col(2) = c0.cross(c1);
  return R;
}

Vec6 matrix_to_rot6d(const Mat3& R) {
  Vec6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

Eigen::Matrix<double, 9, 6> rot6d_to_matrix_jacobian(const Vec6& r) {
  const Vec3 a = r.head<3>();
  const Vec3 b = r.tail<3>();
  const double na = a.norm();
  if (na < 1e-12) throw DegenerateInput("rot6d: first column norm < 1e-12");
  const Vec3 u = a / na;
  const Vec3 w = b - u.dot(b) * u;
  const double nw = w.norm();
  if (nw < 1e-12)
    throw DegenerateInput("rot6d: columns parallel or second column degenerate");
  const Vec3 v = w / nw;

  // du/da, dw/da, dw/db, dv/dw from the normalization/projection chain.
  const Mat3 du_da = (Mat3::Identity() - u * u.transpose()) / na;
  const Mat3 dw_du = -(u * b.transpose() + u.dot(b) * Mat3::Identity());
  const Mat3 dw_da = dw_du * du_da;
  const Mat3 dw_db = Mat3::Identity() - u * u.transpose();
  const Mat3 dv_dw = (Mat3::Identity() - v * v.transpose()) / nw;
  const Mat3 dv_da = dv_dw * dw_da;
  const Mat3 dv_db = dv_dw * dw_db;

  auto skew = [](const Vec3& x) {
    Mat3 s;
    s << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
    return s;
  };
  // c2 = u x v: dc2 = -[v]x du + [u]x dv.
  const Mat3 dc2_da = -skew(v) * du_da + skew(u) * dv_da;
  const Mat3 dc2_db = skew(u) * dv_db;

  Eigen::Matrix<double, 9, 6> J;
  J.setZero();
  for (int row = 0; row < 3; ++row) {
    // R(row, 0) = u[row], R(row, 1) = v[row], R(row, 2) = c2[row].
    J.block<1, 3>(3 * row + 0, 0) = du_da.row(row);
    J.block<1, 3>(3 * row + 1, 0) = dv_da.row(row);
    J.block<1, 3>(3 * row + 1, 3) = dv_db.row(row);
    J.block<1, 3>(3 * row + 2, 0) = dc2_da.row(row);
    J.block<1, 3>(3 * row + 2, 3) = dc2_db.row(row);
  }
  return J;
}

Eigen::MatrixXd weak_perspective_project(const Eigen::MatrixXd& points,
                                         const WeakPerspectiveCamera& cam) {
  if (points.cols() != 3) throw ShapeMismatch("expected n x 3 point matrix");
  if (!(cam.scale > 0)) throw DegenerateInput("weak-perspective scale must be > 0");
  Eigen::MatrixXd out(points.rows(), 2);
  out.col(0) = cam.scale * points.col(0).array() + cam.translation.x();
  out.col(1) = cam.scale * points.col(1).array() + cam.translation.y();
  return out;
}

Eigen::MatrixXd perspective_project(const Eigen::MatrixXd& points,
                                    const PerspectiveIntrinsics& K) {
  if (points.cols() != 3) throw ShapeMismatch("expected n x 3 point matrix");
  Eigen::MatrixXd out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double z = points(i, 2);
    if (z <= 1e-6) throw BehindCamera("point behind camera in perspective projection");
    out(i, 0) = K.fx * points(i, 0) / z + K.cx;
    out(i, 1) = K.fy * points(i, 1) / z + K.cy;
  }
  return out;
}

ProcrustesResult procrustes_align(const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& Y) {
  if (X.cols() != 3 || Y.cols() != 3 || X.rows() != Y.rows())
    throw ShapeMismatch("procrustes expects matching n x 3 point sets");
  const Eigen::Index n = X.rows();
  if (n < 3) throw DegenerateInput("procrustes needs at least 3 points");

  const Vec3 cx = X.colwise().mean();
  const Vec3 cy = Y.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - cx.transpose();
  const Eigen::MatrixXd Yc = Y.rowwise() - cy.transpose();

  const double var_x = Xc.squaredNorm() / static_cast<double>(n);
  if (var_x < 1e-24) throw DegenerateInput("procrustes source has zero variance");

  const Mat3 cov = (Yc.transpose() * Xc) / static_cast<double>(n);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d[2] = -1;

  ProcrustesResult res;
  res.R = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  res.scale = svd.singularValues().dot(d) / var_x;
  res.t = cy - res.scale * (res.R * cx);
  res.aligned =
      (res.scale * (res.R * X.transpose())).transpose().rowwise() +
      res.t.transpose();
  res.residual = (res.aligned - Y).squaredNorm();
  return res;
}

double se3_distance(const RigidTransform& a, const RigidTransform& b,
                    double translation_weight) {
  const double rot_sq = (a.R - b.R).squaredNorm();
  const double tr_sq = (a.t - b.t).squaredNorm();
  return std::sqrt(rot_sq + translation_weight * translation_weight * tr_sq);
}

}  // namespace mofit
