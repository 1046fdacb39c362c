#include "mofit/metrics.hpp"

#include "mofit/errors.hpp"

namespace mofit {

namespace {

constexpr double kToMillimeters = 1000.0;

double mean_point_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != 3 || b.cols() != 3)
    throw ShapeMismatch("point sets must be matching n x 3");
  if (a.rows() == 0) throw ShapeMismatch("empty point set");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) acc += (a.row(i) - b.row(i)).norm();
  return kToMillimeters * acc / static_cast<double>(a.rows());
}

}  // namespace

double v2v(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference,
           const std::vector<int>* subset) {
  if (!subset) return mean_point_error(estimate, reference);
  if (subset->empty()) throw ShapeMismatch("empty vertex subset");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(subset->size()), 3);
  Eigen::MatrixXd b(static_cast<Eigen::Index>(subset->size()), 3);
  for (std::size_t i = 0; i < subset->size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = estimate.row((*subset)[i]);
    b.row(static_cast<Eigen::Index>(i)) = reference.row((*subset)[i]);
  }
  return mean_point_error(a, b);
}

double mpjpe(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference) {
  return mean_point_error(estimate, reference);
}

double mplpe(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference) {
  return mean_point_error(estimate, reference);
}

double procrustes_aligned(double (*metric)(const Eigen::MatrixXd&,
                                           const Eigen::MatrixXd&),
                          const Eigen::MatrixXd& estimate,
                          const Eigen::MatrixXd& reference) {
  const ProcrustesResult aligned = procrustes_align(estimate, reference);
  return metric(aligned.aligned, reference);
}

double ground_penetration(const Eigen::MatrixXd& vertices) {
  if (vertices.cols() != 3) throw ShapeMismatch("vertices must be n x 3");
  double acc = 0.0;
  int below = 0;
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    const double d = vertices(i, 1);  // signed distance to the y=0 plane
    if (d < 0.0) {
      acc += -d;
      ++below;
    }
  }
  return below == 0 ? 0.0 : kToMillimeters * acc / below;
}

Eigen::VectorXd curve_aggregate(const Eigen::MatrixXd& per_instance_curves) {
  if (per_instance_curves.rows() == 0)
    throw ShapeMismatch("no instances to aggregate");
  return per_instance_curves.colwise().mean().transpose();
}

}  // namespace mofit
