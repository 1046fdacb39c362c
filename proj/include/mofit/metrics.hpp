#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mofit/geometry.hpp"

namespace mofit {

// Evaluation metrics. Inputs are in meters; every metric reports millimeters.

// Mean per-vertex Euclidean error, optionally over a vertex subset.
double v2v(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference,
           const std::vector<int>* subset = nullptr);

// Mean per-joint Euclidean error.
double mpjpe(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference);

// Mean landmark error (same computation, separate name for reporting).
double mplpe(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference);

// Metric after Procrustes alignment of the estimate onto the reference. The
// alignment uses the same point set the metric is computed on.
using PointMetric = double (*)(const Eigen::MatrixXd&, const Eigen::MatrixXd&);
double procrustes_aligned(double (*metric)(const Eigen::MatrixXd&,
                                           const Eigen::MatrixXd&),
                          const Eigen::MatrixXd& estimate,
                          const Eigen::MatrixXd& reference);

// Mean |depth| below the y = 0 ground plane over vertices with y < 0;
// zero when no vertex is below ground.
double ground_penetration(const Eigen::MatrixXd& vertices);

// Per-iteration mean of metric curves across instances: rows are instances,
// columns are iterations; the output holds one mean per iteration.
Eigen::VectorXd curve_aggregate(const Eigen::MatrixXd& per_instance_curves);

}  // namespace mofit
