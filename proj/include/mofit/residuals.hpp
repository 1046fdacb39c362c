#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mofit/model.hpp"
#include "mofit/model_derivatives.hpp"

namespace mofit {

struct Body2DObservations {
  Eigen::MatrixXd keypoints;   // J x 2, pixels
  Eigen::VectorXd confidence;  // J, in [0, 1]
};

struct HmdObservations {
  RigidTransform headset;
  RigidTransform wrist_left, wrist_right;
  Eigen::MatrixXd fingertips_left;   // 5 x 3, meters
  Eigen::MatrixXd fingertips_right;  // 5 x 3
  bool visible_left = true;
  bool visible_right = true;
};

struct FaceObservations {
  Eigen::MatrixXd landmarks;  // P x 2, pixels
  PerspectiveIntrinsics intrinsics;
};

// Task-tagged observation set. Only the member matching `task` is meaningful.
struct ObservationSet {
  Task task = Task::Hmd;
  Body2DObservations body2d;
  HmdObservations hmd;
  FaceObservations face;

  void validate(const KinematicModel& model) const;
};

// Fixed-layout residual vector. Masked entries are stored as exact zeros in
// both r and the jacobian rows, so data_term() == sum(mask .* r^2).
struct ResidualPacket {
  Eigen::VectorXd r;
  Eigen::VectorXd mask;      // 0/1 per residual entry
  Eigen::MatrixXd jacobian;  // |r| x |theta| when requested, else 0 x 0
  Eigen::VectorXd gradient;  // 2 J^T (mask .* r) when jacobian was computed

  bool has_jacobian() const { return jacobian.size() > 0; }
  double data_term() const { return r.squaredNorm(); }
};

// Fixed calibration transform applied as headset = calib * T_head.
RigidTransform default_hmd_calibration();

ResidualPacket body2d_residuals(const KinematicModel& model,
                                const Eigen::VectorXd& theta,
                                const Body2DObservations& obs,
                                bool with_jacobian);

ResidualPacket hmd_residuals(const KinematicModel& model,
                             const Eigen::VectorXd& theta,
                             const HmdObservations& obs,
                             const RigidTransform& calib,
                             bool with_jacobian);

ResidualPacket face_residuals(const KinematicModel& model,
                              const Eigen::VectorXd& theta,
                              const FaceObservations& obs,
                              bool with_jacobian);

// Dispatcher over the task tag; the analytic-jacobian entry point.
ResidualPacket task_residuals(const KinematicModel& model,
                              const Eigen::VectorXd& theta,
                              const ObservationSet& obs, bool with_jacobian,
                              const RigidTransform& calib = default_hmd_calibration());

// Points are visible iff their z coordinate in the headset frame is < 0
// (z >= 0 is behind the headset).
std::vector<bool> half_space_visibility(const RigidTransform& headset,
                                        const Eigen::MatrixXd& points);

// Canonical residual layout, for the describe-layout command and tests.
struct ResidualBlock {
  std::string name;
  int offset = 0;
  int length = 0;
};
std::vector<ResidualBlock> residual_layout(Task task, const KinematicModel& model);
int residual_size(Task task, const KinematicModel& model);

}  // namespace mofit
