#pragma once

#include <Eigen/Core>
#include <vector>

#include "mofit/model.hpp"

namespace mofit {

// Forward kinematics with analytic derivatives of every world transform with
// respect to the flat parameter vector. dR[j] holds d vec9(R_j)/d theta
// (row-major R flattening) and dt[j] holds d t_j/d theta.
struct ModelDerivatives {
  ParamLayout layout;
  FkResult fk;
  Eigen::MatrixXd shaped;                       // V x 3 shaped rest vertices
  std::vector<Eigen::MatrixXd> dR;              // J entries, 9 x P
  std::vector<Eigen::MatrixXd> dt;              // J entries, 3 x P
  std::vector<Eigen::Matrix<double, 9, 6>> rot_jac;  // local 6D decode jacobians

  int param_count() const { return layout.size(); }
};

ModelDerivatives fk_derivatives(const KinematicModel& model,
                                const ParamLayout& layout,
                                const Eigen::VectorXd& theta);

// 3 x P jacobian of the world position of joint j.
const Eigen::MatrixXd& joint_position_jacobian(const ModelDerivatives& md, int j);

// 12 x P jacobian of vec12([R_j | t_j]).
Eigen::MatrixXd transform_jacobian(const ModelDerivatives& md, int j);

// 3 x P jacobian of the skinned vertex v.
Eigen::MatrixXd lbs_point_jacobian(const ModelDerivatives& md,
                                   const KinematicModel& model, int v);

// Skinned position of vertex v (same quantity as the lbs_vertices row).
Vec3 lbs_point(const ModelDerivatives& md, const KinematicModel& model, int v);

// Reverse-mode accumulation: maps upstream gradients on model outputs to a
// gradient w.r.t. the flat parameters. Any input may be empty/null.
//   vertex_grad:     V x 3, dLoss/d(skinned vertices)
//   transform_grad:  per joint [3x3 rotation adjoint, 3 translation adjoint]
//   local_rot_grad:  per joint 3x3 adjoint on the parent-relative rotation
struct TransformAdjoint {
  Mat3 R = Mat3::Zero();
  Vec3 t = Vec3::Zero();
};

Eigen::VectorXd model_pullback(const ModelDerivatives& md,
                               const KinematicModel& model,
                               const Eigen::MatrixXd* vertex_grad,
                               const std::vector<TransformAdjoint>* transform_grad,
                               const std::vector<Mat3>* local_rot_grad);

}  // namespace mofit
