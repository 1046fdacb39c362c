#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "mofit/geometry.hpp"

namespace mofit {

enum class Task { Body2D, Hmd, Face };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// Flat parameter layout for one task:
//   body2d: [J x 6 rotations, root translation (3), shape, cam scale, cam t (2)]
//   hmd:    [J x 6 rotations, root translation (3)]
//   face:   [J x 6 rotations, global translation (3), expression, shape]
struct ParamLayout {
  Task task = Task::Hmd;
  int joints = 0;
  int shape_dims = 0;  // entries present in the parameter vector
  int expr_dims = 0;

  int size() const;
  int rot_offset(int joint) const { return 6 * joint; }
  int translation_offset() const { return 6 * joints; }
  int expr_offset() const;   // face only
  int shape_offset() const;  // body2d / face
  int camera_offset() const; // body2d only: [scale, tx, ty]
  bool has_camera() const { return task == Task::Body2D; }

  void check_vector(const Eigen::VectorXd& theta) const;
};

struct KinematicModel {
  Eigen::MatrixXd template_vertices;  // V x 3, meters
  std::vector<int> parents;           // size J, parents[0] == -1, parents[j] < j
  Eigen::MatrixXd rest_joint_mean;    // J x 3
  Eigen::MatrixXd rest_joint_basis;   // (J*3) x n_shape, row j*3+coord
  Eigen::MatrixXd skinning;           // V x J, rows sum to 1
  Eigen::MatrixXd shape_basis;        // (V*3) x n_shape
  Eigen::MatrixXd expression_basis;   // (V*3) x n_expr (empty for body)
  Eigen::MatrixXi edges;              // E x 2 vertex index pairs
  std::vector<int> landmark_indices;
  std::vector<int> fingertip_left;    // 5 vertex indices (body)
  std::vector<int> fingertip_right;   // 5 vertex indices (body)
  int head_joint = -1;
  int wrist_left = -1;
  int wrist_right = -1;
  std::vector<int> part_head;         // vertex subsets for part metrics
  std::vector<int> part_left_hand;
  std::vector<int> part_right_hand;
  std::uint64_t config_hash = 0;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int num_shape_dims() const { return static_cast<int>(shape_basis.cols()); }
  int num_expr_dims() const { return static_cast<int>(expression_basis.cols()); }

  // Throws ShapeMismatch/DegenerateInput when a structural invariant fails.
  void validate() const;

  ParamLayout layout(Task task) const;
};

// Rest joints as an affine function of shape: mean + basis * beta.
Eigen::MatrixXd rest_joints(const KinematicModel& model,
                            const Eigen::VectorXd& beta);

struct FkResult {
  std::vector<RigidTransform> world;   // J world transforms
  std::vector<Mat3> local_rotations;   // decoded parent-relative rotations
  Eigen::MatrixXd rest;                // J x 3 rest joints used
};

// World transform per joint: T_j = T_parent * [R(theta_j) | J_j - J_parent],
// with the root transform additionally translated by the global translation.
FkResult forward_kinematics(const KinematicModel& model,
                            const ParamLayout& layout,
                            const Eigen::VectorXd& theta);

// Shaped/expressed rest vertices: template + shape_basis*beta + expr_basis*psi.
Eigen::MatrixXd shaped_vertices(const KinematicModel& model,
                                const ParamLayout& layout,
                                const Eigen::VectorXd& theta);

// Linear blend skinning of the shaped rest vertices by the FK transforms.
Eigen::MatrixXd lbs_vertices(const KinematicModel& model,
                             const ParamLayout& layout,
                             const Eigen::VectorXd& theta);
Eigen::MatrixXd lbs_vertices(const KinematicModel& model,
                             const ParamLayout& layout,
                             const Eigen::VectorXd& theta,
                             const FkResult& fk);

// Rows of lbs_vertices at landmark_indices.
Eigen::MatrixXd landmarks(const KinematicModel& model,
                          const ParamLayout& layout,
                          const Eigen::VectorXd& theta);

// World joint positions (translation parts of the FK transforms), J x 3.
Eigen::MatrixXd joint_positions(const FkResult& fk);

enum class SynthTree { Chain, Body, Face };

struct SynthModelConfig {
  SynthTree tree = SynthTree::Body;
  int joints = 16;      // chain tree only; body/face fix their own joint count
  int vertices = 800;
  int shape_dims = 8;
  int expr_dims = 0;    // face default 16
  int landmarks = 0;    // face default 64
  double limb_radius = 0.05;
  int skinning_support = 4;  // nearest bones kept per vertex
};

SynthModelConfig default_body_config();
SynthModelConfig default_face_config();

// Deterministic capsule-limb model generator (same config+seed => identical).
KinematicModel synth_model(const SynthModelConfig& config, std::uint64_t seed);

void save_model(const KinematicModel& model, const std::string& path);
KinematicModel load_model(const std::string& path);

}  // namespace mofit
