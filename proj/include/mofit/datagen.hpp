#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "mofit/residuals.hpp"
#include "mofit/rng.hpp"

namespace mofit {

enum class Split { Train, Val, Test };
std::string split_name(Split s);

enum class VisibilityMode { Full, Half };

struct DatasetRecord {
  Eigen::VectorXd gt_params;
  ObservationSet obs;
  Split split = Split::Train;
  std::uint64_t seed = 0;  // the derived per-record seed
};

struct PoseRangeConfig {
  double joint_angle_limit = 0.4;  // radians about the rest rotation
  double root_yaw_limit = M_PI;
  double root_xz_range = 0.5;      // meters, uniform box
  double ground_clearance = 0.02;  // lowest vertex lands in [0, clearance]
  double shape_std = 0.5;          // body2d/face shape coefficients
  double expr_std = 0.7;           // face expression coefficients
};

// Per-joint axis-angle pose about rest, root yaw + translation in a box; the
// body is then dropped so its lowest vertex sits just above the ground plane.
Eigen::VectorXd sample_pose(const KinematicModel& model, const ParamLayout& layout,
                            const PoseRangeConfig& config, Rng& rng);

struct DatagenConfig {
  Task task = Task::Hmd;
  VisibilityMode visibility = VisibilityMode::Half;
  double noise_2d = 1.0;          // pixels
  double noise_position = 0.005;  // meters (HMD)
  double noise_rotation = 0.01;   // radians (HMD)
  double keypoint_dropout = 0.05; // body2d confidence dropout rate
  PoseRangeConfig pose;
  PerspectiveIntrinsics face_intrinsics;  // defaults: (512, 512), (256, 256)
  WeakPerspectiveCamera body_camera_mean{200.0, {256.0, 256.0}};
  double body_camera_scale_jitter = 30.0;
  double body_camera_shift_jitter = 20.0;
};

DatasetRecord make_hmd_record(const KinematicModel& model, const Eigen::VectorXd& gt,
                              const RigidTransform& calib, VisibilityMode visibility,
                              double noise_position, double noise_rotation, Rng& rng);

DatasetRecord make_body2d_record(const KinematicModel& model,
                                 const Eigen::VectorXd& gt, double noise_pixels,
                                 double dropout_rate, Rng& rng);

DatasetRecord make_face_record(const KinematicModel& model, const Eigen::VectorXd& gt,
                               const PerspectiveIntrinsics& K, double noise_pixels,
                               Rng& rng);

// Deterministic dataset: record i derives its seed from (master_seed, i), so
// generation parallelizes without changing the result. Split tags follow the
// supplied fractions in index order.
struct Dataset {
  Task task = Task::Hmd;
  std::vector<DatasetRecord> records;
  std::uint64_t master_seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t model_hash = 0;  // config hash of the generating model

  std::vector<int> indices_of(Split split) const;
};

Dataset generate_dataset(const KinematicModel& model, const DatagenConfig& config,
                         int count, double train_frac, double val_frac,
                         std::uint64_t master_seed, int workers = 1);

void write_dataset(const Dataset& dataset, const KinematicModel& model,
                   const std::string& path);
Dataset read_dataset(const std::string& path, const KinematicModel& model);

}  // namespace mofit
