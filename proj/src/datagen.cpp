#include "mofit/datagen.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "mofit/container.hpp"
#include "mofit/errors.hpp"
#include "mofit/parallel.hpp"

namespace mofit {

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw BadConfig("unknown split");
}

namespace {

Mat3 random_axis_angle(Rng& rng, double angle) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  const double n = axis.norm();
  axis = n > 1e-12 ? Vec3(axis / n) : Vec3::UnitY();
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

Eigen::VectorXd identity_pose(const ParamLayout& layout) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int j = 0; j < layout.joints; ++j) {
    theta[layout.rot_offset(j) + 0] = 1.0;
    theta[layout.rot_offset(j) + 4] = 1.0;
  }
  if (layout.has_camera()) theta[layout.camera_offset()] = 1.0;
  return theta;
}

}  // namespace

Eigen::VectorXd sample_pose(const KinematicModel& model, const ParamLayout& layout,
                            const PoseRangeConfig& config, Rng& rng) {
  if (config.joint_angle_limit < 0.0 || config.root_xz_range < 0.0 ||
      config.ground_clearance < 0.0)
    throw BadConfig("invalid pose range configuration");

  Eigen::VectorXd theta = identity_pose(layout);
  for (int j = 0; j < layout.joints; ++j) {
    Mat3 R = random_axis_angle(
        rng, rng.uniform(-config.joint_angle_limit, config.joint_angle_limit));
    if (j == 0 && layout.task != Task::Face) {
      const double yaw = rng.uniform(-config.root_yaw_limit, config.root_yaw_limit);
      R = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix() * R;
    }
    theta.segment<6>(layout.rot_offset(j)) = matrix_to_rot6d(R);
  }

  if (layout.shape_dims > 0)
    for (int k = 0; k < layout.shape_dims; ++k)
      theta[layout.shape_offset() + k] = config.shape_std * rng.normal();
  if (layout.expr_dims > 0)
    for (int k = 0; k < layout.expr_dims; ++k)
      theta[layout.expr_offset() + k] = config.expr_std * rng.normal();

  if (layout.task == Task::Face) {
    // Small translation box around the template position.
    theta[layout.translation_offset() + 0] = 0.08 * rng.uniform(-1.0, 1.0);
    theta[layout.translation_offset() + 1] = 0.08 * rng.uniform(-1.0, 1.0);
    theta[layout.translation_offset() + 2] = 0.10 * rng.uniform(-1.0, 1.0);
    return theta;
  }

  theta[layout.translation_offset() + 0] =
      rng.uniform(-config.root_xz_range, config.root_xz_range);
  theta[layout.translation_offset() + 2] =
      rng.uniform(-config.root_xz_range, config.root_xz_range);
  // Drop the body onto the ground plane: the lowest skinned vertex lands in
  // [0, clearance].
  theta[layout.translation_offset() + 1] = 0.0;
  const double min_y = lbs_vertices(model, layout, theta).col(1).minCoeff();
  theta[layout.translation_offset() + 1] =
      -min_y + rng.uniform(0.0, config.ground_clearance);
  return theta;
}

DatasetRecord make_hmd_record(const KinematicModel& model, const Eigen::VectorXd& gt,
                              const RigidTransform& calib, VisibilityMode visibility,
                              double noise_position, double noise_rotation, Rng& rng) {
  const ParamLayout layout = model.layout(Task::Hmd);
  layout.check_vector(gt);
  const FkResult fk = forward_kinematics(model, layout, gt);
  const Eigen::MatrixXd verts = lbs_vertices(model, layout, gt, fk);

  auto noisy_transform = [&](const RigidTransform& T) {
    RigidTransform out;
    out.R = random_axis_angle(rng, noise_rotation * rng.normal()) * T.R;
    out.t = T.t + noise_position * Vec3(rng.normal(), rng.normal(), rng.normal());
    return out;
  };

  DatasetRecord rec;
  rec.gt_params = gt;
  rec.obs.task = Task::Hmd;
  const RigidTransform headset_clean = compose(calib, fk.world[model.head_joint]);
  rec.obs.hmd.headset = noisy_transform(headset_clean);
  rec.obs.hmd.wrist_left = noisy_transform(fk.world[model.wrist_left]);
  rec.obs.hmd.wrist_right = noisy_transform(fk.world[model.wrist_right]);
  rec.obs.hmd.fingertips_left.resize(5, 3);
  rec.obs.hmd.fingertips_right.resize(5, 3);
  for (int i = 0; i < 5; ++i) {
    rec.obs.hmd.fingertips_left.row(i) =
        verts.row(model.fingertip_left[static_cast<std::size_t>(i)]) +
        noise_position * Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
    rec.obs.hmd.fingertips_right.row(i) =
        verts.row(model.fingertip_right[static_cast<std::size_t>(i)]) +
        noise_position * Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
  }
  if (visibility == VisibilityMode::Full) {
    rec.obs.hmd.visible_left = true;
    rec.obs.hmd.visible_right = true;
  } else {
    // Hands are visible iff the wrist lies in front of the (noiseless)
    // headset plane.
    Eigen::MatrixXd wrists(2, 3);
    wrists.row(0) = fk.world[model.wrist_left].t.transpose();
    wrists.row(1) = fk.world[model.wrist_right].t.transpose();
    const auto flags = half_space_visibility(headset_clean, wrists);
    rec.obs.hmd.visible_left = flags[0];
    rec.obs.hmd.visible_right = flags[1];
  }
  return rec;
}

DatasetRecord make_body2d_record(const KinematicModel& model,
                                 const Eigen::VectorXd& gt, double noise_pixels,
                                 double dropout_rate, Rng& rng) {
  const ParamLayout layout = model.layout(Task::Body2D);
  layout.check_vector(gt);
  const FkResult fk = forward_kinematics(model, layout, gt);
  WeakPerspectiveCamera cam;
  cam.scale = gt[layout.camera_offset()];
  cam.translation << gt[layout.camera_offset() + 1], gt[layout.camera_offset() + 2];

  DatasetRecord rec;
  rec.gt_params = gt;
  rec.obs.task = Task::Body2D;
  rec.obs.body2d.keypoints = weak_perspective_project(joint_positions(fk), cam);
  rec.obs.body2d.confidence = Eigen::VectorXd::Ones(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) {
    rec.obs.body2d.keypoints(j, 0) += noise_pixels * rng.normal();
    rec.obs.body2d.keypoints(j, 1) += noise_pixels * rng.normal();
    if (rng.uniform() < dropout_rate) rec.obs.body2d.confidence[j] = 0.0;
  }
  return rec;
}

DatasetRecord make_face_record(const KinematicModel& model, const Eigen::VectorXd& gt,
                               const PerspectiveIntrinsics& K, double noise_pixels,
                               Rng& rng) {
  const ParamLayout layout = model.layout(Task::Face);
  layout.check_vector(gt);

  DatasetRecord rec;
  rec.gt_params = gt;
  rec.obs.task = Task::Face;
  rec.obs.face.intrinsics = K;
  rec.obs.face.landmarks = perspective_project(landmarks(model, layout, gt), K);
  for (Eigen::Index i = 0; i < rec.obs.face.landmarks.rows(); ++i) {
    rec.obs.face.landmarks(i, 0) += noise_pixels * rng.normal();
    rec.obs.face.landmarks(i, 1) += noise_pixels * rng.normal();
  }
  return rec;
}

std::vector<int> Dataset::indices_of(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Dataset generate_dataset(const KinematicModel& model, const DatagenConfig& config,
                         int count, double train_frac, double val_frac,
                         std::uint64_t master_seed, int workers) {
  if (count <= 0 || train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
    throw BadConfig("invalid dataset configuration");
  const ParamLayout layout = model.layout(config.task);

  Dataset out;
  out.task = config.task;
  out.master_seed = master_seed;
  out.records.resize(static_cast<std::size_t>(count));
  const int n_train = static_cast<int>(std::floor(train_frac * count));
  const int n_val = static_cast<int>(std::floor(val_frac * count));

  parallel_for(count, workers, [&](int i) {
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(i));
    Rng rng(seed);
    Eigen::VectorXd gt = sample_pose(model, layout, config.pose, rng);
    DatasetRecord rec;
    switch (config.task) {
      case Task::Hmd:
        rec = make_hmd_record(model, gt, default_hmd_calibration(), config.visibility,
                              config.noise_position, config.noise_rotation, rng);
        break;
      case Task::Body2D:
        gt[layout.camera_offset()] =
            config.body_camera_mean.scale +
            config.body_camera_scale_jitter * rng.uniform(-1.0, 1.0);
        gt[layout.camera_offset() + 1] =
            config.body_camera_mean.translation.x() +
            config.body_camera_shift_jitter * rng.uniform(-1.0, 1.0);
        gt[layout.camera_offset() + 2] =
            config.body_camera_mean.translation.y() +
            config.body_camera_shift_jitter * rng.uniform(-1.0, 1.0);
        rec = make_body2d_record(model, gt, config.noise_2d, config.keypoint_dropout,
                                 rng);
        break;
      case Task::Face:
        rec = make_face_record(model, gt, config.face_intrinsics, config.noise_2d, rng);
        break;
    }
    rec.seed = seed;
    rec.split =
        i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    out.records[static_cast<std::size_t>(i)] = std::move(rec);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dataset IO
// ---------------------------------------------------------------------------

void write_dataset(const Dataset& dataset, const KinematicModel& model,
                   const std::string& path) {
  const int n = static_cast<int>(dataset.records.size());
  if (n == 0) throw BadConfig("refusing to write an empty dataset");
  const ParamLayout layout = model.layout(dataset.task);

  Container c;
  c.put_ints("meta", {1, static_cast<std::int64_t>(dataset.task), n,
                      static_cast<std::int64_t>(dataset.master_seed),
                      static_cast<std::int64_t>(dataset.config_hash),
                      static_cast<std::int64_t>(dataset.model_hash)});
  std::vector<std::int64_t> index(static_cast<std::size_t>(n));
  std::vector<std::int64_t> splits(static_cast<std::size_t>(n));
  std::vector<std::int64_t> seeds(static_cast<std::size_t>(n));
  Eigen::MatrixXd gt(n, layout.size());
  for (int i = 0; i < n; ++i) {
    const DatasetRecord& rec = dataset.records[static_cast<std::size_t>(i)];
    index[static_cast<std::size_t>(i)] = i;
    splits[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(rec.split);
    seeds[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(rec.seed);
    gt.row(i) = rec.gt_params.transpose();
  }
  c.put_ints("index", index);
  c.put_ints("split", splits);
  c.put_ints("seed", seeds);
  c.put_matrix("gt", gt);

  switch (dataset.task) {
    case Task::Hmd: {
      Eigen::MatrixXd obs(n, 68);
      for (int i = 0; i < n; ++i) {
        const HmdObservations& h = dataset.records[static_cast<std::size_t>(i)].obs.hmd;
        obs.block<1, 12>(i, 0) = flatten_transform(h.headset).transpose();
        obs.block<1, 12>(i, 12) = flatten_transform(h.wrist_left).transpose();
        obs.block<1, 12>(i, 24) = flatten_transform(h.wrist_right).transpose();
        for (int k = 0; k < 5; ++k) {
          obs.block<1, 3>(i, 36 + 3 * k) = h.fingertips_left.row(k);
          obs.block<1, 3>(i, 51 + 3 * k) = h.fingertips_right.row(k);
        }
        obs(i, 66) = h.visible_left ? 1.0 : 0.0;
        obs(i, 67) = h.visible_right ? 1.0 : 0.0;
      }
      c.put_matrix("obs_hmd", obs);
      break;
    }
    case Task::Body2D: {
      Eigen::MatrixXd kp(n, 2 * model.num_joints());
      Eigen::MatrixXd conf(n, model.num_joints());
      for (int i = 0; i < n; ++i) {
        const Body2DObservations& b =
            dataset.records[static_cast<std::size_t>(i)].obs.body2d;
        for (int j = 0; j < model.num_joints(); ++j) {
          kp(i, 2 * j) = b.keypoints(j, 0);
          kp(i, 2 * j + 1) = b.keypoints(j, 1);
          conf(i, j) = b.confidence[j];
        }
      }
      c.put_matrix("obs_keypoints", kp);
      c.put_matrix("obs_confidence", conf);
      break;
    }
    case Task::Face: {
      const int P = static_cast<int>(model.landmark_indices.size());
      Eigen::MatrixXd lm(n, 2 * P);
      Eigen::MatrixXd K(n, 4);
      for (int i = 0; i < n; ++i) {
        const FaceObservations& f = dataset.records[static_cast<std::size_t>(i)].obs.face;
        for (int p = 0; p < P; ++p) {
          lm(i, 2 * p) = f.landmarks(p, 0);
          lm(i, 2 * p + 1) = f.landmarks(p, 1);
        }
        K.row(i) << f.intrinsics.fx, f.intrinsics.fy, f.intrinsics.cx, f.intrinsics.cy;
      }
      c.put_matrix("obs_landmarks", lm);
      c.put_matrix("obs_intrinsics", K);
      break;
    }
  }
  c.save(path);
}

Dataset read_dataset(const std::string& path, const KinematicModel& model) {
  const Container c = Container::load(path);
  const auto meta = c.get_ints("meta");
  if (meta.size() != 6 || meta[0] != 1) throw FormatError("unsupported dataset record");

  Dataset out;
  out.task = static_cast<Task>(meta[1]);
  const int n = static_cast<int>(meta[2]);
  out.master_seed = static_cast<std::uint64_t>(meta[3]);
  out.config_hash = static_cast<std::uint64_t>(meta[4]);
  out.model_hash = static_cast<std::uint64_t>(meta[5]);

  const auto index = c.get_ints("index");
  const auto splits = c.get_ints("split");
  const auto seeds = c.get_ints("seed");
  const Eigen::MatrixXd gt = c.get_matrix("gt");
  if (static_cast<int>(index.size()) != n || gt.rows() != n)
    throw FormatError("dataset index/record count mismatch");

  out.records.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    DatasetRecord& rec = out.records[static_cast<std::size_t>(i)];
    rec.gt_params = gt.row(i).transpose();
    rec.split = static_cast<Split>(splits[static_cast<std::size_t>(i)]);
    rec.seed = static_cast<std::uint64_t>(seeds[static_cast<std::size_t>(i)]);
    rec.obs.task = out.task;
  }

  switch (out.task) {
    case Task::Hmd: {
      const Eigen::MatrixXd obs = c.get_matrix("obs_hmd");
      for (int i = 0; i < n; ++i) {
        HmdObservations& h = out.records[static_cast<std::size_t>(i)].obs.hmd;
        h.headset = unflatten_transform(obs.block<1, 12>(i, 0).transpose());
        h.wrist_left = unflatten_transform(obs.block<1, 12>(i, 12).transpose());
        h.wrist_right = unflatten_transform(obs.block<1, 12>(i, 24).transpose());
        h.fingertips_left.resize(5, 3);
        h.fingertips_right.resize(5, 3);
        for (int k = 0; k < 5; ++k) {
          h.fingertips_left.row(k) = obs.block<1, 3>(i, 36 + 3 * k);
          h.fingertips_right.row(k) = obs.block<1, 3>(i, 51 + 3 * k);
        }
        h.visible_left = obs(i, 66) != 0.0;
        h.visible_right = obs(i, 67) != 0.0;
      }
      break;
    }
    case Task::Body2D: {
      const Eigen::MatrixXd kp = c.get_matrix("obs_keypoints");
      const Eigen::MatrixXd conf = c.get_matrix("obs_confidence");
      for (int i = 0; i < n; ++i) {
        Body2DObservations& b = out.records[static_cast<std::size_t>(i)].obs.body2d;
        b.keypoints.resize(model.num_joints(), 2);
        b.confidence.resize(model.num_joints());
        for (int j = 0; j < model.num_joints(); ++j) {
          b.keypoints(j, 0) = kp(i, 2 * j);
          b.keypoints(j, 1) = kp(i, 2 * j + 1);
          b.confidence[j] = conf(i, j);
        }
      }
      break;
    }
    case Task::Face: {
      const Eigen::MatrixXd lm = c.get_matrix("obs_landmarks");
      const Eigen::MatrixXd K = c.get_matrix("obs_intrinsics");
      const int P = static_cast<int>(lm.cols() / 2);
      for (int i = 0; i < n; ++i) {
        FaceObservations& f = out.records[static_cast<std::size_t>(i)].obs.face;
        f.landmarks.resize(P, 2);
        for (int p = 0; p < P; ++p) {
          f.landmarks(p, 0) = lm(i, 2 * p);
          f.landmarks(p, 1) = lm(i, 2 * p + 1);
        }
        f.intrinsics.fx = K(i, 0);
        f.intrinsics.fy = K(i, 1);
        f.intrinsics.cx = K(i, 2);
        f.intrinsics.cy = K(i, 3);
      }
      break;
    }
  }
  return out;
}

}  // namespace mofit
