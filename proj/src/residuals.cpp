#include "mofit/residuals.hpp"

#include <cmath>

#include "mofit/errors.hpp"

namespace mofit {

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ShapeMismatch(std::string("non-finite values in ") + what);
}

void finish_packet(ResidualPacket& packet) {
  if (packet.has_jacobian())
    packet.gradient = 2.0 * packet.jacobian.transpose() *
                      (packet.mask.array() * packet.r.array()).matrix();
}

// Rows of d vec12(calib * T_j) / d theta given the FK derivative state.
void composed_transform_jacobian(const ModelDerivatives& md, int joint,
                                 const RigidTransform& calib,
                                 Eigen::Ref<Eigen::MatrixXd> out12) {
  out12.setZero();
  const Eigen::MatrixXd& dR = md.dR[static_cast<std::size_t>(joint)];
  const Eigen::MatrixXd& dt = md.dt[static_cast<std::size_t>(joint)];
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 3; ++c)
        out12.row(4 * r + c) += calib.R(r, k) * dR.row(3 * k + c);
      out12.row(4 * r + 3) += calib.R(r, k) * dt.row(k);
    }
}

}  // namespace

RigidTransform default_hmd_calibration() {
  RigidTransform calib;
  calib.t = Vec3(0.0, 0.0, -0.10);
  return calib;
}

void ObservationSet::validate(const KinematicModel& model) const {
  switch (task) {
    case Task::Body2D: {
      if (body2d.keypoints.rows() != model.num_joints() || body2d.keypoints.cols() != 2)
        throw ShapeMismatch("body2d keypoints must be J x 2");
      if (body2d.confidence.size() != model.num_joints())
        throw ShapeMismatch("body2d confidence must have J entries");
      require_finite(body2d.keypoints, "keypoints");
      if (body2d.confidence.minCoeff() < 0.0 || body2d.confidence.maxCoeff() > 1.0)
        throw ShapeMismatch("confidences must lie in [0, 1]");
      break;
    }
    case Task::Hmd: {
      if (hmd.fingertips_left.rows() != 5 || hmd.fingertips_left.cols() != 3 ||
          hmd.fingertips_right.rows() != 5 || hmd.fingertips_right.cols() != 3)
        throw ShapeMismatch("fingertip observations must be 5 x 3");
      require_finite(hmd.fingertips_left, "fingertips");
      require_finite(hmd.fingertips_right, "fingertips");
      if (model.head_joint < 0 || model.wrist_left < 0 || model.wrist_right < 0)
        throw ShapeMismatch("model lacks head/wrist joints required for HMD");
      if (model.fingertip_left.size() != 5 || model.fingertip_right.size() != 5)
        throw ShapeMismatch("model lacks fingertip vertices required for HMD");
      break;
    }
    case Task::Face: {
      if (face.landmarks.rows() !=
              static_cast<Eigen::Index>(model.landmark_indices.size()) ||
          face.landmarks.cols() != 2)
        throw ShapeMismatch("face landmarks must be P x 2");
      require_finite(face.landmarks, "landmarks");
      break;
    }
  }
}

int residual_size(Task task, const KinematicModel& model) {
  switch (task) {
    case Task::Body2D: return 2 * model.num_joints();
    case Task::Hmd: return 12 + 12 + 12 + 15 + 15;
    case Task::Face: return 2 * static_cast<int>(model.landmark_indices.size());
  }
  throw BadConfig("unknown task");
}

std::vector<ResidualBlock> residual_layout(Task task, const KinematicModel& model) {
  std::vector<ResidualBlock> blocks;
  switch (task) {
    case Task::Body2D:
      for (int j = 0; j < model.num_joints(); ++j)
        blocks.push_back({"keypoint_" + std::to_string(j) + "_xy", 2 * j, 2});
      break;
    case Task::Hmd:
      blocks.push_back({"headset_transform", 0, 12});
      blocks.push_back({"left_wrist_transform", 12, 12});
      blocks.push_back({"right_wrist_transform", 24, 12});
      blocks.push_back({"left_fingertips", 36, 15});
      blocks.push_back({"right_fingertips", 51, 15});
      break;
    case Task::Face:
      for (std::size_t i = 0; i < model.landmark_indices.size(); ++i)
        blocks.push_back(
            {"landmark_" + std::to_string(i) + "_xy", static_cast<int>(2 * i), 2});
      break;
  }
  return blocks;
}

ResidualPacket body2d_residuals(const KinematicModel& model,
                                const Eigen::VectorXd& theta,
                                const Body2DObservations& obs,
                                bool with_jacobian) {
  const ParamLayout layout = model.layout(Task::Body2D);
  layout.check_vector(theta);
  const int J = model.num_joints();
  if (obs.keypoints.rows() != J || obs.confidence.size() != J)
    throw ShapeMismatch("body2d observation size mismatch");

  const double scale = theta[layout.camera_offset()];
  const Vec2 cam_t(theta[layout.camera_offset() + 1],
                   theta[layout.camera_offset() + 2]);

  ResidualPacket packet;
  packet.r.setZero(2 * J);
  packet.mask.setZero(2 * J);

  if (!with_jacobian) {
    const auto fk = forward_kinematics(model, layout, theta);
    const Eigen::MatrixXd joints = joint_positions(fk);
    for (int j = 0; j < J; ++j) {
      const double conf = obs.confidence[j];
      if (conf <= 0.0) continue;
      packet.mask[2 * j] = packet.mask[2 * j + 1] = 1.0;
      packet.r[2 * j] =
          conf * (obs.keypoints(j, 0) - (scale * joints(j, 0) + cam_t.x()));
      packet.r[2 * j + 1] =
          conf * (obs.keypoints(j, 1) - (scale * joints(j, 1) + cam_t.y()));
    }
    return packet;
  }

  const auto md = fk_derivatives(model, layout, theta);
  packet.jacobian.setZero(2 * J, layout.size());
  for (int j = 0; j < J; ++j) {
    const double conf = obs.confidence[j];
    if (conf <= 0.0) continue;
    packet.mask[2 * j] = packet.mask[2 * j + 1] = 1.0;
    const Vec3 p = md.fk.world[j].t;
    packet.r[2 * j] = conf * (obs.keypoints(j, 0) - (scale * p.x() + cam_t.x()));
    packet.r[2 * j + 1] = conf * (obs.keypoints(j, 1) - (scale * p.y() + cam_t.y()));

    const Eigen::MatrixXd& dp = joint_position_jacobian(md, j);
    packet.jacobian.row(2 * j) = -conf * scale * dp.row(0);
    packet.jacobian.row(2 * j + 1) = -conf * scale * dp.row(1);
    packet.jacobian(2 * j, layout.camera_offset()) = -conf * p.x();
    packet.jacobian(2 * j + 1, layout.camera_offset()) = -conf * p.y();
    packet.jacobian(2 * j, layout.camera_offset() + 1) = -conf;
    packet.jacobian(2 * j + 1, layout.camera_offset() + 2) = -conf;
  }
  finish_packet(packet);
  return packet;
}

ResidualPacket hmd_residuals(const KinematicModel& model,
                             const Eigen::VectorXd& theta,
                             const HmdObservations& obs,
                             const RigidTransform& calib,
                             bool with_jacobian) {
  const ParamLayout layout = model.layout(Task::Hmd);
  layout.check_vector(theta);
  if (model.head_joint < 0 || model.wrist_left < 0 || model.wrist_right < 0 ||
      model.fingertip_left.size() != 5 || model.fingertip_right.size() != 5)
    throw ShapeMismatch("model lacks the joints/vertices required for the HMD task");

  const int n = residual_size(Task::Hmd, model);
  ResidualPacket packet;
  packet.r.setZero(n);
  packet.mask.setZero(n);
  const double vis_left = obs.visible_left ? 1.0 : 0.0;
  const double vis_right = obs.visible_right ? 1.0 : 0.0;

  ModelDerivatives md;
  FkResult fk_plain;
  if (with_jacobian) {
    md = fk_derivatives(model, layout, theta);
    packet.jacobian.setZero(n, layout.size());
  } else {
    fk_plain = forward_kinematics(model, layout, theta);
  }
  const FkResult& fk = with_jacobian ? md.fk : fk_plain;
  const Eigen::MatrixXd shaped =
      with_jacobian ? md.shaped : shaped_vertices(model, layout, theta);

  auto transform_block = [&](int offset, const RigidTransform& target,
                             const RigidTransform& estimate, double vis) {
    const Vec12 diff = flatten_transform(target) - flatten_transform(estimate);
    for (int k = 0; k < 12; ++k) {
      packet.mask[offset + k] = vis;
      packet.r[offset + k] = vis * diff[k];
    }
  };

  const RigidTransform headset_estimate = compose(calib, fk.world[model.head_joint]);
  transform_block(0, obs.headset, headset_estimate, 1.0);
  transform_block(12, obs.wrist_left, fk.world[model.wrist_left], vis_left);
  transform_block(24, obs.wrist_right, fk.world[model.wrist_right], vis_right);

  auto skin_point = [&](int v) {
    Vec3 acc = Vec3::Zero();
    const Vec3 x = shaped.row(v).transpose();
    for (int j = 0; j < model.num_joints(); ++j) {
      const double w = model.skinning(v, j);
      if (w == 0.0) continue;
      acc += w * (fk.world[j].R * (x - Vec3(fk.rest.row(j).transpose())) +
                  fk.world[j].t);
    }
    return acc;
  };
  for (int side = 0; side < 2; ++side) {
    const auto& verts = side == 0 ? model.fingertip_left : model.fingertip_right;
    const auto& targets = side == 0 ? obs.fingertips_left : obs.fingertips_right;
    const double vis = side == 0 ? vis_left : vis_right;
    const int offset = side == 0 ? 36 : 51;
    for (int i = 0; i < 5; ++i) {
      const Vec3 p = skin_point(verts[static_cast<std::size_t>(i)]);
      for (int c = 0; c < 3; ++c) {
        packet.mask[offset + 3 * i + c] = vis;
        packet.r[offset + 3 * i + c] = vis * (targets(i, c) - p[c]);
      }
    }
  }

  if (with_jacobian) {
    Eigen::MatrixXd block12(12, layout.size());
    composed_transform_jacobian(md, model.head_joint, calib, block12);
    packet.jacobian.middleRows(0, 12) = -block12;
    if (obs.visible_left)
      packet.jacobian.middleRows(12, 12) = -transform_jacobian(md, model.wrist_left);
    if (obs.visible_right)
      packet.jacobian.middleRows(24, 12) = -transform_jacobian(md, model.wrist_right);
    for (int side = 0; side < 2; ++side) {
      const auto& verts = side == 0 ? model.fingertip_left : model.fingertip_right;
      const bool vis = side == 0 ? obs.visible_left : obs.visible_right;
      if (!vis) continue;
      const int offset = side == 0 ? 36 : 51;
      for (int i = 0; i < 5; ++i)
        packet.jacobian.middleRows(offset + 3 * i, 3) =
            -lbs_point_jacobian(md, model, verts[static_cast<std::size_t>(i)]);
    }
    finish_packet(packet);
  }
  return packet;
}

ResidualPacket face_residuals(const KinematicModel& model,
                              const Eigen::VectorXd& theta,
                              const FaceObservations& obs,
                              bool with_jacobian) {
  const ParamLayout layout = model.layout(Task::Face);
  layout.check_vector(theta);
  const int P = static_cast<int>(model.landmark_indices.size());
  if (obs.landmarks.rows() != P) throw ShapeMismatch("face landmark count mismatch");

  ResidualPacket packet;
  packet.r.setZero(2 * P);
  packet.mask.setOnes(2 * P);

  const PerspectiveIntrinsics& K = obs.intrinsics;

  if (!with_jacobian) {
    const Eigen::MatrixXd pts = landmarks(model, layout, theta);
    const Eigen::MatrixXd projected = perspective_project(pts, K);
    for (int i = 0; i < P; ++i) {
      packet.r[2 * i] = obs.landmarks(i, 0) - projected(i, 0);
      packet.r[2 * i + 1] = obs.landmarks(i, 1) - projected(i, 1);
    }
    return packet;
  }

  const auto md = fk_derivatives(model, layout, theta);
  packet.jacobian.setZero(2 * P, layout.size());
  for (int i = 0; i < P; ++i) {
    const int v = model.landmark_indices[static_cast<std::size_t>(i)];
    const Vec3 p = lbs_point(md, model, v);
    if (p.z() <= 1e-6) throw BehindCamera("landmark behind camera");
    packet.r[2 * i] = obs.landmarks(i, 0) - (K.fx * p.x() / p.z() + K.cx);
    packet.r[2 * i + 1] = obs.landmarks(i, 1) - (K.fy * p.y() / p.z() + K.cy);

    const Eigen::MatrixXd dp = lbs_point_jacobian(md, model, v);
    packet.jacobian.row(2 * i) =
        -(K.fx / p.z() * dp.row(0) - K.fx * p.x() / (p.z() * p.z()) * dp.row(2));
    packet.jacobian.row(2 * i + 1) =
        -(K.fy / p.z() * dp.row(1) - K.fy * p.y() / (p.z() * p.z()) * dp.row(2));
  }
  finish_packet(packet);
  return packet;
}

ResidualPacket task_residuals(const KinematicModel& model,
                              const Eigen::VectorXd& theta,
                              const ObservationSet& obs, bool with_jacobian,
                              const RigidTransform& calib) {
  switch (obs.task) {
    case Task::Body2D:
      return body2d_residuals(model, theta, obs.body2d, with_jacobian);
    case Task::Hmd:
      return hmd_residuals(model, theta, obs.hmd, calib, with_jacobian);
    case Task::Face:
      return face_residuals(model, theta, obs.face, with_jacobian);
  }
  throw BadConfig("unknown task");
}

std::vector<bool> half_space_visibility(const RigidTransform& headset,
                                        const Eigen::MatrixXd& points) {
  if (points.cols() != 3) throw ShapeMismatch("expected n x 3 points");
  const RigidTransform inv = headset.inverse();
  std::vector<bool> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        (inv.R * Vec3(points.row(i).transpose()) + inv.t).z() < 0.0;
  return out;
}

}  // namespace mofit
