#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mofit/datagen.hpp"
#include "mofit/errors.hpp"
#include "test_support.hpp"

using namespace mofit;
using namespace mofit::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("sample_pose respects its configuration") {
  const KinematicModel model = synth_model(default_body_config(), 1);
  const ParamLayout layout = model.layout(Task::Hmd);

  SUBCASE("zero ranges give the rest pose") {
    PoseRangeConfig cfg;
    cfg.joint_angle_limit = 0.0;
    cfg.root_yaw_limit = 0.0;
    cfg.root_xz_range = 0.0;
    cfg.ground_clearance = 0.0;
    Rng rng(2);
    const Eigen::VectorXd theta = sample_pose(model, layout, cfg, rng);
    for (int j = 0; j < layout.joints; ++j) {
      const Mat3 R = rot6d_to_matrix(theta.segment<6>(layout.rot_offset(j)));
      CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(theta[layout.translation_offset() + 0] == 0.0);
    CHECK(theta[layout.translation_offset() + 2] == 0.0);
  }

  SUBCASE("fixed seed reproduces the pose") {
    PoseRangeConfig cfg;
    Rng a(3), b(3);
    CHECK((sample_pose(model, layout, cfg, a) - sample_pose(model, layout, cfg, b))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  SUBCASE("decoded joint angles stay within the limit") {
    PoseRangeConfig cfg;
    cfg.joint_angle_limit = 0.3;
    Rng rng(4);
    for (int trial = 0; trial < 10000; ++trial) {
      const Eigen::VectorXd theta = sample_pose(model, layout, cfg, rng);
      // Joints other than the root (which adds yaw) respect the limit.
      for (int j = 1; j < layout.joints; ++j) {
        const Mat3 R = rot6d_to_matrix(theta.segment<6>(layout.rot_offset(j)));
        const double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
        CHECK(std::acos(c) <= 0.3 + 1e-9);
      }
    }
  }

  SUBCASE("feet land near the ground plane") {
    PoseRangeConfig cfg;
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd theta = sample_pose(model, layout, cfg, rng);
      const double min_y = lbs_vertices(model, layout, theta).col(1).minCoeff();
      CHECK(min_y >= -1e-9);
      CHECK(min_y <= cfg.ground_clearance + 1e-9);
    }
  }
}

TEST_CASE("noiseless records have zero residuals at the ground truth") {
  const KinematicModel body = synth_model(default_body_config(), 6);
  const KinematicModel face = synth_model(default_face_config(), 7);
  Rng rng(8);
  PoseRangeConfig pose_cfg;

  SUBCASE("hmd") {
    const ParamLayout layout = body.layout(Task::Hmd);
    const Eigen::VectorXd gt = sample_pose(body, layout, pose_cfg, rng);
    const RigidTransform calib = default_hmd_calibration();
    const DatasetRecord rec =
        make_hmd_record(body, gt, calib, VisibilityMode::Full, 0.0, 0.0, rng);
    CHECK(hmd_residuals(body, gt, rec.obs.hmd, calib, false).data_term() < 1e-18);
  }

  SUBCASE("body2d") {
    const ParamLayout layout = body.layout(Task::Body2D);
    Eigen::VectorXd gt = sample_pose(body, layout, pose_cfg, rng);
    gt[layout.camera_offset()] = 200.0;
    gt[layout.camera_offset() + 1] = 256.0;
    gt[layout.camera_offset() + 2] = 256.0;
    const DatasetRecord rec = make_body2d_record(body, gt, 0.0, 0.0, rng);
    CHECK(body2d_residuals(body, gt, rec.obs.body2d, false).data_term() < 1e-18);
  }

  SUBCASE("face with the default camera") {
    const ParamLayout layout = face.layout(Task::Face);
    const Eigen::VectorXd gt = sample_pose(face, layout, pose_cfg, rng);
    PerspectiveIntrinsics K;  // (512, 512) focal, (256, 256) principal point
    const DatasetRecord rec = make_face_record(face, gt, K, 0.0, rng);
    CHECK(face_residuals(face, gt, rec.obs.face, false).data_term() < 1e-14);

    Eigen::MatrixXd probe(1, 3);
    probe << 0, 0, 1;
    const Eigen::MatrixXd px = perspective_project(probe, K);
    CHECK(px(0, 0) == doctest::Approx(256.0));
    CHECK(px(0, 1) == doctest::Approx(256.0));
  }
}

TEST_CASE("visibility modes") {
  const KinematicModel body = synth_model(default_body_config(), 9);
  const ParamLayout layout = body.layout(Task::Hmd);
  const RigidTransform calib = default_hmd_calibration();
  Rng rng(10);

  SUBCASE("full mode always sees the hands") {
    PoseRangeConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd gt = sample_pose(body, layout, cfg, rng);
      const DatasetRecord rec =
          make_hmd_record(body, gt, calib, VisibilityMode::Full, 0.0, 0.0, rng);
      CHECK(rec.obs.hmd.visible_left);
      CHECK(rec.obs.hmd.visible_right);
    }
  }

  SUBCASE("hands behind the headset plane are invisible in half mode") {
    // Construct a pose with the head pitched far forward so the wrists fall
    // behind the headset plane, then verify against the visibility oracle.
    Eigen::VectorXd gt = Eigen::VectorXd::Zero(layout.size());
    for (int j = 0; j < layout.joints; ++j) {
      gt[layout.rot_offset(j) + 0] = 1.0;
      gt[layout.rot_offset(j) + 4] = 1.0;
    }
    // Turn the neck half around: the headset then looks at +z while the
    // wrists stay on the -z side, i.e. behind the headset plane.
    const Mat3 turn = Eigen::AngleAxisd(M_PI, Vec3::UnitY()).toRotationMatrix();
    gt.segment<6>(layout.rot_offset(2)) = matrix_to_rot6d(turn);
    gt[layout.translation_offset() + 1] = 0.0;

    const DatasetRecord rec =
        make_hmd_record(body, gt, calib, VisibilityMode::Half, 0.0, 0.0, rng);
    const auto fk = forward_kinematics(body, layout, gt);
    Eigen::MatrixXd wrists(2, 3);
    wrists.row(0) = fk.world[body.wrist_left].t.transpose();
    wrists.row(1) = fk.world[body.wrist_right].t.transpose();
    const auto oracle =
        half_space_visibility(compose(calib, fk.world[body.head_joint]), wrists);
    CHECK(rec.obs.hmd.visible_left == oracle[0]);
    CHECK(rec.obs.hmd.visible_right == oracle[1]);
    CHECK_FALSE(oracle[0]);
    CHECK_FALSE(oracle[1]);
  }
}

TEST_CASE("keypoint noise and dropout statistics") {
  const KinematicModel body = synth_model(default_body_config(), 11);
  const ParamLayout layout = body.layout(Task::Body2D);
  Rng rng(12);
  PoseRangeConfig pose_cfg;
  Eigen::VectorXd gt = sample_pose(body, layout, pose_cfg, rng);
  gt[layout.camera_offset()] = 200.0;
  gt[layout.camera_offset() + 1] = 256.0;
  gt[layout.camera_offset() + 2] = 256.0;

  const auto fk = forward_kinematics(body, layout, gt);
  WeakPerspectiveCamera cam{200.0, {256.0, 256.0}};
  const Eigen::MatrixXd clean = weak_perspective_project(joint_positions(fk), cam);

  const double sigma = 1.5;
  double sq = 0.0;
  long count = 0;
  long dropped = 0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    const DatasetRecord rec = make_body2d_record(body, gt, sigma, 0.25, rng);
    for (int j = 0; j < body.num_joints(); ++j) {
      sq += (rec.obs.body2d.keypoints.row(j) - clean.row(j)).squaredNorm();
      count += 2;
      if (rec.obs.body2d.confidence[j] == 0.0) ++dropped;
    }
  }
  CHECK(std::sqrt(sq / count) == doctest::Approx(sigma).epsilon(0.05));
  CHECK(static_cast<double>(dropped) / (trials * body.num_joints()) ==
        doctest::Approx(0.25).epsilon(0.05));

  SUBCASE("dropout rate one zeroes every confidence") {
    const DatasetRecord rec = make_body2d_record(body, gt, 0.0, 1.0, rng);
    CHECK(rec.obs.body2d.confidence.maxCoeff() == 0.0);
  }
}

TEST_CASE("dataset generation is deterministic and splits correctly") {
  const KinematicModel body = synth_model(default_body_config(), 13);
  DatagenConfig cfg;
  cfg.task = Task::Hmd;

  const Dataset a = generate_dataset(body, cfg, 50, 0.8, 0.1, 42, 1);
  const Dataset b = generate_dataset(body, cfg, 50, 0.8, 0.1, 42, 4);
  REQUIRE(a.records.size() == 50);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK((a.records[i].gt_params - b.records[i].gt_params).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(se3_distance(a.records[i].obs.hmd.headset, b.records[i].obs.hmd.headset) ==
          0.0);
  }
  CHECK(a.indices_of(Split::Train).size() == 40);
  CHECK(a.indices_of(Split::Val).size() == 5);
  CHECK(a.indices_of(Split::Test).size() == 5);

  CHECK_THROWS_AS(generate_dataset(body, cfg, 0, 0.8, 0.1, 1), BadConfig);
  CHECK_THROWS_AS(generate_dataset(body, cfg, 10, 0.9, 0.2, 1), BadConfig);
}

TEST_CASE("dataset round trip is byte exact and index-consistent") {
  const KinematicModel body = synth_model(default_body_config(), 14);
  DatagenConfig cfg;
  cfg.task = Task::Hmd;
  Dataset ds = generate_dataset(body, cfg, 20, 0.8, 0.1, 7, 1);
  ds.config_hash = 1234567;

  const std::string p1 = temp_path("mofit_ds_a.mfit");
  const std::string p2 = temp_path("mofit_ds_b.mfit");
  write_dataset(ds, body, p1);
  const Dataset back = read_dataset(p1, body);
  write_dataset(back, body, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(back.config_hash == 1234567);
  REQUIRE(back.records.size() == ds.records.size());

  // Records regenerate exactly from their stored seeds: the index record maps
  // every row back to its generator draw.
  const ParamLayout layout = body.layout(Task::Hmd);
  for (const std::size_t i : {std::size_t(0), std::size_t(7), std::size_t(19)}) {
    Rng rng(back.records[i].seed);
    const Eigen::VectorXd gt = sample_pose(body, layout, cfg.pose, rng);
    CHECK((gt - back.records[i].gt_params).cwiseAbs().maxCoeff() == 0.0);
  }

  std::remove(p1.c_str());
  std::remove(p2.c_str());

  SUBCASE("body2d and face round trips") {
    DatagenConfig cfg2;
    cfg2.task = Task::Body2D;
    Dataset ds2 = generate_dataset(body, cfg2, 8, 0.5, 0.25, 3, 1);
    const std::string p = temp_path("mofit_ds_c.mfit");
    write_dataset(ds2, body, p);
    const Dataset back2 = read_dataset(p, body);
    CHECK((back2.records[3].obs.body2d.keypoints -
           ds2.records[3].obs.body2d.keypoints)
              .cwiseAbs()
              .maxCoeff() == 0.0);

    const KinematicModel face = synth_model(default_face_config(), 15);
    DatagenConfig cfg3;
    cfg3.task = Task::Face;
    Dataset ds3 = generate_dataset(face, cfg3, 8, 0.8, 0.0, 4, 1);
    write_dataset(ds3, face, p);
    const Dataset back3 = read_dataset(p, face);
    CHECK((back3.records[5].obs.face.landmarks - ds3.records[5].obs.face.landmarks)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    std::remove(p.c_str());
  }
}
