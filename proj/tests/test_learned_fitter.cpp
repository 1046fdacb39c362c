#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mofit/datagen.hpp"
#include "mofit/errors.hpp"
#include "mofit/learned_fitter.hpp"
#include "test_support.hpp"

using namespace mofit;
using namespace mofit::testing;

namespace {

KinematicModel small_body() {
  SynthModelConfig cfg = default_body_config();
  cfg.vertices = 160;
  cfg.shape_dims = 4;
  return synth_model(cfg, 3);
}

std::vector<FitSample> hmd_samples(const KinematicModel& model, int count,
                                   std::uint64_t seed) {
  DatagenConfig cfg;
  cfg.task = Task::Hmd;
  cfg.visibility = VisibilityMode::Half;
  const Dataset ds = generate_dataset(model, cfg, count, 1.0, 0.0, seed);
  std::vector<FitSample> out;
  for (const auto& rec : ds.records) out.push_back({rec.obs, rec.gt_params});
  return out;
}

FitterConfig small_config(const KinematicModel& model, Task task) {
  FitterConfig cfg;
  cfg.task = task;
  cfg.theta_dim = model.layout(task).size();
  cfg.encoding_dim = encoding_dim(model, task);
  cfg.residual_dim = residual_size(task, model);
  cfg.gru_units = 12;
  cfg.gru_layers = 2;
  cfg.mlp_hidden = 16;
  cfg.mlp_depth = 2;
  cfg.iterations = 3;
  cfg.dropout_p = 0.0;
  return cfg;
}

Eigen::VectorXd reference_pose(const ParamLayout& layout) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int j = 0; j < layout.joints; ++j) {
    theta[layout.rot_offset(j) + 0] = 1.0;
    theta[layout.rot_offset(j) + 4] = 1.0;
  }
  if (layout.has_camera()) theta[layout.camera_offset()] = 200.0;
  return theta;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("update rule variants") {
  Rng rng(1);
  const int n = 10;
  const Eigen::VectorXd delta = random_vector(rng, n);
  const Eigen::VectorXd g = random_vector(rng, n);

  SUBCASE("network-only is bitwise the lambda=1, gamma=0 special case") {
    const auto u = update_rule_variant(UpdateRule::NetworkOnly, delta, g,
                                       Eigen::VectorXd::Zero(n),
                                       Eigen::VectorXd::Zero(n));
    for (int i = 0; i < n; ++i) CHECK(u.step[i] == delta[i]);
    CHECK((u.lambda.array() == 1.0).all());
    CHECK((u.gamma.array() == 0.0).all());
  }

  SUBCASE("zero outputs make the update a no-op") {
    // Post-activation lambda = gamma = 0 and a zero network step: applying
    // lambda .* delta - gamma .* g leaves the parameters bitwise unchanged.
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd step =
        (zero.array() * zero.array() - zero.array() * g.array()).matrix();
    const Eigen::VectorXd theta = random_vector(rng, n);
    const Eigen::VectorXd next = theta + step;
    for (int i = 0; i < n; ++i) CHECK(next[i] == theta[i]);
  }

  SUBCASE("lm-like matches the hand-composed formula") {
    const Eigen::VectorXd lraw = random_vector(rng, n);
    const Eigen::VectorXd graw = random_vector(rng, n);
    const auto u = update_rule_variant(UpdateRule::LmLike, delta, g, lraw, graw);
    for (int i = 0; i < n; ++i) {
      const double gamma = std::log1p(std::exp(graw[i]));
      CHECK(u.step[i] ==
            doctest::Approx(lraw[i] * delta[i] - gamma * g[i]).epsilon(1e-12));
    }
  }

  SUBCASE("gradient-descent reduction: delta = 0, gamma = c") {
    const double c = 0.37;
    const double graw = std::log(std::exp(c) - 1.0);  // softplus inverse
    const auto u = update_rule_variant(UpdateRule::LmLike,
                                       Eigen::VectorXd::Zero(n), g,
                                       Eigen::VectorXd::Zero(n),
                                       Eigen::VectorXd::Constant(n, graw));
    for (int i = 0; i < n; ++i)
      CHECK(u.step[i] == doctest::Approx(-c * g[i]).epsilon(1e-10));
  }

  SUBCASE("convex endpoints") {
    const Eigen::VectorXd graw = random_vector(rng, n);
    const auto pure_net = update_rule_variant(
        UpdateRule::Convex, delta, g, Eigen::VectorXd::Constant(n, 40.0), graw);
    CHECK((pure_net.step - delta).cwiseAbs().maxCoeff() < 1e-12);
    const auto pure_gd = update_rule_variant(
        UpdateRule::Convex, delta, g, Eigen::VectorXd::Constant(n, -40.0), graw);
    for (int i = 0; i < n; ++i) {
      const double gamma = std::log1p(std::exp(graw[i]));
      CHECK(pure_gd.step[i] == doctest::Approx(-gamma * g[i]).epsilon(1e-9));
    }
  }

  SUBCASE("normalized variant is bounded by the triangle inequality") {
    for (int trial = 0; trial < 100; ++trial) {
      const Eigen::VectorXd d2 = random_vector(rng, n);
      const Eigen::VectorXd g2 = random_vector(rng, n);
      const Eigen::VectorXd lraw = random_vector(rng, n);
      const Eigen::VectorXd graw = random_vector(rng, n);
      const auto u =
          update_rule_variant(UpdateRule::NormalizedConvex, d2, g2, lraw, graw);
      CHECK(u.step.cwiseAbs().maxCoeff() <= u.gamma.maxCoeff() * 2.0 + 1e-12);
      for (int i = 0; i < n; ++i) {
        const double bound =
            u.gamma[i] * (u.lambda[i] * std::abs(d2[i]) / d2.norm() +
                          (1.0 - u.lambda[i]) * std::abs(g2[i]) / g2.norm());
        CHECK(std::abs(u.step[i]) <= bound + 1e-12);
      }
    }
  }

  SUBCASE("normalized variant rejects near-zero directions") {
    CHECK_THROWS_AS(update_rule_variant(UpdateRule::NormalizedConvex,
                                        Eigen::VectorXd::Zero(n), g,
                                        Eigen::VectorXd::Zero(n),
                                        Eigen::VectorXd::Zero(n)),
                    DegenerateInput);
  }

  SUBCASE("scaling the gradient scales only the descent contribution") {
    const double c = 3.5;
    const Eigen::VectorXd lraw = random_vector(rng, n);
    const Eigen::VectorXd graw = random_vector(rng, n);
    const auto base = update_rule_variant(UpdateRule::LmLike, delta, g, lraw, graw);
    const auto scaled =
        update_rule_variant(UpdateRule::LmLike, delta, c * g, lraw, graw);
    const Eigen::VectorXd diff = scaled.step - base.step;
    const Eigen::VectorXd expected =
        (-(c - 1.0) * base.gamma.array() * g.array()).matrix();
    CHECK((diff - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("observation encoding") {
  const KinematicModel model = small_body();
  auto samples = hmd_samples(model, 6, 99);

  SUBCASE("identical observations encode identically") {
    const Eigen::VectorXd a = encode_observations(model, samples[0].obs);
    const Eigen::VectorXd b = encode_observations(model, samples[0].obs);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.size() == encoding_dim(model, Task::Hmd));
  }

  SUBCASE("invisible left hand zeroes its blocks and flag") {
    FitSample s = samples[0];
    s.obs.hmd.visible_left = false;
    const Eigen::VectorXd enc = encode_observations(model, s.obs);
    CHECK(enc.segment(12, 12).cwiseAbs().maxCoeff() == 0.0);
    CHECK(enc.segment(36, 15).cwiseAbs().maxCoeff() == 0.0);
    CHECK(enc[66] == 0.0);
    CHECK(enc.segment(0, 12).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("documented index map decodes back to the observations") {
    FitSample s = samples[1];
    s.obs.hmd.visible_left = true;
    s.obs.hmd.visible_right = true;
    const Eigen::VectorXd enc = encode_observations(model, s.obs);
    const auto blocks = encoding_layout(model, Task::Hmd);
    REQUIRE(blocks.size() == 6);
    const RigidTransform headset =
        unflatten_transform(enc.segment<12>(blocks[0].offset));
    CHECK(se3_distance(headset, s.obs.hmd.headset) < 1e-15);
    const RigidTransform rwrist =
        unflatten_transform(enc.segment<12>(blocks[2].offset));
    CHECK(se3_distance(rwrist, s.obs.hmd.wrist_right) < 1e-15);
    for (int i = 0; i < 5; ++i)
      CHECK((enc.segment<3>(blocks[3].offset + 3 * i).transpose() -
             s.obs.hmd.fingertips_left.row(i))
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
}

TEST_CASE("full fitter step equals a hand-composed oracle") {
  const KinematicModel model = small_body();
  const ParamLayout layout = model.layout(Task::Hmd);
  auto samples = hmd_samples(model, 2, 7);

  FitterConfig cfg = small_config(model, Task::Hmd);
  cfg.iterations = 1;
  FitterNetworks nets;
  nets.build(cfg);
  nets.init_weights(11, reference_pose(layout));
  // Nudge the heads away from the tiny init so the test exercises real values.
  Rng rng(5);
  nets.visit([&](const std::string& name, Tensor& t) {
    if (name.find("head.weight") != std::string::npos ||
        name.find(".out.weight") != std::string::npos)
      for (Eigen::Index i = 0; i < t.value.size(); ++i)
        t.value(i) += 0.05 * rng.normal();
  });

  const FitterTrajectory traj = run_fitter(nets, model, samples, 1);

  // Independent recomposition of iteration one.
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const Eigen::VectorXd enc = encode_observations(model, samples[b].obs);
    Eigen::MatrixXd enc_row = enc.transpose();
    const Eigen::VectorXd theta0 =
        nets.phi_init.forward(enc_row, nullptr).row(0).transpose();
    CHECK((theta0 - traj.thetas[0].row(static_cast<int>(b)).transpose())
              .cwiseAbs()
              .maxCoeff() < 1e-15);

    const ResidualPacket packet = task_residuals(model, theta0, samples[b].obs, true);
    const Eigen::MatrixXd h0 = nets.phi_h.forward(enc_row, nullptr);

    Eigen::MatrixXd input(1, 2 * cfg.theta_dim + cfg.encoding_dim);
    input << packet.gradient.transpose(), theta0.transpose(), enc.transpose();
    Eigen::MatrixXd x = input;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      const Eigen::MatrixXd h_prev = h0.middleCols(l * cfg.gru_units, cfg.gru_units);
      x = nets.steps[0].gru[static_cast<std::size_t>(l)].forward(x, h_prev, nullptr);
    }
    const Eigen::VectorXd delta = nets.steps[0].head.forward(x).row(0).transpose();

    const Eigen::VectorXd r_look =
        task_residuals(model, Eigen::VectorXd(theta0 + delta), samples[b].obs, false).r;
    Eigen::MatrixXd lg_in(1, 2 * cfg.residual_dim);
    lg_in << packet.r.transpose(), r_look.transpose();
    const Eigen::MatrixXd lg = nets.steps[0].lg_shared.forward(lg_in, nullptr);
    const Eigen::VectorXd lraw = lg.row(0).head(cfg.lg_dim()).transpose();
    const Eigen::VectorXd graw = lg.row(0).tail(cfg.lg_dim()).transpose();

    const auto u =
        update_rule_variant(UpdateRule::LmLike, delta, packet.gradient, lraw, graw);
    const Eigen::VectorXd expected = theta0 + u.step;
    CHECK((expected - traj.thetas[1].row(static_cast<int>(b)).transpose())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("run_fitter determinism and N=0 regressor mode") {
  const KinematicModel model = small_body();
  auto samples = hmd_samples(model, 3, 21);
  FitterNetworks nets;
  nets.build(small_config(model, Task::Hmd));
  nets.init_weights(77, reference_pose(model.layout(Task::Hmd)));

  const FitterTrajectory a = run_fitter(nets, model, samples, 3);
  const FitterTrajectory b = run_fitter(nets, model, samples, 3);
  REQUIRE(a.thetas.size() == 4);
  for (std::size_t i = 0; i < a.thetas.size(); ++i)
    CHECK((a.thetas[i] - b.thetas[i]).cwiseAbs().maxCoeff() == 0.0);

  const FitterTrajectory zero = run_fitter(nets, model, samples, 0);
  CHECK(zero.thetas.size() == 1);
  CHECK((zero.thetas[0] - a.thetas[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training loss definition") {
  const KinematicModel model = small_body();
  const ParamLayout layout = model.layout(Task::Hmd);
  Rng rng(31);
  DatagenConfig dcfg;
  Eigen::VectorXd gt = sample_pose(model, layout, dcfg.pose, rng);

  SUBCASE("ground-truth trajectory scores zero") {
    CHECK(training_loss(model, layout, {gt, gt, gt}, gt, {}) == 0.0);
  }

  SUBCASE("term-by-term oracle on a random trajectory") {
    Eigen::VectorXd other = sample_pose(model, layout, dcfg.pose, rng);
    TrainLossWeights w;
    const double got = training_loss(model, layout, {other}, gt, w);

    const auto fk_gt = forward_kinematics(model, layout, gt);
    const auto fk = forward_kinematics(model, layout, other);
    const Eigen::MatrixXd v_gt = lbs_vertices(model, layout, gt, fk_gt);
    const Eigen::MatrixXd v = lbs_vertices(model, layout, other, fk);

    double expected = w.mesh * (v - v_gt).cwiseAbs().sum();
    for (Eigen::Index e = 0; e < model.edges.rows(); ++e) {
      const int a = model.edges(e, 0);
      const int b = model.edges(e, 1);
      expected += w.edge *
                  ((v.row(a) - v.row(b)) - (v_gt.row(a) - v_gt.row(b))).cwiseAbs().sum();
    }
    for (int j = 0; j < model.num_joints(); ++j) {
      expected += w.transform * ((fk.world[j].R - fk_gt.world[j].R).cwiseAbs().sum() +
                                 (fk.world[j].t - fk_gt.world[j].t).cwiseAbs().sum());
      expected += w.rotation *
                  (fk.local_rotations[j] - fk_gt.local_rotations[j]).cwiseAbs().sum();
    }
    expected += w.translation * (other.segment<3>(layout.translation_offset()) -
                                 gt.segment<3>(layout.translation_offset()))
                                    .cwiseAbs()
                                    .sum();
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("step loss gradient matches finite differences away from kinks") {
  // A small chain keeps the number of L1 terms low enough that poses whose
  // terms all clear the kink exist.
  SynthModelConfig mcfg;
  mcfg.tree = SynthTree::Chain;
  mcfg.joints = 3;
  mcfg.vertices = 24;
  mcfg.shape_dims = 2;
  const KinematicModel model = synth_model(mcfg, 8);
  const ParamLayout layout = model.layout(Task::Hmd);
  Rng rng(71);
  DatagenConfig dcfg;

  // Find a pose pair whose L1 terms all sit away from the |x| kink, so the
  // central difference is exact.
  Eigen::VectorXd gt, theta;
  bool found = false;
  for (int attempt = 0; attempt < 50 && !found; ++attempt) {
    gt = sample_pose(model, layout, dcfg.pose, rng);
    theta = sample_pose(model, layout, dcfg.pose, rng);
    const auto fk_gt = forward_kinematics(model, layout, gt);
    const auto fk = forward_kinematics(model, layout, theta);
    const Eigen::MatrixXd v_gt = lbs_vertices(model, layout, gt, fk_gt);
    const Eigen::MatrixXd v = lbs_vertices(model, layout, theta, fk);
    double min_term = std::numeric_limits<double>::infinity();
    auto track = [&](double x) { min_term = std::min(min_term, std::abs(x)); };
    for (Eigen::Index i = 0; i < v.size(); ++i) track(v(i) - v_gt(i));
    for (Eigen::Index e = 0; e < model.edges.rows(); ++e)
      for (int cxyz = 0; cxyz < 3; ++cxyz)
        track((v(model.edges(e, 0), cxyz) - v(model.edges(e, 1), cxyz)) -
              (v_gt(model.edges(e, 0), cxyz) - v_gt(model.edges(e, 1), cxyz)));
    for (int j = 0; j < model.num_joints(); ++j) {
      const Mat3 dR = fk.world[j].R - fk_gt.world[j].R;
      const Vec3 dt = fk.world[j].t - fk_gt.world[j].t;
      const Mat3 dRl = fk.local_rotations[j] - fk_gt.local_rotations[j];
      for (int a = 0; a < 3; ++a) {
        track(dt[a]);
        for (int b = 0; b < 3; ++b) {
          track(dR(a, b));
          track(dRl(a, b));
        }
      }
    }
    found = min_term > 1e-4;
  }
  REQUIRE(found);

  TrainLossWeights weights;
  Eigen::VectorXd grad;
  training_step_loss(model, layout, theta, gt, weights, &grad);
  const Eigen::VectorXd fd = finite_difference_gradient(
      [&](const Eigen::VectorXd& x) {
        return training_step_loss(model, layout, x, gt, weights, nullptr);
      },
      theta, 1e-7);
  CHECK(max_relative_error(grad, fd) < 1e-5);
}

TEST_CASE("unrolled training gradient matches frozen-signal finite differences") {
  const KinematicModel model = small_body();
  const ParamLayout layout = model.layout(Task::Hmd);
  auto samples = hmd_samples(model, 2, 13);

  FitterConfig cfg = small_config(model, Task::Hmd);
  cfg.gru_units = 8;
  cfg.gru_layers = 2;
  cfg.mlp_hidden = 8;
  cfg.iterations = 5;
  FitterNetworks nets;
  nets.build(cfg);
  nets.init_weights(3, reference_pose(layout));

  // The network/unroll chain is checked with the translation-only loss: it is
  // piecewise linear with a handful of kink locations that the guard below
  // verifies the base point stays away from, so central differences are
  // exact. The full L1 assembly is finite-difference-checked separately at a
  // kink-free point in the step-loss test above.
  TrainLossWeights weights;
  weights.mesh = 0.0;
  weights.edge = 0.0;
  weights.transform = 0.0;
  weights.rotation = 0.0;
  weights.translation = 100.0;

  for (Tensor* t : nets.parameters()) t->zero_grad();
  const UnrollOutput base =
      fitter_unroll(nets, model, samples, weights, false, nullptr, true, nullptr);

  // Kink guard: every per-step translation difference stays off zero.
  for (const auto& thetas : base.trajectory.thetas)
    for (int b = 0; b < thetas.rows(); ++b)
      for (int k = 0; k < 3; ++k) {
        const double diff =
            thetas(b, layout.translation_offset() + k) -
            samples[static_cast<std::size_t>(b)].gt_params[layout.translation_offset() + k];
        REQUIRE(std::abs(diff) > 1e-3);
      }

  auto loss_at = [&]() {
    return fitter_unroll(nets, model, samples, weights, false, nullptr, false,
                         &base.signals)
        .loss;
  };
  CHECK(loss_at() == doctest::Approx(base.loss).epsilon(1e-12));

  Rng pick(17);
  std::vector<Tensor*> params = nets.parameters();
  const double h = 1e-6;
  int checked = 0;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor* t = params[p];
    for (int s = 0; s < 2; ++s) {
      const Eigen::Index i = static_cast<Eigen::Index>(
          pick.uniform_int(0, static_cast<int>(t->value.size()) - 1));
      const double saved = t->value(i);
      t->value(i) = saved + h;
      const double fp = loss_at();
      t->value(i) = saved - h;
      const double fm = loss_at();
      t->value(i) = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = t->grad(i);
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-2});
      worst = std::max(worst, std::abs(fd - analytic) / denom);
      ++checked;
    }
  }
  CHECK(checked > 100);
  CHECK(worst < 1e-5);
}

TEST_CASE("training reduces the loss and is deterministic") {
  const KinematicModel model = small_body();
  auto train = hmd_samples(model, 48, 55);
  auto val = hmd_samples(model, 12, 56);

  FitterConfig cfg = small_config(model, Task::Hmd);
  cfg.iterations = 2;
  cfg.gru_units = 16;

  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.lr = 2e-3;
  tc.anneal_epoch = 1000;
  tc.seed = 5;

  auto run_once = [&]() {
    FitterNetworks nets;
    nets.build(cfg);
    nets.init_weights(9, reference_pose(model.layout(Task::Hmd)));
    const TrainResult res = train_fitter(nets, model, train, val, tc);
    return std::make_pair(res, std::move(nets));
  };

  auto [res1, nets1] = run_once();
  REQUIRE(res1.history.size() == 3);
  CHECK(res1.history.back().train_loss < res1.history.front().train_loss);

  auto [res2, nets2] = run_once();
  for (std::size_t e = 0; e < res1.history.size(); ++e) {
    CHECK(res1.history[e].train_loss == res2.history[e].train_loss);
    CHECK(res1.history[e].val_loss == res2.history[e].val_loss);
  }
  std::vector<Tensor*> p1 = nets1.parameters();
  std::vector<Tensor*> p2 = nets2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK((p1[i]->value - p2[i]->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("per-step weights store distinct copies") {
  const KinematicModel model = small_body();
  FitterConfig cfg = small_config(model, Task::Hmd);
  cfg.per_step_weights = true;
  cfg.iterations = 3;
  FitterNetworks nets;
  nets.build(cfg);
  nets.init_weights(123, reference_pose(model.layout(Task::Hmd)));
  CHECK(nets.steps.size() == 3);

  int step_tensors = 0;
  nets.visit([&](const std::string& name, Tensor&) {
    if (name.rfind("step2.", 0) == 0) ++step_tensors;
  });
  CHECK(step_tensors > 0);

  CHECK((nets.steps[0].head.weight.value - nets.steps[1].head.weight.value)
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("checkpoint round trip is byte exact") {
  const KinematicModel model = small_body();
  FitterConfig cfg = small_config(model, Task::Hmd);
  FitterNetworks nets;
  nets.build(cfg);
  nets.init_weights(41, reference_pose(model.layout(Task::Hmd)));
  nets.config_hash = 0xDEADBEEFULL;

  Adam adam(nets.parameters(), {});
  for (Tensor* t : nets.parameters()) t->grad.setConstant(0.25);
  adam.step();

  const std::string p1 = temp_path("mofit_ckpt_a.mfit");
  const std::string p2 = temp_path("mofit_ckpt_b.mfit");
  save_checkpoint(nets, p1, adam.step_count(), &adam);

  Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.nets.config_hash == 0xDEADBEEFULL);
  CHECK(loaded.step == 1);
  CHECK(loaded.has_adam);

  Adam adam2(loaded.nets.parameters(), {});
  adam2.restore(loaded.adam_m, loaded.adam_v, loaded.step);
  save_checkpoint(loaded.nets, p2, adam2.step_count(), &adam2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  {
    std::ofstream bad(p1, std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS(load_checkpoint(p1), FormatError);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
