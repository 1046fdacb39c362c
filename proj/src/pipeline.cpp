#include "mofit/pipeline.hpp"

#include <cinttypes>
#include <cstdio>
#include <memory>

#include "mofit/errors.hpp"
#include "mofit/parallel.hpp"

namespace mofit {

KinematicModel model_from_config(const Config& cfg) {
  SynthModelConfig mc;
  const std::string tree = cfg.get_string("model.tree");
  if (tree == "body")
    mc = default_body_config();
  else if (tree == "face")
    mc = default_face_config();
  else if (tree == "chain") {
    mc.tree = SynthTree::Chain;
    mc.joints = cfg.get_int("model.chain_joints");
  } else {
    throw BadConfig("unknown model tree: " + tree);
  }
  mc.vertices = cfg.get_int("model.vertices");
  mc.shape_dims = cfg.get_int("model.shape_dims");
  if (tree == "face") {
    mc.expr_dims = cfg.get_int("model.expr_dims");
    mc.landmarks = cfg.get_int("model.landmarks");
  }
  KinematicModel model = synth_model(mc, cfg.get_u64("model.seed"));
  model.config_hash = cfg.hash_sections({"model"});
  return model;
}

DatagenConfig datagen_from_config(const Config& cfg) {
  DatagenConfig dc;
  dc.task = task_from_name(cfg.get_string("task.name"));
  dc.visibility = cfg.get_string("task.visibility") == "full" ? VisibilityMode::Full
                                                              : VisibilityMode::Half;
  dc.noise_2d = cfg.get_double("data.noise_2d");
  dc.noise_position = cfg.get_double("data.noise_position");
  dc.noise_rotation = cfg.get_double("data.noise_rotation");
  dc.keypoint_dropout = cfg.get_double("data.keypoint_dropout");
  dc.pose.joint_angle_limit = cfg.get_double("data.pose_angle_limit");
  dc.pose.root_xz_range = cfg.get_double("data.root_xz_range");
  dc.pose.ground_clearance = cfg.get_double("data.ground_clearance");
  dc.pose.shape_std = cfg.get_double("data.shape_std");
  dc.pose.expr_std = cfg.get_double("data.expr_std");
  return dc;
}

FitterConfig fitter_from_config(const Config& cfg, const KinematicModel& model) {
  FitterConfig fc;
  fc.task = task_from_name(cfg.get_string("task.name"));
  fc.theta_dim = model.layout(fc.task).size();
  fc.encoding_dim = encoding_dim(model, fc.task);
  fc.residual_dim = residual_size(fc.task, model);
  fc.gru_units = cfg.get_int("fitter.gru_units");
  fc.gru_layers = cfg.get_int("fitter.gru_layers");
  fc.mlp_hidden = cfg.get_int("fitter.mlp_hidden");
  fc.mlp_depth = cfg.get_int("fitter.mlp_depth");
  fc.iterations = cfg.get_int("fitter.iterations");
  fc.update_rule = update_rule_from_name(cfg.get_string("fitter.update_rule"));
  fc.net_type = net_type_from_name(cfg.get_string("fitter.net_type"));
  const std::string mode = cfg.get_string("fitter.weights_mode");
  if (mode != "shared" && mode != "per-step")
    throw BadConfig("unknown weights mode: " + mode);
  fc.per_step_weights = mode == "per-step";
  const std::string lg = cfg.get_string("fitter.lambda_gamma");
  if (lg != "vector" && lg != "scalar")
    throw BadConfig("unknown lambda/gamma mode: " + lg);
  fc.vector_lambda_gamma = lg == "vector";
  fc.shared_lambda_gamma = cfg.get_bool("fitter.shared_lambda_gamma");
  fc.use_layer_norm = cfg.get_bool("fitter.layer_norm");
  fc.dropout_p = cfg.get_double("fitter.dropout");
  fc.gamma_bias = cfg.get_double("fitter.gamma_bias");
  return fc;
}

TrainConfig train_from_config(const Config& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.get_int("train.epochs");
  tc.batch_size = cfg.get_int("train.batch_size");
  tc.lr = cfg.get_double("train.lr");
  tc.anneal_epoch = cfg.get_int("train.anneal_epoch");
  tc.anneal_factor = cfg.get_double("train.anneal_factor");
  tc.seed = cfg.get_u64("train.seed");
  tc.workers = cfg.get_int("train.workers");
  tc.loss_weights.mesh = cfg.get_double("loss.mesh");
  tc.loss_weights.edge = cfg.get_double("loss.edge");
  tc.loss_weights.transform = cfg.get_double("loss.transform");
  tc.loss_weights.rotation = cfg.get_double("loss.rotation");
  tc.loss_weights.translation = cfg.get_double("loss.translation");
  return tc;
}

LMOptions lm_options_from_config(const Config& cfg) {
  LMOptions opts;
  opts.max_iters = cfg.get_int("baseline.max_iters");
  opts.initial_damping = cfg.get_double("baseline.initial_damping");
  opts.damping_up = cfg.get_double("baseline.damping_up");
  opts.damping_down = cfg.get_double("baseline.damping_down");
  opts.min_diag = cfg.get_double("baseline.min_diag");
  opts.diag_floor_rel = cfg.get_double("baseline.diag_floor_rel");
  opts.convergence_tol = cfg.get_double("baseline.convergence_tol");
  return opts;
}

std::vector<FitSample> to_samples(const Dataset& dataset, Split split) {
  std::vector<FitSample> out;
  for (const auto& rec : dataset.records)
    if (rec.split == split) out.push_back({rec.obs, rec.gt_params});
  return out;
}

GaussianMixture pose_prior_from_dataset(const KinematicModel& model,
                                        const Dataset& dataset, const Config& cfg) {
  const ParamLayout layout = model.layout(dataset.task);
  const int rot_dims = 6 * layout.joints;
  const auto train = dataset.indices_of(Split::Train);
  const int want = std::min<int>(cfg.get_int("baseline.gmm_samples"),
                                 static_cast<int>(train.size()));
  if (want < cfg.get_int("baseline.gmm_components"))
    throw BadConfig("not enough train samples for the pose prior");
  Eigen::MatrixXd samples(want, rot_dims);
  for (int i = 0; i < want; ++i)
    samples.row(i) =
        dataset.records[static_cast<std::size_t>(train[static_cast<std::size_t>(i)])]
            .gt_params.head(rot_dims)
            .transpose();
  return fit_gmm_em(samples, cfg.get_int("baseline.gmm_components"),
                    dataset.master_seed ^ 0x9e37ULL,
                    cfg.get_int("baseline.gmm_iterations"), 1e-6);
}

Eigen::VectorXd classic_init(const KinematicModel& model, const ObservationSet& obs,
                             const Config& cfg) {
  const ParamLayout layout = model.layout(obs.task);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int j = 0; j < layout.joints; ++j) {
    theta[layout.rot_offset(j) + 0] = 1.0;
    theta[layout.rot_offset(j) + 4] = 1.0;
  }
  switch (obs.task) {
    case Task::Hmd: {
      // Place the rest pose under the observed headset.
      const Vec3 rest_head = model.rest_joint_mean.row(model.head_joint).transpose();
      theta.segment<3>(layout.translation_offset()) =
          obs.hmd.headset.t - default_hmd_calibration().t - rest_head;
      break;
    }
    case Task::Body2D:
      theta[layout.camera_offset()] = 200.0;
      theta[layout.camera_offset() + 1] = 256.0;
      theta[layout.camera_offset() + 2] = 256.0;
      break;
    case Task::Face:
      break;
  }
  return theta;
}

Eigen::VectorXd EvalReport::mean() const {
  Eigen::VectorXd out = values.colwise().mean().transpose();
  if (!columns.empty() && columns.front() == "index") out[0] = -1.0;
  return out;
}

namespace {

struct InstanceMetrics {
  std::vector<double> row;
};

std::vector<std::string> metric_columns(Task task) {
  switch (task) {
    case Task::Hmd:
      return {"index",   "v2v_full", "pa_v2v_full", "v2v_head", "v2v_left_hand",
              "v2v_right_hand", "mpjpe", "pa_mpjpe", "ground_penetration",
              "data_term"};
    case Task::Body2D:
      return {"index", "v2v_full", "pa_v2v_full", "mpjpe", "pa_mpjpe",
              "ground_penetration", "data_term"};
    case Task::Face:
      return {"index", "v2v_full", "pa_v2v_full", "mplpe", "pa_mplpe", "data_term"};
  }
  throw BadConfig("unknown task");
}

std::vector<double> instance_metrics(const KinematicModel& model, Task task,
                                     const Eigen::VectorXd& estimate,
                                     const Eigen::VectorXd& gt, double data_term,
                                     int index) {
  const ParamLayout layout = model.layout(task);
  const FkResult fk_est = forward_kinematics(model, layout, estimate);
  const FkResult fk_gt = forward_kinematics(model, layout, gt);
  const Eigen::MatrixXd v_est = lbs_vertices(model, layout, estimate, fk_est);
  const Eigen::MatrixXd v_gt = lbs_vertices(model, layout, gt, fk_gt);
  const Eigen::MatrixXd j_est = joint_positions(fk_est);
  const Eigen::MatrixXd j_gt = joint_positions(fk_gt);

  switch (task) {
    case Task::Hmd:
      return {static_cast<double>(index),
              v2v(v_est, v_gt),
              procrustes_aligned(&mpjpe, v_est, v_gt),  // same mean point error
              v2v(v_est, v_gt, &model.part_head),
              v2v(v_est, v_gt, &model.part_left_hand),
              v2v(v_est, v_gt, &model.part_right_hand),
              mpjpe(j_est, j_gt),
              procrustes_aligned(&mpjpe, j_est, j_gt),
              ground_penetration(v_est),
              data_term};
    case Task::Body2D:
      return {static_cast<double>(index),
              v2v(v_est, v_gt),
              procrustes_aligned(&mpjpe, v_est, v_gt),  // same mean point error
              mpjpe(j_est, j_gt),
              procrustes_aligned(&mpjpe, j_est, j_gt),
              ground_penetration(v_est),
              data_term};
    case Task::Face: {
      Eigen::MatrixXd lm_est(static_cast<Eigen::Index>(model.landmark_indices.size()), 3);
      Eigen::MatrixXd lm_gt(lm_est.rows(), 3);
      for (std::size_t i = 0; i < model.landmark_indices.size(); ++i) {
        lm_est.row(static_cast<Eigen::Index>(i)) = v_est.row(model.landmark_indices[i]);
        lm_gt.row(static_cast<Eigen::Index>(i)) = v_gt.row(model.landmark_indices[i]);
      }
      return {static_cast<double>(index),
              v2v(v_est, v_gt),
              procrustes_aligned(&mpjpe, v_est, v_gt),  // same mean point error
              mplpe(lm_est, lm_gt),
              procrustes_aligned(&mplpe, lm_est, lm_gt),
              data_term};
    }
  }
  throw BadConfig("unknown task");
}

}  // namespace

EvalReport evaluate_learned(const KinematicModel& model, const Dataset& dataset,
                            Split split, const FitterNetworks& nets, int iterations,
                            int workers, Eigen::MatrixXd* per_iteration,
                            std::vector<std::string>* per_iteration_columns) {
  const auto indices = dataset.indices_of(split);
  if (indices.empty()) throw BadConfig("empty evaluation split");
  const Task task = dataset.task;
  const ParamLayout layout = model.layout(task);

  EvalReport report;
  report.columns = metric_columns(task);
  report.values.resize(static_cast<Eigen::Index>(indices.size()),
                       static_cast<Eigen::Index>(report.columns.size()));

  // Per-iteration curves: data term plus the task's headline metrics.
  const int curve_metrics = 4;  // data_term, v2v_full, mpjpe-or-mplpe, ground/pa
  Eigen::MatrixXd curve_acc =
      Eigen::MatrixXd::Zero(iterations + 1, curve_metrics);

  // Batched inference keeps the GRU matmuls efficient.
  const int batch_size = 256;
  std::vector<Eigen::MatrixXd> curve_rows(indices.size());
  for (std::size_t at = 0; at < indices.size(); at += batch_size) {
    const std::size_t end = std::min(indices.size(), at + batch_size);
    std::vector<FitSample> batch;
    for (std::size_t i = at; i < end; ++i)
      batch.push_back({dataset.records[static_cast<std::size_t>(indices[i])].obs,
                       dataset.records[static_cast<std::size_t>(indices[i])].gt_params});
    const FitterTrajectory traj = run_fitter(nets, model, batch, iterations,
                                             default_hmd_calibration(), workers);

    parallel_for(static_cast<int>(batch.size()), workers, [&](int b) {
      const std::size_t global = at + static_cast<std::size_t>(b);
      const Eigen::VectorXd final_theta =
          traj.thetas.back().row(b).transpose();
      const double final_data =
          task_residuals(model, final_theta, batch[static_cast<std::size_t>(b)].obs,
                         false)
              .data_term();
      const auto row = instance_metrics(model, task, final_theta,
                                        batch[static_cast<std::size_t>(b)].gt_params,
                                        final_data, indices[global]);
      for (std::size_t c = 0; c < row.size(); ++c)
        report.values(static_cast<Eigen::Index>(global), static_cast<Eigen::Index>(c)) =
            row[c];

      // Curves across iterations for this instance.
      Eigen::MatrixXd rows(iterations + 1, curve_metrics);
      for (int it = 0; it <= iterations; ++it) {
        const Eigen::VectorXd theta = traj.thetas[static_cast<std::size_t>(it)]
                                          .row(b)
                                          .transpose();
        const double data =
            it == 0 ? traj.initial_data_term[b]
                    : task_residuals(model, theta,
                                     batch[static_cast<std::size_t>(b)].obs, false)
                          .data_term();
        const FkResult fk_est = forward_kinematics(model, layout, theta);
        const FkResult fk_gt = forward_kinematics(
            model, layout, batch[static_cast<std::size_t>(b)].gt_params);
        const Eigen::MatrixXd v_est = lbs_vertices(model, layout, theta, fk_est);
        const Eigen::MatrixXd v_gt = lbs_vertices(
            model, layout, batch[static_cast<std::size_t>(b)].gt_params, fk_gt);
        rows(it, 0) = data;
        rows(it, 1) = v2v(v_est, v_gt);
        if (task == Task::Face) {
          Eigen::MatrixXd lm_est(
              static_cast<Eigen::Index>(model.landmark_indices.size()), 3);
          Eigen::MatrixXd lm_gt(lm_est.rows(), 3);
          for (std::size_t i = 0; i < model.landmark_indices.size(); ++i) {
            lm_est.row(static_cast<Eigen::Index>(i)) =
                v_est.row(model.landmark_indices[i]);
            lm_gt.row(static_cast<Eigen::Index>(i)) =
                v_gt.row(model.landmark_indices[i]);
          }
          rows(it, 2) = mplpe(lm_est, lm_gt);
          rows(it, 3) = procrustes_aligned(&mplpe, lm_est, lm_gt);
        } else {
          rows(it, 2) = mpjpe(joint_positions(fk_est), joint_positions(fk_gt));
          rows(it, 3) = ground_penetration(v_est);
        }
      }
      curve_rows[global] = rows;
    });
  }
  for (const auto& rows : curve_rows) curve_acc += rows;
  curve_acc /= static_cast<double>(indices.size());

  if (per_iteration) {
    per_iteration->resize(iterations + 1, curve_metrics + 1);
    for (int it = 0; it <= iterations; ++it) {
      (*per_iteration)(it, 0) = it;
      per_iteration->row(it).tail(curve_metrics) = curve_acc.row(it);
    }
  }
  if (per_iteration_columns) {
    if (dataset.task == Task::Face)
      *per_iteration_columns = {"iter", "data_term", "v2v_full", "mplpe", "pa_mplpe"};
    else
      *per_iteration_columns = {"iter", "data_term", "v2v_full", "mpjpe",
                                "ground_penetration"};
  }
  return report;
}

EvalReport evaluate_classic(const KinematicModel& model, const Dataset& dataset,
                            Split split, ClassicSolver solver, const Config& cfg,
                            const GaussianMixture* pose_gmm, int workers) {
  const auto indices = dataset.indices_of(split);
  if (indices.empty()) throw BadConfig("empty evaluation split");
  const Task task = dataset.task;

  BaselineEnergyOptions energy;
  if (task == Task::Hmd || task == Task::Body2D) {
    energy.weight_gravity = cfg.get_double("baseline.weight_gravity");
    if (pose_gmm) {
      energy.weight_gmm = cfg.get_double("baseline.weight_gmm");
      energy.pose_gmm = pose_gmm;
    }
  } else {
    energy.reg_weights = Eigen::VectorXd::Constant(
        model.layout(task).size(), cfg.get_double("baseline.face_reg"));
  }
  const LMOptions lm_opts = lm_options_from_config(cfg);

  EvalReport report;
  report.columns = metric_columns(task);
  report.values.resize(static_cast<Eigen::Index>(indices.size()),
                       static_cast<Eigen::Index>(report.columns.size()));

  parallel_for(static_cast<int>(indices.size()), workers, [&](int i) {
    const DatasetRecord& rec =
        dataset.records[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    const Eigen::VectorXd init = classic_init(model, rec.obs, cfg);
    FitTrace trace;
    if (solver == ClassicSolver::Lm) {
      trace = lm_fit(model, rec.obs, init, energy, lm_opts);
    } else {
      trace = gd_fit(model, rec.obs, init, energy, cfg.get_double("baseline.gd_step"),
                     cfg.get_int("baseline.gd_iters"));
    }
    const double data =
        task_residuals(model, trace.final_params, rec.obs, false).data_term();
    const auto row =
        instance_metrics(model, task, trace.final_params, rec.gt_params, data,
                         indices[static_cast<std::size_t>(i)]);
    for (std::size_t c = 0; c < row.size(); ++c)
      report.values(i, static_cast<Eigen::Index>(c)) = row[c];
  });
  return report;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void write_header(std::FILE* f, const std::vector<std::string>& columns,
                  std::uint64_t config_hash) {
  std::fprintf(f, "# config_hash=%016" PRIx64 "\n", config_hash);
  for (std::size_t c = 0; c < columns.size(); ++c)
    std::fprintf(f, "%s%s", columns[c].c_str(),
                 c + 1 == columns.size() ? "\n" : ",");
}

void write_row(std::FILE* f, const Eigen::VectorXd& row) {
  for (Eigen::Index c = 0; c < row.size(); ++c)
    std::fprintf(f, "%.17g%s", row[c], c + 1 == row.size() ? "\n" : ",");
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& rows, std::uint64_t config_hash,
               bool append_mean_row) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  write_header(f.get(), columns, config_hash);
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    write_row(f.get(), rows.row(r).transpose());
  if (append_mean_row && rows.rows() > 0) {
    Eigen::VectorXd mean = rows.colwise().mean().transpose();
    if (!columns.empty() && columns.front() == "index") mean[0] = -1.0;
    write_row(f.get(), mean);
  }
}

void write_history_csv(const std::string& path,
                       const std::vector<TrainHistoryRow>& rows,
                       std::uint64_t config_hash) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) << rows[i].epoch, rows[i].train_loss,
        rows[i].val_loss, rows[i].lr;
  write_csv(path, {"epoch", "train_loss", "val_loss", "lr"}, m, config_hash);
}

void write_fit_trace_csv(const std::string& path, const FitTrace& trace,
                         std::uint64_t config_hash) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(trace.rows.size()), 7);
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const FitTraceRow& r = trace.rows[i];
    m.row(static_cast<Eigen::Index>(i)) << r.iter, r.energy, r.data_term,
        r.gravity_term, r.gmm_term, r.reg_term, r.damping;
  }
  write_csv(path,
            {"iter", "energy", "data_term", "gravity_term", "gmm_term", "reg_term",
             "damping"},
            m, config_hash);
}

void write_fitter_diag_csv(const std::string& path,
                           const FitterTrajectory& trajectory,
                           std::uint64_t config_hash) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(trajectory.steps.size()) + 1, 6);
  m.row(0) << 0, trajectory.initial_data_term.mean(), 0.0, 0.0, 0.0, 0.0;
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    const StepDiagnostics& s = trajectory.steps[i];
    m.row(static_cast<Eigen::Index>(i) + 1) << static_cast<double>(i + 1),
        s.data_term, s.g_norm, s.lambda_norm, s.gamma_norm, s.delta_norm;
  }
  write_csv(path,
            {"iter", "data_term", "g_norm", "lambda_norm", "gamma_norm",
             "delta_norm"},
            m, config_hash);
}

}  // namespace mofit
