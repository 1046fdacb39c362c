#include "mofit/learned_fitter.hpp"

#include <cmath>

#include "mofit/container.hpp"
#include "mofit/errors.hpp"
#include "mofit/model_derivatives.hpp"
#include "mofit/parallel.hpp"

namespace mofit {

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd broadcast_raw(const Eigen::VectorXd& raw, int dim) {
  if (raw.size() == dim) return raw;
  if (raw.size() == 1) return Eigen::VectorXd::Constant(dim, raw[0]);
  throw ShapeMismatch("lambda/gamma head output has unexpected size");
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string update_rule_name(UpdateRule r) {
  switch (r) {
    case UpdateRule::LmLike: return "lm-like";
    case UpdateRule::Convex: return "convex";
    case UpdateRule::NormalizedConvex: return "normalized";
    case UpdateRule::NetworkOnly: return "network-only";
  }
  throw BadConfig("unknown update rule");
}

UpdateRule update_rule_from_name(const std::string& name) {
  if (name == "lm-like") return UpdateRule::LmLike;
  if (name == "convex") return UpdateRule::Convex;
  if (name == "normalized") return UpdateRule::NormalizedConvex;
  if (name == "network-only") return UpdateRule::NetworkOnly;
  throw BadConfig("unknown update rule: " + name);
}

std::string net_type_name(NetType t) { return t == NetType::Gru ? "gru" : "resmlp"; }

NetType net_type_from_name(const std::string& name) {
  if (name == "gru") return NetType::Gru;
  if (name == "resmlp") return NetType::ResMlp;
  throw BadConfig("unknown net type: " + name);
}

void FitterConfig::validate() const {
  if (theta_dim <= 0 || encoding_dim <= 0 || residual_dim <= 0)
    throw BadConfig("fitter dimensions not set");
  if (gru_units <= 0 || gru_layers <= 0 || mlp_hidden <= 0 || mlp_depth <= 0)
    throw BadConfig("invalid network sizes");
  if (iterations < 0) throw BadConfig("negative iteration count");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw BadConfig("invalid dropout");
}

// ---------------------------------------------------------------------------
// Network construction
// ---------------------------------------------------------------------------

void FitterNetworks::build(const FitterConfig& cfg) {
  cfg.validate();
  config = cfg;
  const int input_dim = 2 * cfg.theta_dim + cfg.encoding_dim;

  phi_init.resize(cfg.encoding_dim, cfg.mlp_hidden, cfg.mlp_depth, cfg.theta_dim,
                  cfg.use_layer_norm);
  if (cfg.net_type == NetType::Gru)
    phi_h.resize(cfg.encoding_dim, cfg.mlp_hidden, cfg.mlp_depth,
                 cfg.gru_layers * cfg.gru_units, cfg.use_layer_norm);

  const int copies = cfg.per_step_weights ? cfg.iterations : 1;
  steps.assign(static_cast<std::size_t>(copies), {});
  for (StepNets& s : steps) {
    if (cfg.net_type == NetType::Gru) {
      s.gru.resize(static_cast<std::size_t>(cfg.gru_layers));
      int cur = input_dim;
      for (auto& cell : s.gru) {
        cell.resize(cur, cfg.gru_units, cfg.use_layer_norm);
        cur = cfg.gru_units;
      }
    } else {
      s.resmlp.resize(input_dim, cfg.gru_units, 2);
    }
    s.head.resize(cfg.gru_units, cfg.theta_dim);
    if (cfg.shared_lambda_gamma) {
      s.lg_shared.resize(2 * cfg.residual_dim, cfg.mlp_hidden, cfg.mlp_depth,
                         2 * cfg.lg_dim(), cfg.use_layer_norm);
    } else {
      s.lg_lambda.resize(2 * cfg.residual_dim, cfg.mlp_hidden, cfg.mlp_depth,
                         cfg.lg_dim(), cfg.use_layer_norm);
      s.lg_gamma.resize(2 * cfg.residual_dim, cfg.mlp_hidden, cfg.mlp_depth,
                        cfg.lg_dim(), cfg.use_layer_norm);
    }
  }
}

void FitterNetworks::init_weights(std::uint64_t seed,
                                  const Eigen::VectorXd& theta_reference) {
  if (theta_reference.size() != config.theta_dim)
    throw ShapeMismatch("reference parameter size mismatch");
  Rng rng(seed);
  visit([&](const std::string& name, Tensor& t) {
    const bool is_norm = name.find(".scale") != std::string::npos ||
                         name.find(".offset") != std::string::npos;
    if (is_norm || t.value.rows() == 1) return;  // norms and biases keep init
    const bool is_head = name.find(".out.weight") != std::string::npos ||
                         name.find("head.weight") != std::string::npos;
    glorot_init(t, is_head ? 0.01 : 1.0, rng);
  });
  // The initializer regresses around the reference pose, and the gamma head
  // starts with a small positive descent rate.
  phi_init.output.bias.value.row(0) = theta_reference.transpose();
  for (StepNets& s : steps) {
    if (config.shared_lambda_gamma) {
      for (int k = 0; k < config.lg_dim(); ++k)
        s.lg_shared.output.bias.value(0, config.lg_dim() + k) = config.gamma_bias;
    } else {
      s.lg_gamma.output.bias.value.setConstant(config.gamma_bias);
    }
  }
}

void FitterNetworks::visit(const ParamVisitor& fn) {
  phi_init.visit("phi_init", fn);
  if (config.net_type == NetType::Gru) phi_h.visit("phi_h", fn);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string p = "step" + std::to_string(i);
    StepNets& s = steps[i];
    if (config.net_type == NetType::Gru) {
      for (std::size_t l = 0; l < s.gru.size(); ++l)
        s.gru[l].visit(p + ".gru" + std::to_string(l), fn);
    } else {
      s.resmlp.visit(p + ".resmlp", fn);
    }
    s.head.visit(p + ".head", fn);
    if (config.shared_lambda_gamma)
      s.lg_shared.visit(p + ".lg", fn);
    else {
      s.lg_lambda.visit(p + ".lg_lambda", fn);
      s.lg_gamma.visit(p + ".lg_gamma", fn);
    }
  }
}

std::vector<Tensor*> FitterNetworks::parameters() {
  std::vector<Tensor*> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

StepNets& FitterNetworks::step_nets(int n) {
  return steps[config.per_step_weights ? static_cast<std::size_t>(n) : 0];
}

const StepNets& FitterNetworks::step_nets(int n) const {
  return steps[config.per_step_weights ? static_cast<std::size_t>(n) : 0];
}

// ---------------------------------------------------------------------------
// Observation encoding
// ---------------------------------------------------------------------------

int encoding_dim(const KinematicModel& model, Task task) {
  switch (task) {
    case Task::Body2D: return 3 * model.num_joints();
    case Task::Hmd: return 12 * 3 + 15 * 2 + 2;
    case Task::Face: return 2 * static_cast<int>(model.landmark_indices.size());
  }
  throw BadConfig("unknown task");
}

std::vector<ResidualBlock> encoding_layout(const KinematicModel& model, Task task) {
  std::vector<ResidualBlock> blocks;
  switch (task) {
    case Task::Body2D:
      for (int j = 0; j < model.num_joints(); ++j)
        blocks.push_back({"keypoint_" + std::to_string(j) + "_xyc", 3 * j, 3});
      break;
    case Task::Hmd:
      blocks.push_back({"headset_transform", 0, 12});
      blocks.push_back({"left_wrist_transform", 12, 12});
      blocks.push_back({"right_wrist_transform", 24, 12});
      blocks.push_back({"left_fingertips", 36, 15});
      blocks.push_back({"right_fingertips", 51, 15});
      blocks.push_back({"visibility_flags", 66, 2});
      break;
    case Task::Face:
      for (std::size_t i = 0; i < model.landmark_indices.size(); ++i)
        blocks.push_back(
            {"landmark_" + std::to_string(i) + "_xy", static_cast<int>(2 * i), 2});
      break;
  }
  return blocks;
}

Eigen::VectorXd encode_observations(const KinematicModel& model,
                                    const ObservationSet& obs) {
  obs.validate(model);
  Eigen::VectorXd enc = Eigen::VectorXd::Zero(encoding_dim(model, obs.task));
  switch (obs.task) {
    case Task::Body2D: {
      for (int j = 0; j < model.num_joints(); ++j) {
        enc[3 * j + 0] = (obs.body2d.keypoints(j, 0) - 256.0) / 256.0;
        enc[3 * j + 1] = (obs.body2d.keypoints(j, 1) - 256.0) / 256.0;
        enc[3 * j + 2] = obs.body2d.confidence[j];
      }
      break;
    }
    case Task::Hmd: {
      enc.segment<12>(0) = flatten_transform(obs.hmd.headset);
      if (obs.hmd.visible_left) {
        enc.segment<12>(12) = flatten_transform(obs.hmd.wrist_left);
        for (int i = 0; i < 5; ++i)
          enc.segment<3>(36 + 3 * i) = obs.hmd.fingertips_left.row(i).transpose();
        enc[66] = 1.0;
      }
      if (obs.hmd.visible_right) {
        enc.segment<12>(24) = flatten_transform(obs.hmd.wrist_right);
        for (int i = 0; i < 5; ++i)
          enc.segment<3>(51 + 3 * i) = obs.hmd.fingertips_right.row(i).transpose();
        enc[67] = 1.0;
      }
      break;
    }
    case Task::Face: {
      const auto& K = obs.face.intrinsics;
      for (Eigen::Index i = 0; i < obs.face.landmarks.rows(); ++i) {
        enc[2 * i + 0] = (obs.face.landmarks(i, 0) - K.cx) / K.fx;
        enc[2 * i + 1] = (obs.face.landmarks(i, 1) - K.cy) / K.fy;
      }
      break;
    }
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Update rule
// ---------------------------------------------------------------------------

UpdateRuleResult update_rule_variant(UpdateRule kind, const Eigen::VectorXd& delta,
                                     const Eigen::VectorXd& g,
                                     const Eigen::VectorXd& lambda_raw,
                                     const Eigen::VectorXd& gamma_raw) {
  const int dim = static_cast<int>(delta.size());
  if (g.size() != dim) throw ShapeMismatch("update rule size mismatch");

  UpdateRuleResult out;
  if (kind == UpdateRule::NetworkOnly) {
    out.lambda = Eigen::VectorXd::Ones(dim);
    out.gamma = Eigen::VectorXd::Zero(dim);
    out.step =
        (out.lambda.array() * delta.array() - out.gamma.array() * g.array()).matrix();
    return out;
  }

  const Eigen::VectorXd lraw = broadcast_raw(lambda_raw, dim);
  const Eigen::VectorXd graw = broadcast_raw(gamma_raw, dim);
  out.gamma = graw.unaryExpr([](double x) { return softplus(x); });

  switch (kind) {
    case UpdateRule::LmLike:
      out.lambda = lraw;
      out.step =
          (out.lambda.array() * delta.array() - out.gamma.array() * g.array())
              .matrix();
      break;
    case UpdateRule::Convex: {
      out.lambda = lraw.unaryExpr([](double x) { return sigmoid(x); });
      out.step = (out.lambda.array() * delta.array() -
                  (1.0 - out.lambda.array()) * out.gamma.array() * g.array())
                     .matrix();
      break;
    }
    case UpdateRule::NormalizedConvex: {
      const double dn = delta.norm();
      const double gn = g.norm();
      if (dn < 1e-12 || gn < 1e-12)
        throw DegenerateInput("normalized update rule with near-zero direction");
      out.lambda = lraw.unaryExpr([](double x) { return sigmoid(x); });
      out.step = (out.gamma.array() *
                  (out.lambda.array() * delta.array() / dn -
                   (1.0 - out.lambda.array()) * g.array() / gn))
                     .matrix();
      break;
    }
    case UpdateRule::NetworkOnly:
      break;  // handled above
  }
  return out;
}

namespace {

// Backward of the update rule for one sample; g is a constant.
void update_rule_backward(UpdateRule kind, const Eigen::VectorXd& delta,
                          const Eigen::VectorXd& g,
                          const Eigen::VectorXd& lambda_raw,
                          const Eigen::VectorXd& gamma_raw,
                          const Eigen::VectorXd& du, Eigen::VectorXd& d_delta,
                          Eigen::VectorXd& d_lraw, Eigen::VectorXd& d_graw) {
  const int dim = static_cast<int>(delta.size());
  d_delta.setZero(dim);
  d_lraw.setZero(lambda_raw.size());
  d_graw.setZero(gamma_raw.size());
  if (kind == UpdateRule::NetworkOnly) {
    d_delta = du;
    return;
  }

  const Eigen::VectorXd lraw = broadcast_raw(lambda_raw, dim);
  const Eigen::VectorXd graw = broadcast_raw(gamma_raw, dim);
  const Eigen::VectorXd gamma = graw.unaryExpr([](double x) { return softplus(x); });
  const Eigen::VectorXd dgamma_draw =
      graw.unaryExpr([](double x) { return sigmoid(x); });

  Eigen::VectorXd d_lfull = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd d_gfull = Eigen::VectorXd::Zero(dim);

  switch (kind) {
    case UpdateRule::LmLike: {
      d_delta = (du.array() * lraw.array()).matrix();
      d_lfull = (du.array() * delta.array()).matrix();  // lambda is raw here
      d_gfull = (-du.array() * g.array() * dgamma_draw.array()).matrix();
      break;
    }
    case UpdateRule::Convex: {
      const Eigen::VectorXd lam = lraw.unaryExpr([](double x) { return sigmoid(x); });
      d_delta = (du.array() * lam.array()).matrix();
      d_lfull = (du.array() * (delta.array() + gamma.array() * g.array()) *
                 (lam.array() * (1.0 - lam.array())))
                    .matrix();
      d_gfull =
          (-du.array() * (1.0 - lam.array()) * g.array() * dgamma_draw.array())
              .matrix();
      break;
    }
    case UpdateRule::NormalizedConvex: {
      const double dn = delta.norm();
      const double gn = g.norm();
      if (dn < 1e-12 || gn < 1e-12)
        throw DegenerateInput("normalized update rule with near-zero direction");
      const Eigen::VectorXd lam = lraw.unaryExpr([](double x) { return sigmoid(x); });
      const Eigen::VectorXd dhat = delta / dn;
      const Eigen::VectorXd w = (du.array() * gamma.array() * lam.array()).matrix();
      d_delta = (w - dhat * dhat.dot(w)) / dn;
      d_lfull = (du.array() * gamma.array() * (dhat.array() + g.array() / gn) *
                 (lam.array() * (1.0 - lam.array())))
                    .matrix();
      d_gfull = (du.array() *
                 (lam.array() * dhat.array() - (1.0 - lam.array()) * g.array() / gn) *
                 dgamma_draw.array())
                    .matrix();
      break;
    }
    case UpdateRule::NetworkOnly:
      return;
  }
  if (d_lraw.size() == dim)
    d_lraw = d_lfull;
  else
    d_lraw[0] = d_lfull.sum();
  if (d_graw.size() == dim)
    d_graw = d_gfull;
  else
    d_graw[0] = d_gfull.sum();
}

// ---------------------------------------------------------------------------
// Ground-truth quantities and per-step losses
// ---------------------------------------------------------------------------

struct GtQuantities {
  Eigen::MatrixXd vertices;
  std::vector<RigidTransform> transforms;
  std::vector<Mat3> local_rotations;
  Vec3 translation;
};

GtQuantities gt_quantities(const KinematicModel& model, const ParamLayout& layout,
                           const Eigen::VectorXd& gt) {
  GtQuantities out;
  const FkResult fk = forward_kinematics(model, layout, gt);
  out.vertices = lbs_vertices(model, layout, gt, fk);
  out.transforms = fk.world;
  out.local_rotations = fk.local_rotations;
  out.translation = gt.segment<3>(layout.translation_offset());
  return out;
}

// L1 losses of one trajectory step against the ground truth; optionally the
// gradient w.r.t. the step's parameters.
double step_loss(const KinematicModel& model, const ParamLayout& layout,
                 const Eigen::VectorXd& theta, const GtQuantities& gt,
                 const TrainLossWeights& w, Eigen::VectorXd* grad_out) {
  const int J = model.num_joints();
  const int V = model.num_vertices();

  ModelDerivatives md;
  FkResult fk_plain;
  const bool with_grad = grad_out != nullptr;
  if (with_grad)
    md = fk_derivatives(model, layout, theta);
  else
    fk_plain = forward_kinematics(model, layout, theta);
  const FkResult& fk = with_grad ? md.fk : fk_plain;
  Eigen::MatrixXd verts;
  if (with_grad) {
    verts.resize(V, 3);
    for (int i = 0; i < V; ++i) verts.row(i) = lbs_point(md, model, i).transpose();
  } else {
    verts = lbs_vertices(model, layout, theta, fk);
  }

  double loss = 0.0;
  Eigen::MatrixXd vertex_grad;
  if (with_grad) vertex_grad.setZero(V, 3);

  // Mesh term.
  const Eigen::MatrixXd vdiff = verts - gt.vertices;
  loss += w.mesh * vdiff.cwiseAbs().sum();
  if (with_grad)
    vertex_grad += w.mesh * vdiff.unaryExpr([](double x) { return sign_of(x); });

  // Edge term.
  for (Eigen::Index e = 0; e < model.edges.rows(); ++e) {
    const int a = model.edges(e, 0);
    const int b = model.edges(e, 1);
    const Eigen::RowVector3d d =
        (verts.row(a) - verts.row(b)) - (gt.vertices.row(a) - gt.vertices.row(b));
    loss += w.edge * d.cwiseAbs().sum();
    if (with_grad) {
      const Eigen::RowVector3d s = d.unaryExpr([](double x) { return sign_of(x); });
      vertex_grad.row(a) += w.edge * s;
      vertex_grad.row(b) -= w.edge * s;
    }
  }

  // World transform and parent-relative rotation terms.
  std::vector<TransformAdjoint> transform_adj(static_cast<std::size_t>(J));
  std::vector<Mat3> rot_adj(static_cast<std::size_t>(J), Mat3::Zero());
  for (int j = 0; j < J; ++j) {
    const Mat3 dR = fk.world[j].R - gt.transforms[j].R;
    const Vec3 dt = fk.world[j].t - gt.transforms[j].t;
    loss += w.transform * (dR.cwiseAbs().sum() + dt.cwiseAbs().sum());
    const Mat3 dRl = fk.local_rotations[j] - gt.local_rotations[j];
    loss += w.rotation * dRl.cwiseAbs().sum();
    if (with_grad) {
      transform_adj[static_cast<std::size_t>(j)].R =
          w.transform * dR.unaryExpr([](double x) { return sign_of(x); });
      transform_adj[static_cast<std::size_t>(j)].t =
          w.transform * dt.unaryExpr([](double x) { return sign_of(x); });
      rot_adj[static_cast<std::size_t>(j)] =
          w.rotation * dRl.unaryExpr([](double x) { return sign_of(x); });
    }
  }

  // Root translation term.
  const Vec3 dtr = theta.segment<3>(layout.translation_offset()) - gt.translation;
  loss += w.translation * dtr.cwiseAbs().sum();

  if (with_grad) {
    *grad_out = model_pullback(md, model, &vertex_grad, &transform_adj, &rot_adj);
    for (int k = 0; k < 3; ++k)
      (*grad_out)[layout.translation_offset() + k] +=
          w.translation * sign_of(dtr[k]);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Unroll caches
// ---------------------------------------------------------------------------

struct TrunkCache {
  Eigen::MatrixXd input;
  std::vector<GruCell::Cache> gru;
  std::vector<Eigen::MatrixXd> dropout_masks;
  ResidualMlp::Cache res;
  Eigen::MatrixXd head_input;
};

struct StepCache {
  TrunkCache trunk;
  Mlp::Cache lg_shared, lg_lambda, lg_gamma;
  Eigen::MatrixXd lg_input;
  Eigen::MatrixXd delta, lambda_raw, gamma_raw;
  Eigen::MatrixXd g, r_prev, r_look;
  Eigen::MatrixXd theta_prev;
};

struct UnrollState {
  Eigen::MatrixXd encodings;
  Mlp::Cache phi_init_cache, phi_h_cache;
  std::vector<Eigen::MatrixXd> hidden;
  std::vector<StepCache> step_caches;
  std::vector<Eigen::MatrixXd> loss_grads;  // per step 0..N
};

}  // namespace

// ---------------------------------------------------------------------------
// Unrolled forward (+ optional backward)
// ---------------------------------------------------------------------------

UnrollOutput fitter_unroll(FitterNetworks& nets, const KinematicModel& model,
                           const std::vector<FitSample>& batch,
                           const TrainLossWeights& weights, bool training,
                           Rng* dropout_rng, bool accumulate_gradients,
                           const FrozenSignals* replay, const RigidTransform& calib,
                           int workers) {
  const FitterConfig& cfg = nets.config;
  const ParamLayout layout = model.layout(cfg.task);
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw BadConfig("empty batch");
  const int P = cfg.theta_dim;
  const int R = cfg.residual_dim;
  const int N = cfg.iterations;
  if (P != layout.size()) throw ShapeMismatch("fitter/model layout mismatch");
  const bool has_gt = batch.front().gt_params.size() > 0;
  if (accumulate_gradients && !has_gt)
    throw BadConfig("training requires ground-truth parameters");

  UnrollOutput out;
  UnrollState st;

  st.encodings.resize(B, cfg.encoding_dim);
  for (int b = 0; b < B; ++b)
    st.encodings.row(b) =
        encode_observations(model, batch[static_cast<std::size_t>(b)].obs)
            .transpose();

  Eigen::MatrixXd theta = nets.phi_init.forward(
      st.encodings, accumulate_gradients ? &st.phi_init_cache : nullptr);
  if (cfg.net_type == NetType::Gru) {
    const Eigen::MatrixXd h0 = nets.phi_h.forward(
        st.encodings, accumulate_gradients ? &st.phi_h_cache : nullptr);
    st.hidden.resize(static_cast<std::size_t>(cfg.gru_layers));
    for (int l = 0; l < cfg.gru_layers; ++l)
      st.hidden[static_cast<std::size_t>(l)] =
          h0.middleCols(l * cfg.gru_units, cfg.gru_units);
  }

  std::vector<GtQuantities> gts(static_cast<std::size_t>(B));
  if (has_gt)
    parallel_for(B, workers, [&](int b) {
      gts[static_cast<std::size_t>(b)] =
          gt_quantities(model, layout, batch[static_cast<std::size_t>(b)].gt_params);
    });

  st.loss_grads.assign(static_cast<std::size_t>(N) + 1, Eigen::MatrixXd());
  double total_loss = 0.0;
  auto add_step_loss = [&](int step_index, const Eigen::MatrixXd& thetas) {
    if (!has_gt) return;
    Eigen::MatrixXd& grads = st.loss_grads[static_cast<std::size_t>(step_index)];
    if (accumulate_gradients) grads.setZero(B, P);
    Eigen::VectorXd losses(B);
    parallel_for(B, workers, [&](int b) {
      Eigen::VectorXd grad;
      losses[b] = step_loss(model, layout, thetas.row(b).transpose(),
                            gts[static_cast<std::size_t>(b)], weights,
                            accumulate_gradients ? &grad : nullptr);
      if (accumulate_gradients) grads.row(b) = grad.transpose();
    });
    total_loss += losses.sum();
  };

  out.trajectory.thetas.push_back(theta);
  add_step_loss(0, theta);
  {
    Eigen::VectorXd d0(B);
    parallel_for(B, workers, [&](int b) {
      d0[b] = task_residuals(model, theta.row(b).transpose(),
                             batch[static_cast<std::size_t>(b)].obs, false, calib)
                  .data_term();
    });
    out.trajectory.initial_data_term = d0;
  }

  st.step_caches.resize(static_cast<std::size_t>(N));
  out.signals.g.resize(static_cast<std::size_t>(N));
  out.signals.r_prev.resize(static_cast<std::size_t>(N));
  out.signals.r_look.resize(static_cast<std::size_t>(N));
  Rng fallback_rng(0);
  Rng& drop_rng = dropout_rng ? *dropout_rng : fallback_rng;

  for (int n = 0; n < N; ++n) {
    StepCache& sc = st.step_caches[static_cast<std::size_t>(n)];
    StepNets& sn = nets.step_nets(n);
    sc.theta_prev = theta;

    // Residuals and the data-term gradient at theta_{n-1}; both are treated
    // as constants by the backward pass.
    sc.g.resize(B, P);
    sc.r_prev.resize(B, R);
    if (replay) {
      sc.g = replay->g[static_cast<std::size_t>(n)];
      sc.r_prev = replay->r_prev[static_cast<std::size_t>(n)];
    } else {
      parallel_for(B, workers, [&](int b) {
        const ResidualPacket packet =
            task_residuals(model, theta.row(b).transpose(),
                           batch[static_cast<std::size_t>(b)].obs, true, calib);
        sc.g.row(b) = packet.gradient.transpose();
        sc.r_prev.row(b) = packet.r.transpose();
      });
    }

    sc.trunk.input.resize(B, 2 * P + cfg.encoding_dim);
    sc.trunk.input << sc.g, theta, st.encodings;
    Eigen::MatrixXd trunk_out;
    if (cfg.net_type == NetType::Gru) {
      sc.trunk.gru.resize(static_cast<std::size_t>(cfg.gru_layers));
      sc.trunk.dropout_masks.resize(static_cast<std::size_t>(cfg.gru_layers));
      Eigen::MatrixXd x = sc.trunk.input;
      for (int l = 0; l < cfg.gru_layers; ++l) {
        const Eigen::MatrixXd h_next = sn.gru[static_cast<std::size_t>(l)].forward(
            x, st.hidden[static_cast<std::size_t>(l)],
            accumulate_gradients ? &sc.trunk.gru[static_cast<std::size_t>(l)]
                                 : nullptr);
        st.hidden[static_cast<std::size_t>(l)] = h_next;
        x = dropout(h_next, cfg.dropout_p, training, drop_rng,
                    &sc.trunk.dropout_masks[static_cast<std::size_t>(l)]);
      }
      trunk_out = x;
    } else {
      trunk_out = sn.resmlp.forward(sc.trunk.input,
                                    accumulate_gradients ? &sc.trunk.res : nullptr);
    }
    sc.trunk.head_input = trunk_out;
    sc.delta = sn.head.forward(trunk_out);

    const int L = cfg.lg_dim();
    sc.lambda_raw.setZero(B, L);
    sc.gamma_raw.setZero(B, L);
    if (cfg.update_rule != UpdateRule::NetworkOnly) {
      sc.r_look.resize(B, R);
      if (replay) {
        sc.r_look = replay->r_look[static_cast<std::size_t>(n)];
      } else {
        parallel_for(B, workers, [&](int b) {
          const Eigen::VectorXd look =
              theta.row(b).transpose() + sc.delta.row(b).transpose();
          sc.r_look.row(b) =
              task_residuals(model, look, batch[static_cast<std::size_t>(b)].obs,
                             false, calib)
                  .r.transpose();
        });
      }
      sc.lg_input.resize(B, 2 * R);
      sc.lg_input << sc.r_prev, sc.r_look;
      if (cfg.shared_lambda_gamma) {
        const Eigen::MatrixXd lg = sn.lg_shared.forward(
            sc.lg_input, accumulate_gradients ? &sc.lg_shared : nullptr);
        sc.lambda_raw = lg.leftCols(L);
        sc.gamma_raw = lg.rightCols(L);
      } else {
        sc.lambda_raw = sn.lg_lambda.forward(
            sc.lg_input, accumulate_gradients ? &sc.lg_lambda : nullptr);
        sc.gamma_raw = sn.lg_gamma.forward(
            sc.lg_input, accumulate_gradients ? &sc.lg_gamma : nullptr);
      }
    } else {
      sc.r_look.setZero(B, R);
    }

    Eigen::MatrixXd next(B, P);
    StepDiagnostics diag;
    for (int b = 0; b < B; ++b) {
      const UpdateRuleResult u = update_rule_variant(
          cfg.update_rule, sc.delta.row(b).transpose(), sc.g.row(b).transpose(),
          sc.lambda_raw.row(b).transpose(), sc.gamma_raw.row(b).transpose());
      next.row(b) = theta.row(b) + u.step.transpose();
      diag.g_norm += sc.g.row(b).norm();
      diag.lambda_norm += u.lambda.norm();
      diag.gamma_norm += u.gamma.norm();
      diag.delta_norm += sc.delta.row(b).norm();
    }
    theta = next;
    if (!theta.allFinite())
      throw NonFiniteState("non-finite parameters after fitter step " +
                           std::to_string(n + 1));

    Eigen::VectorXd dterm(B);
    parallel_for(B, workers, [&](int b) {
      dterm[b] = task_residuals(model, theta.row(b).transpose(),
                                batch[static_cast<std::size_t>(b)].obs, false, calib)
                     .data_term();
    });
    diag.data_term = dterm.mean();
    diag.g_norm /= B;
    diag.lambda_norm /= B;
    diag.gamma_norm /= B;
    diag.delta_norm /= B;
    out.trajectory.steps.push_back(diag);
    out.trajectory.thetas.push_back(theta);
    add_step_loss(n + 1, theta);

    out.signals.g[static_cast<std::size_t>(n)] = sc.g;
    out.signals.r_prev[static_cast<std::size_t>(n)] = sc.r_prev;
    out.signals.r_look[static_cast<std::size_t>(n)] = sc.r_look;
  }

  out.loss = has_gt ? total_loss / B : 0.0;
  if (!std::isfinite(out.loss)) throw NonFiniteState("non-finite training loss");
  if (!accumulate_gradients) return out;

  // Backward pass; gradients stop at g and at the residual head inputs.
  const double inv_b = 1.0 / B;
  Eigen::MatrixXd d_theta = st.loss_grads[static_cast<std::size_t>(N)] * inv_b;
  std::vector<Eigen::MatrixXd> d_hidden;
  if (cfg.net_type == NetType::Gru)
    d_hidden.assign(static_cast<std::size_t>(cfg.gru_layers),
                    Eigen::MatrixXd::Zero(B, cfg.gru_units));

  for (int n = N - 1; n >= 0; --n) {
    StepCache& sc = st.step_caches[static_cast<std::size_t>(n)];
    StepNets& sn = nets.step_nets(n);
    const int L = cfg.lg_dim();

    Eigen::MatrixXd d_delta(B, P);
    Eigen::MatrixXd d_lraw = Eigen::MatrixXd::Zero(B, L);
    Eigen::MatrixXd d_graw = Eigen::MatrixXd::Zero(B, L);
    for (int b = 0; b < B; ++b) {
      Eigen::VectorXd dd, dl, dg;
      update_rule_backward(cfg.update_rule, sc.delta.row(b).transpose(),
                           sc.g.row(b).transpose(), sc.lambda_raw.row(b).transpose(),
                           sc.gamma_raw.row(b).transpose(),
                           d_theta.row(b).transpose(), dd, dl, dg);
      d_delta.row(b) = dd.transpose();
      d_lraw.row(b) = dl.transpose();
      d_graw.row(b) = dg.transpose();
    }

    if (cfg.update_rule != UpdateRule::NetworkOnly) {
      if (cfg.shared_lambda_gamma) {
        Eigen::MatrixXd dlg(B, 2 * L);
        dlg << d_lraw, d_graw;
        sn.lg_shared.backward(sc.lg_shared, dlg);
      } else {
        sn.lg_lambda.backward(sc.lg_lambda, d_lraw);
        sn.lg_gamma.backward(sc.lg_gamma, d_graw);
      }
    }

    const Eigen::MatrixXd d_trunk_out = sn.head.backward(sc.trunk.head_input, d_delta);
    Eigen::MatrixXd d_input;
    if (cfg.net_type == NetType::Gru) {
      Eigen::MatrixXd d_feed = d_trunk_out;
      for (int l = cfg.gru_layers - 1; l >= 0; --l) {
        const Eigen::MatrixXd dh_total =
            (d_feed.array() *
             sc.trunk.dropout_masks[static_cast<std::size_t>(l)].array())
                .matrix() +
            d_hidden[static_cast<std::size_t>(l)];
        auto [dx, dh_prev] = sn.gru[static_cast<std::size_t>(l)].backward(
            sc.trunk.gru[static_cast<std::size_t>(l)], dh_total);
        d_hidden[static_cast<std::size_t>(l)] = dh_prev;
        if (l == 0)
          d_input = dx;
        else
          d_feed = dx;
      }
    } else {
      d_input = sn.resmlp.backward(sc.trunk.res, d_trunk_out);
    }

    // Identity path plus the trunk's theta slice; g and encoding slices are
    // frozen. The direct loss at theta_n joins when stepping past it.
    d_theta += d_input.middleCols(P, P);
    if (n > 0) d_theta += st.loss_grads[static_cast<std::size_t>(n)] * inv_b;
  }
  d_theta += st.loss_grads[0] * inv_b;

  nets.phi_init.backward(st.phi_init_cache, d_theta);
  if (cfg.net_type == NetType::Gru) {
    Eigen::MatrixXd dh0(B, cfg.gru_layers * cfg.gru_units);
    for (int l = 0; l < cfg.gru_layers; ++l)
      dh0.middleCols(l * cfg.gru_units, cfg.gru_units) =
          d_hidden[static_cast<std::size_t>(l)];
    nets.phi_h.backward(st.phi_h_cache, dh0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference and loss helpers
// ---------------------------------------------------------------------------

FitterTrajectory run_fitter(const FitterNetworks& nets, const KinematicModel& model,
                            const std::vector<FitSample>& batch, int iterations,
                            const RigidTransform& calib, int workers) {
  FitterNetworks& mutable_nets = const_cast<FitterNetworks&>(nets);
  const int saved = mutable_nets.config.iterations;
  if (nets.config.per_step_weights && iterations > saved)
    throw BadConfig("per-step weights cannot run extra iterations");
  mutable_nets.config.iterations = iterations;
  UnrollOutput out;
  try {
    out = fitter_unroll(mutable_nets, model, batch, {}, /*training=*/false,
                        /*dropout_rng=*/nullptr, /*accumulate_gradients=*/false,
                        nullptr, calib, workers);
  } catch (...) {
    mutable_nets.config.iterations = saved;
    throw;
  }
  mutable_nets.config.iterations = saved;
  return out.trajectory;
}

double training_loss(const KinematicModel& model, const ParamLayout& layout,
                     const std::vector<Eigen::VectorXd>& trajectory,
                     const Eigen::VectorXd& gt_params,
                     const TrainLossWeights& weights) {
  const GtQuantities gt = gt_quantities(model, layout, gt_params);
  double total = 0.0;
  for (const auto& theta : trajectory)
    total += step_loss(model, layout, theta, gt, weights, nullptr);
  return total;
}

double training_step_loss(const KinematicModel& model, const ParamLayout& layout,
                          const Eigen::VectorXd& theta,
                          const Eigen::VectorXd& gt_params,
                          const TrainLossWeights& weights, Eigen::VectorXd* grad) {
  const GtQuantities gt = gt_quantities(model, layout, gt_params);
  return step_loss(model, layout, theta, gt, weights, grad);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train_fitter(FitterNetworks& nets, const KinematicModel& model,
                         const std::vector<FitSample>& train_set,
                         const std::vector<FitSample>& val_set,
                         const TrainConfig& config, const RigidTransform& calib) {
  if (train_set.empty()) throw BadConfig("empty training set");
  if (config.epochs < 0 || config.batch_size <= 0 || config.lr <= 0.0)
    throw BadConfig("invalid training configuration");

  AdamOptions adam_opts;
  adam_opts.lr = config.lr;
  Adam adam(nets.parameters(), adam_opts);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<Tensor*> params = nets.parameters();
  std::vector<Eigen::MatrixXd> best_weights;

  auto eval_loss = [&](const std::vector<FitSample>& set) {
    if (set.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t at = 0; at < set.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(set.size(), at + static_cast<std::size_t>(config.batch_size));
      const std::vector<FitSample> batch(set.begin() + static_cast<long>(at),
                                         set.begin() + static_cast<long>(end));
      const UnrollOutput out =
          fitter_unroll(nets, model, batch, config.loss_weights, false, nullptr,
                        false, nullptr, calib, config.workers);
      total += out.loss * static_cast<double>(batch.size());
    }
    return total / static_cast<double>(set.size());
  };

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (epoch == config.anneal_epoch + 1)
      adam.set_lr(adam.lr() * config.anneal_factor);

    Rng shuffle_rng(derive_seed(config.seed, 1000003ULL * static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
      std::vector<FitSample> batch;
      batch.reserve(end - at);
      for (std::size_t i = at; i < end; ++i)
        batch.push_back(train_set[static_cast<std::size_t>(order[i])]);

      Rng dropout_rng(derive_seed(
          config.seed, 7919ULL * static_cast<std::uint64_t>(epoch) +
                           static_cast<std::uint64_t>(batches)));
      adam.zero_grad();
      try {
        const UnrollOutput out =
            fitter_unroll(nets, model, batch, config.loss_weights, true,
                          &dropout_rng, true, nullptr, calib, config.workers);
        epoch_loss += out.loss;
        adam.step();
      } catch (const NonFiniteState& e) {
        throw NonFiniteState(std::string(e.what()) + " (epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(batches) + ")");
      }
      ++batches;
    }
    epoch_loss /= std::max(batches, 1);

    const double val_loss = eval_loss(val_set);
    result.history.push_back({epoch, epoch_loss, val_loss, adam.lr()});
    const double tracked = val_set.empty() ? epoch_loss : val_loss;
    if (tracked < result.best_val_loss) {
      result.best_val_loss = tracked;
      result.best_epoch = epoch;
      best_weights.clear();
      for (const Tensor* t : params) best_weights.push_back(t->value);
    }
  }

  // Leave the best-validation weights in place.
  if (!best_weights.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = best_weights[i];
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> config_words(const FitterConfig& c,
                                       std::uint64_t config_hash) {
  return {1,
          static_cast<std::int64_t>(c.task),
          c.theta_dim,
          c.encoding_dim,
          c.residual_dim,
          c.gru_units,
          c.gru_layers,
          c.mlp_hidden,
          c.mlp_depth,
          c.iterations,
          static_cast<std::int64_t>(c.update_rule),
          static_cast<std::int64_t>(c.net_type),
          c.per_step_weights ? 1 : 0,
          c.vector_lambda_gamma ? 1 : 0,
          c.shared_lambda_gamma ? 1 : 0,
          c.use_layer_norm ? 1 : 0,
          static_cast<std::int64_t>(config_hash)};
}

}  // namespace

void save_checkpoint(const FitterNetworks& nets, const std::string& path,
                     std::int64_t step, const Adam* adam) {
  Container c;
  c.put_ints("meta", {1, step, static_cast<std::int64_t>(nets.config_hash),
                      static_cast<std::int64_t>(nets.data_hash)});
  c.put_ints("fitter_config", config_words(nets.config, nets.config_hash));
  c.put_vector("fitter_config_real",
               (Eigen::VectorXd(2) << nets.config.dropout_p, nets.config.gamma_bias)
                   .finished());
  FitterNetworks& mutable_nets = const_cast<FitterNetworks&>(nets);
  mutable_nets.visit([&](const std::string& name, Tensor& t) {
    c.put_matrix("param/" + name, t.value);
  });
  if (adam) {
    c.put_ints("adam/step", {adam->step_count()});
    for (std::size_t i = 0; i < adam->first_moments().size(); ++i) {
      c.put_matrix("adam/m/" + std::to_string(i), adam->first_moments()[i]);
      c.put_matrix("adam/v/" + std::to_string(i), adam->second_moments()[i]);
    }
  }
  c.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const Container c = Container::load(path);
  const auto meta = c.get_ints("meta");
  if (meta.size() != 4 || meta[0] != 1)
    throw FormatError("unsupported checkpoint version");
  const auto words = c.get_ints("fitter_config");
  if (words.size() != 17 || words[0] != 1)
    throw FormatError("unsupported fitter config record");
  const Eigen::VectorXd reals = c.get_vector("fitter_config_real");

  FitterConfig cfg;
  cfg.task = static_cast<Task>(words[1]);
  cfg.theta_dim = static_cast<int>(words[2]);
  cfg.encoding_dim = static_cast<int>(words[3]);
  cfg.residual_dim = static_cast<int>(words[4]);
  cfg.gru_units = static_cast<int>(words[5]);
  cfg.gru_layers = static_cast<int>(words[6]);
  cfg.mlp_hidden = static_cast<int>(words[7]);
  cfg.mlp_depth = static_cast<int>(words[8]);
  cfg.iterations = static_cast<int>(words[9]);
  cfg.update_rule = static_cast<UpdateRule>(words[10]);
  cfg.net_type = static_cast<NetType>(words[11]);
  cfg.per_step_weights = words[12] != 0;
  cfg.vector_lambda_gamma = words[13] != 0;
  cfg.shared_lambda_gamma = words[14] != 0;
  cfg.use_layer_norm = words[15] != 0;
  cfg.dropout_p = reals[0];
  cfg.gamma_bias = reals[1];

  Checkpoint out;
  out.nets.build(cfg);
  out.nets.config_hash = static_cast<std::uint64_t>(meta[2]);
  out.nets.data_hash = static_cast<std::uint64_t>(meta[3]);
  out.step = meta[1];
  out.nets.visit([&](const std::string& name, Tensor& t) {
    const Eigen::MatrixXd value = c.get_matrix("param/" + name);
    if (value.rows() != t.value.rows() || value.cols() != t.value.cols())
      throw FormatError("checkpoint tensor shape mismatch: " + name);
    t.value = value;
  });
  if (c.has("adam/step")) {
    out.has_adam = true;
    out.step = c.get_ints("adam/step")[0];
    std::size_t i = 0;
    while (c.has("adam/m/" + std::to_string(i))) {
      out.adam_m.push_back(c.get_matrix("adam/m/" + std::to_string(i)));
      out.adam_v.push_back(c.get_matrix("adam/v/" + std::to_string(i)));
      ++i;
    }
  }
  return out;
}

}  // namespace mofit
