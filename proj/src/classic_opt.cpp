#include "mofit/classic_opt.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mofit/errors.hpp"

namespace mofit {

void LMOptions::validate() const {
  if (max_iters < 0 || initial_damping < 0.0 || min_diag <= 0.0 ||
      convergence_tol < 0.0 || damping_up < 1.0 || damping_down < 1.0 ||
      max_rejects < 1)
    throw BadConfig("invalid LM options");
}

Eigen::VectorXd lm_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& r,
                        double damping, double min_diag, double diag_floor_rel) {
  if (J.rows() != r.size()) throw ShapeMismatch("jacobian/residual size mismatch");
  if (damping < 0.0 || min_diag <= 0.0 || diag_floor_rel < 0.0)
    throw BadConfig("invalid damping");
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  const double diag_max = JtJ.diagonal().maxCoeff();
  Eigen::MatrixXd A = JtJ;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    A(i, i) += damping * std::max({JtJ(i, i), min_diag, diag_floor_rel * diag_max});
  const Eigen::VectorXd b = J.transpose() * r;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw SingularSystem("damped normal system is not positive-definite");
  return llt.solve(b);
}

namespace {

// Extended residual system: data residuals plus prior blocks, so the damped
// normal equations see the full energy.
struct ExtendedSystem {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
};

int rotation_block_size(const ParamLayout& layout) { return 6 * layout.joints; }

// Canonicalizes every 6D block (decode -> re-encode). The rotation, and with
// it the energy, is unchanged, but raw-coordinate drift along the
// representation's null directions is removed, which keeps diag(J^T J)
// usable as a damping metric.
Eigen::VectorXd renormalize_rotations(const ParamLayout& layout,
                                      const Eigen::VectorXd& theta) {
  Eigen::VectorXd out = theta;
  for (int j = 0; j < layout.joints; ++j) {
    const Vec6 block = theta.segment<6>(layout.rot_offset(j));
    out.segment<6>(layout.rot_offset(j)) = matrix_to_rot6d(rot6d_to_matrix(block));
  }
  return out;
}

ExtendedSystem build_system(const KinematicModel& model, const ObservationSet& obs,
                            const Eigen::VectorXd& theta,
                            const BaselineEnergyOptions& opts,
                            const RigidTransform& calib) {
  const ParamLayout layout = model.layout(obs.task);
  const ResidualPacket data = task_residuals(model, theta, obs, true, calib);
  const int P = layout.size();

  int extra = 0;
  if (opts.weight_gravity > 0.0) extra += 3;
  if (opts.weight_gmm > 0.0 && opts.pose_gmm) extra += opts.pose_gmm->dim();
  if (opts.reg_weights.size() > 0) extra += P;

  ExtendedSystem sys;
  sys.r.setZero(data.r.size() + extra);
  sys.J.setZero(data.r.size() + extra, P);
  sys.r.head(data.r.size()) = data.r;
  sys.J.topRows(data.r.size()) = data.jacobian;
  int at = static_cast<int>(data.r.size());

  if (opts.weight_gravity > 0.0) {
    // Sum of squares of the block equals weight * (1 - cos(axis, up)).
    const Vec6 root = theta.segment<6>(layout.rot_offset(0));
    const Mat3 R = rot6d_to_matrix(root);
    const Vec3 axis = R.row(1).transpose();
    const double n = axis.norm();
    const Vec3 up(0.0, 1.0, 0.0);
    const double s = std::sqrt(opts.weight_gravity / 2.0);
    sys.r.segment<3>(at) = s * (axis / n - up);
    const Mat3 d_unit = (Mat3::Identity() - (axis / n) * (axis / n).transpose()) / n;
    const auto decode = rot6d_to_matrix_jacobian(root);
    sys.J.block(at, layout.rot_offset(0), 3, 6) = s * d_unit * decode.middleRows(3, 3);
    at += 3;
  }
  if (opts.weight_gmm > 0.0 && opts.pose_gmm) {
    const int d = opts.pose_gmm->dim();
    if (d != rotation_block_size(layout))
      throw ShapeMismatch("pose GMM dimension must match the rotation block");
    Eigen::VectorXd rows;
    Eigen::MatrixXd jac;
    gmm_prior_residual(theta.head(d), *opts.pose_gmm, opts.weight_gmm, rows, jac);
    sys.r.segment(at, d) = rows;
    sys.J.block(at, 0, d, d) = jac;
    at += d;
  }
  if (opts.reg_weights.size() > 0) {
    if (opts.reg_weights.size() != P)
      throw ShapeMismatch("regularization weights must match the parameter count");
    for (int i = 0; i < P; ++i) {
      const double s = std::sqrt(std::max(opts.reg_weights[i], 0.0));
      sys.r[at + i] = s * theta[i];
      sys.J(at + i, i) = s;
    }
  }
  // The solver convention is theta <- theta - step for r = target - model;
  // prior blocks are model-side quantities, so their rows flip sign.
  const int data_rows = static_cast<int>(data.r.size());
  sys.r.tail(sys.r.size() - data_rows) *= -1.0;
  return sys;
}

}  // namespace

EnergyEval baseline_energy(const KinematicModel& model, const ObservationSet& obs,
                           const Eigen::VectorXd& theta,
                           const BaselineEnergyOptions& opts,
                           const RigidTransform& calib) {
  const ParamLayout layout = model.layout(obs.task);
  const ResidualPacket data = task_residuals(model, theta, obs, true, calib);

  EnergyEval out;
  out.data_term = data.data_term();
  out.gradient = data.gradient;

  if (opts.weight_gravity > 0.0) {
    const PriorEval g = gravity_loss(model, layout, theta);
    out.gravity_term = opts.weight_gravity * g.value;
    out.gradient += opts.weight_gravity * g.gradient;
  }
  if (opts.weight_gmm > 0.0 && opts.pose_gmm) {
    const int d = opts.pose_gmm->dim();
    if (d != rotation_block_size(layout))
      throw ShapeMismatch("pose GMM dimension must match the rotation block");
    const PriorEval g = gmm_prior(theta.head(d), *opts.pose_gmm);
    out.gmm_term = opts.weight_gmm * g.value;
    out.gradient.head(d) += opts.weight_gmm * g.gradient;
  }
  if (opts.reg_weights.size() > 0) {
    if (opts.reg_weights.size() != layout.size())
      throw ShapeMismatch("regularization weights must match the parameter count");
    out.reg_term = (opts.reg_weights.array() * theta.array().square()).sum();
    out.gradient += 2.0 * (opts.reg_weights.array() * theta.array()).matrix();
  }
  out.value = out.data_term + out.gravity_term + out.gmm_term + out.reg_term;
  return out;
}

FitTrace lm_fit(const KinematicModel& model, const ObservationSet& obs,
                const Eigen::VectorXd& theta0, const BaselineEnergyOptions& energy_opts,
                const LMOptions& opts, const RigidTransform& calib) {
  opts.validate();
  Eigen::VectorXd theta = theta0;
  double damping = opts.initial_damping;

  FitTrace trace;
  EnergyEval current = baseline_energy(model, obs, theta, energy_opts, calib);
  trace.rows.push_back({0, current.value, current.data_term, current.gravity_term,
                        current.gmm_term, current.reg_term, damping});

  int iter = 0;
  int rejects_in_a_row = 0;
  bool done = false;
  while (!done && iter < opts.max_iters) {
    if (current.value <= 1e-24) {
      trace.converged = true;
      break;
    }
    const ExtendedSystem sys = build_system(model, obs, theta, energy_opts, calib);
    bool accepted = false;
    while (!accepted && !done) {
      Eigen::VectorXd step;
      try {
        step = lm_step(sys.J, sys.r, damping, opts.min_diag, opts.diag_floor_rel);
      } catch (const SingularSystem&) {
        if (damping < opts.min_diag) {
          damping = std::max(opts.initial_damping, opts.min_diag);
          continue;
        }
        throw;
      }
      Eigen::VectorXd candidate = theta - step;
      bool candidate_valid = true;
      try {
        candidate = renormalize_rotations(model.layout(obs.task), candidate);
      } catch (const DegenerateInput&) {
        candidate_valid = false;  // collapsed 6D block; treat as a rejection
      }
      EnergyEval next;
      if (candidate_valid)
        next = baseline_energy(model, obs, candidate, energy_opts, calib);
      if (candidate_valid && next.value < current.value) {
        const double decrease =
            (current.value - next.value) / std::max(current.value, 1e-30);
        theta = candidate;
        current = next;
        damping = std::max(damping / opts.damping_down, 1e-12);
        rejects_in_a_row = 0;
        ++iter;
        trace.rows.push_back({iter, current.value, current.data_term,
                              current.gravity_term, current.gmm_term,
                              current.reg_term, damping});
        accepted = true;
        if (decrease < opts.convergence_tol) {
          trace.converged = true;
          done = true;
        }
      } else {
        damping = std::min(std::max(damping, 1e-12) * opts.damping_up, 1e16);
        ++trace.rejected_steps;
        if (++rejects_in_a_row >= opts.max_rejects) {
          trace.converged = true;
          done = true;
        }
      }
    }
  }
  trace.final_params = theta;
  return trace;
}

FitTrace gd_fit(const KinematicModel& model, const ObservationSet& obs,
                const Eigen::VectorXd& theta0, const BaselineEnergyOptions& energy_opts,
                double step_size, int iterations, const RigidTransform& calib) {
  if (iterations < 0) throw BadConfig("negative iteration count");
  Eigen::VectorXd theta = theta0;
  FitTrace trace;
  EnergyEval current = baseline_energy(model, obs, theta, energy_opts, calib);
  trace.rows.push_back({0, current.value, current.data_term, current.gravity_term,
                        current.gmm_term, current.reg_term, 0.0});
  for (int k = 1; k <= iterations; ++k) {
    theta -= step_size * current.gradient;
    current = baseline_energy(model, obs, theta, energy_opts, calib);
    trace.rows.push_back({k, current.value, current.data_term, current.gravity_term,
                          current.gmm_term, current.reg_term, 0.0});
  }
  trace.final_params = theta;
  return trace;
}

}  // namespace mofit
