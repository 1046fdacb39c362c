#pragma once

#include <Eigen/Core>
#include <vector>

#include "mofit/priors.hpp"
#include "mofit/residuals.hpp"

namespace mofit {

struct LMOptions {
  int max_iters = 100;
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double min_diag = 1e-8;
  double diag_floor_rel = 1e-2;    // damping diagonal floor relative to max
  double convergence_tol = 1e-10;  // relative decrease of the energy
  int max_rejects = 30;            // consecutive rejections before giving up

  void validate() const;
};

// Solves (J^T J + damping * diag(J^T J)) step = J^T r. The damping diagonal
// is clamped below by min_diag and by diag_floor_rel times its own largest
// entry; without the relative clamp, near-null directions of underdetermined
// fits move essentially undamped. The caller applies theta <- theta - step.
Eigen::VectorXd lm_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& r,
                        double damping, double min_diag = 1e-8,
                        double diag_floor_rel = 1e-2);

// Composite baseline energy: data term plus optional gravity, GMM pose prior
// and per-parameter quadratic regularization.
struct BaselineEnergyOptions {
  double weight_gravity = 0.0;
  double weight_gmm = 0.0;
  const GaussianMixture* pose_gmm = nullptr;  // over the 6D rotation block
  Eigen::VectorXd reg_weights;                // per-parameter, empty = off
};

struct EnergyEval {
  double value = 0.0;
  double data_term = 0.0;
  double gravity_term = 0.0;  // weighted
  double gmm_term = 0.0;      // weighted
  double reg_term = 0.0;      // weighted
  Eigen::VectorXd gradient;
};

EnergyEval baseline_energy(const KinematicModel& model, const ObservationSet& obs,
                           const Eigen::VectorXd& theta,
                           const BaselineEnergyOptions& opts,
                           const RigidTransform& calib = default_hmd_calibration());

struct FitTraceRow {
  int iter = 0;
  double energy = 0.0;
  double data_term = 0.0;
  double gravity_term = 0.0;
  double gmm_term = 0.0;
  double reg_term = 0.0;
  double damping = 0.0;
};

struct FitTrace {
  std::vector<FitTraceRow> rows;  // row 0 is the initial state
  Eigen::VectorXd final_params;
  bool converged = false;
  int rejected_steps = 0;
};

// Damped Gauss-Newton with multiplicative damping adaptation. Priors enter the
// normal system as extra residual blocks; accepted iterates never increase
// the energy.
FitTrace lm_fit(const KinematicModel& model, const ObservationSet& obs,
                const Eigen::VectorXd& theta0, const BaselineEnergyOptions& energy_opts,
                const LMOptions& opts,
                const RigidTransform& calib = default_hmd_calibration());

// Plain gradient descent on the same energy.
FitTrace gd_fit(const KinematicModel& model, const ObservationSet& obs,
                const Eigen::VectorXd& theta0, const BaselineEnergyOptions& energy_opts,
                double step_size, int iterations,
                const RigidTransform& calib = default_hmd_calibration());

}  // namespace mofit
