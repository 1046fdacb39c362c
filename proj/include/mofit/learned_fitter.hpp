#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mofit/neural.hpp"
#include "mofit/residuals.hpp"

namespace mofit {

enum class UpdateRule { LmLike, Convex, NormalizedConvex, NetworkOnly };
enum class NetType { Gru, ResMlp };

std::string update_rule_name(UpdateRule r);
UpdateRule update_rule_from_name(const std::string& name);
std::string net_type_name(NetType t);
NetType net_type_from_name(const std::string& name);

struct FitterConfig {
  Task task = Task::Hmd;
  int theta_dim = 0;
  int encoding_dim = 0;
  int residual_dim = 0;
  int gru_units = 1024;
  int gru_layers = 2;
  int mlp_hidden = 256;
  int mlp_depth = 2;
  int iterations = 5;
  UpdateRule update_rule = UpdateRule::LmLike;
  NetType net_type = NetType::Gru;
  bool per_step_weights = false;
  bool vector_lambda_gamma = true;
  bool shared_lambda_gamma = true;
  bool use_layer_norm = true;
  double dropout_p = 0.5;
  double gamma_bias = -4.0;  // softplus(-4) starts the descent rate near 0.018

  int lg_dim() const { return vector_lambda_gamma ? theta_dim : 1; }
  void validate() const;
};

// One copy of the per-iteration networks. Shared-weight mode keeps a single
// copy; per-step mode keeps `iterations` copies of f and the lambda/gamma head
// (the initializers are always shared).
struct StepNets {
  std::vector<GruCell> gru;
  ResidualMlp resmlp;
  Linear head;
  Mlp lg_shared;          // [r_prev, r_look] -> [lambda_raw, gamma_raw]
  Mlp lg_lambda, lg_gamma;  // separate-head ablation
};

struct FitterNetworks {
  FitterConfig config;
  Mlp phi_init;  // encoding -> theta_0
  Mlp phi_h;     // encoding -> initial hidden states (gru mode)
  std::vector<StepNets> steps;
  std::uint64_t config_hash = 0;  // full training configuration
  std::uint64_t data_hash = 0;    // lineage: hash of the training dataset

  void build(const FitterConfig& cfg);
  void init_weights(std::uint64_t seed, const Eigen::VectorXd& theta_reference);
  void visit(const ParamVisitor& fn);
  std::vector<Tensor*> parameters();
  StepNets& step_nets(int n);
  const StepNets& step_nets(int n) const;
};

// Task-specific fixed-length observation encoding with a documented layout;
// invisible HMD blocks are zeroed.
Eigen::VectorXd encode_observations(const KinematicModel& model,
                                    const ObservationSet& obs);
int encoding_dim(const KinematicModel& model, Task task);
std::vector<ResidualBlock> encoding_layout(const KinematicModel& model, Task task);

// Update-rule application on raw head outputs. gamma passes through softplus;
// the convex variants squash lambda through a sigmoid.
struct UpdateRuleResult {
  Eigen::VectorXd step;
  Eigen::VectorXd lambda;  // post-activation, broadcast to theta_dim
  Eigen::VectorXd gamma;
};
UpdateRuleResult update_rule_variant(UpdateRule kind, const Eigen::VectorXd& delta,
                                     const Eigen::VectorXd& g,
                                     const Eigen::VectorXd& lambda_raw,
                                     const Eigen::VectorXd& gamma_raw);

struct FitSample {
  ObservationSet obs;
  Eigen::VectorXd gt_params;  // empty when unknown
};

struct StepDiagnostics {
  double data_term = 0.0;  // mean over the batch, at the step's output
  double g_norm = 0.0;
  double lambda_norm = 0.0;
  double gamma_norm = 0.0;
  double delta_norm = 0.0;
};

struct FitterTrajectory {
  std::vector<Eigen::MatrixXd> thetas;    // N+1 matrices, batch x theta_dim
  std::vector<StepDiagnostics> steps;     // N entries
  Eigen::VectorXd initial_data_term;      // per sample, at theta_0
};

// Algorithm entry point: theta_0 = phi_init(enc), h_0 = phi_h(enc), then N
// update-rule iterations. Inference mode (no dropout, no caches).
FitterTrajectory run_fitter(const FitterNetworks& nets, const KinematicModel& model,
                            const std::vector<FitSample>& batch, int iterations,
                            const RigidTransform& calib = default_hmd_calibration(),
                            int workers = 1);

struct TrainLossWeights {
  double mesh = 1000.0;
  double edge = 1000.0;
  double transform = 100.0;
  double rotation = 1.0;
  double translation = 100.0;
};

// Per-step L1 losses between a trajectory entry and the ground truth,
// summed over steps 0..N (per sample).
double training_loss(const KinematicModel& model, const ParamLayout& layout,
                     const std::vector<Eigen::VectorXd>& trajectory,
                     const Eigen::VectorXd& gt_params,
                     const TrainLossWeights& weights);

// Loss of a single trajectory entry, optionally with its analytic gradient.
double training_step_loss(const KinematicModel& model, const ParamLayout& layout,
                          const Eigen::VectorXd& theta,
                          const Eigen::VectorXd& gt_params,
                          const TrainLossWeights& weights,
                          Eigen::VectorXd* grad = nullptr);

// Optional per-step override of the frozen inputs (recorded g and residual
// vectors), used by the finite-difference tests of the stop-gradient
// contract.
struct FrozenSignals {
  std::vector<Eigen::MatrixXd> g;       // per step, batch x theta
  std::vector<Eigen::MatrixXd> r_prev;  // per step, batch x resid
  std::vector<Eigen::MatrixXd> r_look;  // per step, batch x resid
};

// Unrolled forward + loss; optionally fills training caches and the frozen
// signal record. Used by both train() and the gradient tests.
struct UnrollOutput {
  double loss = 0.0;                     // mean over the batch
  FitterTrajectory trajectory;
  FrozenSignals signals;
};
UnrollOutput fitter_unroll(FitterNetworks& nets, const KinematicModel& model,
                           const std::vector<FitSample>& batch,
                           const TrainLossWeights& weights, bool training,
                           Rng* dropout_rng, bool accumulate_gradients,
                           const FrozenSignals* replay = nullptr,
                           const RigidTransform& calib = default_hmd_calibration(),
                           int workers = 1);

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  double lr = 1e-4;
  int anneal_epoch = 200;
  double anneal_factor = 0.1;
  std::uint64_t seed = 0;
  int workers = 1;
  TrainLossWeights loss_weights;
};

struct TrainHistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainHistoryRow> history;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

// Adam on the summed per-step loss over the unrolled fitter. Gradients stop
// at g and at the residual inputs of the lambda/gamma head. Aborts with
// NonFiniteState naming the batch index if a step produces non-finite values.
TrainResult train_fitter(FitterNetworks& nets, const KinematicModel& model,
                         const std::vector<FitSample>& train_set,
                         const std::vector<FitSample>& val_set,
                         const TrainConfig& config,
                         const RigidTransform& calib = default_hmd_calibration());

void save_checkpoint(const FitterNetworks& nets, const std::string& path,
                     std::int64_t step = 0, const Adam* adam = nullptr);
struct Checkpoint {
  FitterNetworks nets;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> adam_m, adam_v;
  bool has_adam = false;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mofit
