#pragma once

#include <string>
#include <vector>

#include "mofit/classic_opt.hpp"
#include "mofit/config.hpp"
#include "mofit/datagen.hpp"
#include "mofit/learned_fitter.hpp"
#include "mofit/metrics.hpp"

namespace mofit {

// Config-to-component wiring shared by the command line tool and the
// acceptance suite.

KinematicModel model_from_config(const Config& cfg);
DatagenConfig datagen_from_config(const Config& cfg);
FitterConfig fitter_from_config(const Config& cfg, const KinematicModel& model);
TrainConfig train_from_config(const Config& cfg);
LMOptions lm_options_from_config(const Config& cfg);

std::vector<FitSample> to_samples(const Dataset& dataset, Split split);

// Pose prior fitted on train-split rotation blocks.
GaussianMixture pose_prior_from_dataset(const KinematicModel& model,
                                        const Dataset& dataset, const Config& cfg);

// Classic-solver initialization: rest pose, with the HMD root translated
// under the observed headset and the body2d camera at the config mean.
Eigen::VectorXd classic_init(const KinematicModel& model, const ObservationSet& obs,
                             const Config& cfg);

struct EvalReport {
  std::vector<std::string> columns;  // metric names; first column is "index"
  Eigen::MatrixXd values;            // one row per instance
  Eigen::VectorXd mean() const;
};

// Learned-fitter evaluation over one split. per_iteration (optional) receives
// rows [iter, data_term, metric columns...] averaged over the split.
EvalReport evaluate_learned(const KinematicModel& model, const Dataset& dataset,
                            Split split, const FitterNetworks& nets, int iterations,
                            int workers, Eigen::MatrixXd* per_iteration = nullptr,
                            std::vector<std::string>* per_iteration_columns = nullptr);

enum class ClassicSolver { Lm, Gd };
EvalReport evaluate_classic(const KinematicModel& model, const Dataset& dataset,
                            Split split, ClassicSolver solver, const Config& cfg,
                            const GaussianMixture* pose_gmm, int workers);

// CSV emission. Every file starts with a "# config_hash=..." comment line.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& rows, std::uint64_t config_hash,
               bool append_mean_row = false);
void write_history_csv(const std::string& path, const std::vector<TrainHistoryRow>& rows,
                       std::uint64_t config_hash);
void write_fit_trace_csv(const std::string& path, const FitTrace& trace,
                         std::uint64_t config_hash);
void write_fitter_diag_csv(const std::string& path, const FitterTrajectory& trajectory,
                           std::uint64_t config_hash);

}  // namespace mofit
