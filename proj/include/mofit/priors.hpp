#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "mofit/model.hpp"

namespace mofit {

// Gaussian mixture pose prior, evaluated as the min over components of the
// negative log weighted density.
struct GaussianMixture {
  Eigen::VectorXd weights;                   // K, sums to 1
  Eigen::MatrixXd means;                     // K x d
  std::vector<Eigen::MatrixXd> covariances;  // K of d x d, positive-definite

  // Derived quantities built by finalize(). chol[k] is the lower Cholesky
  // factor of covariance k; log_norm[k] = log w_k - d/2 log(2pi) - 1/2 log|S_k|.
  std::vector<Eigen::MatrixXd> chol;
  Eigen::VectorXd log_norm;

  int dim() const { return static_cast<int>(means.cols()); }
  int components() const { return static_cast<int>(means.rows()); }

  // Validates weights/covariances; throws BadPrior on failure.
  void finalize();
};

struct PriorEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  int component = -1;  // argmin component for GMM
};

// -min_k log(w_k N(x; mu_k, S_k)) and the gradient of the argmin component.
PriorEval gmm_prior(const Eigen::VectorXd& x, const GaussianMixture& gmm);

// Whitened residual block of the argmin component scaled by sqrt(weight):
// rows = sqrt(w) L^-1 (x - mu); d(rows)/dx = sqrt(w) L^-1.
void gmm_prior_residual(const Eigen::VectorXd& x, const GaussianMixture& gmm,
                        double weight, Eigen::VectorXd& rows, Eigen::MatrixXd& jac);

// Standard EM with seeded k-means initialization. The per-iteration mean
// log-likelihood is returned through `history` when non-null.
GaussianMixture fit_gmm_em(const Eigen::MatrixXd& samples, int components,
                           std::uint64_t seed, int iterations = 40,
                           double ridge = 1e-6,
                           std::vector<double>* history = nullptr);

void save_gmm(const GaussianMixture& gmm, const std::string& path);
GaussianMixture load_gmm(const std::string& path);

// One minus the cosine between the root rotation's y-row and up = (0, 1, 0).
// Returns the value and its gradient over the full parameter vector.
PriorEval gravity_loss(const KinematicModel& model, const ParamLayout& layout,
                       const Eigen::VectorXd& theta);

// Sum over frame pairs and joints of the Frobenius norm of the world
// transform difference. Gradients are per frame.
struct TemporalEval {
  double value = 0.0;
  std::vector<Eigen::VectorXd> gradients;
};
TemporalEval temporal_loss(const KinematicModel& model, const ParamLayout& layout,
                           const std::vector<Eigen::VectorXd>& sequence);

}  // namespace mofit
