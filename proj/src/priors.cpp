#include "mofit/priors.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "mofit/container.hpp"
#include "mofit/errors.hpp"
#include "mofit/model_derivatives.hpp"
#include "mofit/rng.hpp"

namespace mofit {

void GaussianMixture::finalize() {
  const int K = components();
  const int d = dim();
  if (K <= 0 || d <= 0) throw BadPrior("empty mixture");
  if (weights.size() != K || static_cast<int>(covariances.size()) != K)
    throw BadPrior("mixture field sizes disagree");
  if (std::abs(weights.sum() - 1.0) > 1e-9 || weights.minCoeff() <= 0.0)
    throw BadPrior("mixture weights must be positive and sum to 1");
  chol.resize(covariances.size());
  log_norm.resize(K);
  for (int k = 0; k < K; ++k) {
    if (covariances[k].rows() != d || covariances[k].cols() != d)
      throw BadPrior("covariance size mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(covariances[k]);
    if (llt.info() != Eigen::Success)
      throw BadPrior("covariance not positive-definite");
    chol[k] = llt.matrixL();
    double log_det = 0.0;
    for (int i = 0; i < d; ++i) log_det += 2.0 * std::log(chol[k](i, i));
    log_norm[k] =
        std::log(weights[k]) - 0.5 * d * std::log(2.0 * M_PI) - 0.5 * log_det;
  }
}

PriorEval gmm_prior(const Eigen::VectorXd& x, const GaussianMixture& gmm) {
  if (gmm.chol.empty()) throw BadPrior("mixture not finalized");
  if (x.size() != gmm.dim()) throw ShapeMismatch("gmm input dimension mismatch");

  PriorEval out;
  out.value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_white;
  for (int k = 0; k < gmm.components(); ++k) {
    const Eigen::VectorXd diff = x - gmm.means.row(k).transpose();
    const Eigen::VectorXd white =
        gmm.chol[k].triangularView<Eigen::Lower>().solve(diff);
    const double neg_log = 0.5 * white.squaredNorm() - gmm.log_norm[k];
    if (neg_log < out.value) {
      out.value = neg_log;
      out.component = k;
      best_white = white;
    }
  }
  // grad = S^-1 (x - mu) = L^-T (L^-1 diff).
  out.gradient = gmm.chol[out.component]
                     .triangularView<Eigen::Lower>()
                     .transpose()
                     .solve(best_white);
  return out;
}

void gmm_prior_residual(const Eigen::VectorXd& x, const GaussianMixture& gmm,
                        double weight, Eigen::VectorXd& rows,
                        Eigen::MatrixXd& jac) {
  const PriorEval eval = gmm_prior(x, gmm);
  const int k = eval.component;
  const double s = std::sqrt(0.5 * weight);
  const Eigen::VectorXd diff = x - gmm.means.row(k).transpose();
  rows = s * gmm.chol[k].triangularView<Eigen::Lower>().solve(diff);
  jac = s * gmm.chol[k]
                .triangularView<Eigen::Lower>()
                .solve(Eigen::MatrixXd::Identity(gmm.dim(), gmm.dim()));
}

GaussianMixture fit_gmm_em(const Eigen::MatrixXd& samples, int components,
                           std::uint64_t seed, int iterations, double ridge,
                           std::vector<double>* history) {
  const int n = static_cast<int>(samples.rows());
  const int d = static_cast<int>(samples.cols());
  if (components < 1 || n < components || iterations < 1 || ridge < 0.0)
    throw BadConfig("invalid GMM fit configuration");

  Rng rng(seed);
  const int K = components;

  // Seeded k-means init: distinct random samples as centers, a few Lloyd steps.
  Eigen::MatrixXd centers(K, d);
  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < K) {
    const int pick = rng.uniform_int(0, n - 1);
    bool dup = false;
    for (int c : chosen) dup = dup || c == pick;
    if (!dup) chosen.push_back(pick);
  }
  for (int k = 0; k < K; ++k) centers.row(k) = samples.row(chosen[k]);
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < 10; ++it) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double dist = (samples.row(i) - centers.row(k)).squaredNorm();
        if (dist < best) {
          best = dist;
          assign[static_cast<std::size_t>(i)] = k;
        }
      }
    }
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(K, d);
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < n; ++i) {
      acc.row(assign[static_cast<std::size_t>(i)]) += samples.row(i);
      cnt[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int k = 0; k < K; ++k)
      if (cnt[k] > 0) centers.row(k) = acc.row(k) / cnt[k];
  }

  GaussianMixture gmm;
  gmm.means = centers;
  gmm.weights = Eigen::VectorXd::Constant(K, 1.0 / K);
  gmm.covariances.assign(static_cast<std::size_t>(K),
                         Eigen::MatrixXd::Zero(d, d));
  {
    // Initial covariances from the k-means partition.
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < n; ++i) {
      const int k = assign[static_cast<std::size_t>(i)];
      const Eigen::VectorXd diff = (samples.row(i) - centers.row(k)).transpose();
      gmm.covariances[static_cast<std::size_t>(k)] += diff * diff.transpose();
      cnt[k] += 1.0;
    }
    for (int k = 0; k < K; ++k) {
      gmm.covariances[static_cast<std::size_t>(k)] /= std::max(cnt[k], 1.0);
      gmm.covariances[static_cast<std::size_t>(k)] +=
          (ridge + 1e-8) * Eigen::MatrixXd::Identity(d, d);
      gmm.weights[k] = std::max(cnt[k], 1.0) / static_cast<double>(n);
    }
    gmm.weights /= gmm.weights.sum();
  }
  gmm.finalize();

  Eigen::MatrixXd resp(n, K);
  for (int it = 0; it < iterations; ++it) {
    // E-step with log-sum-exp normalization.
    double total_ll = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd logp(K);
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd diff = (samples.row(i) - gmm.means.row(k)).transpose();
        const Eigen::VectorXd white =
            gmm.chol[static_cast<std::size_t>(k)]
                .triangularView<Eigen::Lower>()
                .solve(diff);
        logp[k] = gmm.log_norm[k] - 0.5 * white.squaredNorm();
      }
      const double m = logp.maxCoeff();
      const double lse = m + std::log((logp.array() - m).exp().sum());
      total_ll += lse;
      resp.row(i) = (logp.array() - lse).exp();
    }
    if (history) history->push_back(total_ll / n);

    // M-step.
    const Eigen::VectorXd nk = resp.colwise().sum();
    for (int k = 0; k < K; ++k) {
      if (nk[k] < 1e-8) continue;  // starved component keeps its parameters
      gmm.means.row(k) = (resp.col(k).transpose() * samples) / nk[k];
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd diff = (samples.row(i) - gmm.means.row(k)).transpose();
        cov += resp(i, k) * (diff * diff.transpose());
      }
      gmm.covariances[static_cast<std::size_t>(k)] =
          cov / nk[k] + ridge * Eigen::MatrixXd::Identity(d, d);
      gmm.weights[k] = nk[k] / n;
    }
    gmm.weights /= gmm.weights.sum();
    gmm.finalize();
  }
  return gmm;
}

void save_gmm(const GaussianMixture& gmm, const std::string& path) {
  Container c;
  c.put_ints("meta", {1, gmm.components(), gmm.dim()});
  c.put_vector("weights", gmm.weights);
  c.put_matrix("means", gmm.means);
  for (int k = 0; k < gmm.components(); ++k)
    c.put_matrix("cov_" + std::to_string(k),
                 gmm.covariances[static_cast<std::size_t>(k)]);
  c.save(path);
}

GaussianMixture load_gmm(const std::string& path) {
  const Container c = Container::load(path);
  const auto meta = c.get_ints("meta");
  if (meta.size() != 3 || meta[0] != 1) throw FormatError("unsupported gmm record");
  GaussianMixture gmm;
  gmm.weights = c.get_vector("weights");
  gmm.means = c.get_matrix("means");
  for (std::int64_t k = 0; k < meta[1]; ++k)
    gmm.covariances.push_back(c.get_matrix("cov_" + std::to_string(k)));
  gmm.finalize();
  return gmm;
}

PriorEval gravity_loss(const KinematicModel& model, const ParamLayout& layout,
                       const Eigen::VectorXd& theta) {
  layout.check_vector(theta);
  const Vec6 root = theta.segment<6>(layout.rot_offset(0));
  const Mat3 R = rot6d_to_matrix(root);
  const Vec3 axis = R.row(1).transpose();  // y-row of the pelvis rotation
  const double norm = axis.norm();
  if (norm < 1e-12) throw DegenerateInput("gravity axis norm < 1e-12");
  const Vec3 up(0.0, 1.0, 0.0);

  PriorEval out;
  out.value = 1.0 - axis.dot(up) / norm;

  // d value / d axis, then chain through the 6D decode (rows 3..5 hold the
  // y-row of R in the row-major flattening).
  const Vec3 d_axis = -(up / norm - axis.dot(up) * axis / (norm * norm * norm));
  const auto decode_jac = rot6d_to_matrix_jacobian(root);
  out.gradient = Eigen::VectorXd::Zero(layout.size());
  out.gradient.segment<6>(layout.rot_offset(0)) =
      decode_jac.middleRows(3, 3).transpose() * d_axis;
  return out;
}

TemporalEval temporal_loss(const KinematicModel& model, const ParamLayout& layout,
                           const std::vector<Eigen::VectorXd>& sequence) {
  TemporalEval out;
  out.gradients.assign(sequence.size(), Eigen::VectorXd::Zero(layout.size()));
  if (sequence.size() < 2) return out;

  std::vector<ModelDerivatives> md;
  md.reserve(sequence.size());
  for (const auto& theta : sequence)
    md.push_back(fk_derivatives(model, layout, theta));

  for (std::size_t t = 0; t + 1 < sequence.size(); ++t) {
    for (int j = 0; j < model.num_joints(); ++j) {
      const Vec12 a = flatten_transform(md[t].fk.world[j]);
      const Vec12 b = flatten_transform(md[t + 1].fk.world[j]);
      const Vec12 diff = b - a;
      const double norm = diff.norm();
      out.value += norm;
      if (norm < 1e-12) continue;
      const Vec12 dir = diff / norm;
      out.gradients[t + 1] += transform_jacobian(md[t + 1], j).transpose() * dir;
      out.gradients[t] -= transform_jacobian(md[t], j).transpose() * dir;
    }
  }
  return out;
}

}  // namespace mofit
