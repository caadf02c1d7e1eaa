#pragma once

#include <Eigen/Dense>
#include <optional>

#include "gridgp/covariance.hpp"
#include "gridgp/signal.hpp"

namespace gridgp {

// Squared-exponential temporal kernel k(t,t') = s2 exp(-beta (t-t')^2) with
// closed-form derivative cross-kernels; the model-free path for
// single-channel imputation and differentiation.
struct ModelFreeKernel {
  double s2 = 1.0;
  double beta = 1.0;
  double noise_var = 0.0;
  double mean_offset = 0.0;  // sample mean removed before fitting

  // Covariance between the order1-th derivative at t1 and the order2-th
  // derivative at t2 (orders 0 or 1).
  double eval(double t1, int order1, double t2, int order2) const;
  void validate() const;
};

struct PosteriorEstimate {
  SelectionSet query;
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  double loglik = 0.0;  // log-density of the measured data under the prior
};

// Measured data plus query targets under either the physics-derived
// covariance context or a model-free temporal kernel.
struct InferenceProblem {
  SelectionSet measured;
  Eigen::VectorXd data;
  SelectionSet query;
  std::optional<CovarianceContext> context;
  std::optional<ModelFreeKernel> model_free;
  // Derivative order of each query channel relative to the measured process
  // (model-free path only); empty means order 0 everywhere.
  std::vector<int> query_orders;

  void validate() const;
};

// (B K B^T + diag(sigma2))^{-1} rhs through the inner DT x DT system
// (I + K B^T D^{-1} B) w = K B^T D^{-1} rhs. Falls back to a dense solve
// with a logged warning if the inner system is too ill-conditioned.
Eigen::MatrixXd woodbury_solve(const Eigen::MatrixXd& b, const Eigen::MatrixXd& k,
                               const Eigen::VectorXd& sigma2, const Eigen::MatrixXd& rhs);

PosteriorEstimate posterior(const InferenceProblem& problem);

// Negative log-density of a candidate query vector under the posterior
// Gaussian; higher = more anomalous.
double anomaly_score(const InferenceProblem& problem, const Eigen::VectorXd& candidate);

// Profile marginal likelihood fit of (s2, beta, noise) on one channel:
// golden-section over log beta nested in a noise-ratio sweep, with s2
// profiled out in closed form. Deterministic given the data.
ModelFreeKernel fit_model_free(const SignalFrame& data, Eigen::Index channel = 0);

// Posterior over the time derivative of a single-channel record at the query
// times, using the SE derivative cross-kernels.
PosteriorEstimate differentiate(const SignalFrame& data, Eigen::Index channel,
                                const std::vector<double>& query_times,
                                const std::optional<ModelFreeKernel>& kernel = std::nullopt);

}  // namespace gridgp
