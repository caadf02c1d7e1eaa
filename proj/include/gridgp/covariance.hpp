#pragma once

#include <Eigen/Dense>
#include <optional>

#include "gridgp/eigen_kernels.hpp"
#include "gridgp/grid_model.hpp"
#include "gridgp/signal.hpp"
#include "gridgp/signal_filter.hpp"

namespace gridgp {

// Everything needed to evaluate prior covariances between (bus, quantity,
// time) variables: the reduced model, its eigenspace, the fitted eigeninput
// covariance, and optionally the data filter and turbine parameters.
struct CovarianceContext {
  const GridModel* model = nullptr;
  const EigenSpace* space = nullptr;
  Eigen::MatrixXd alpha;  // D x D over retained eigenstates
  std::optional<FilterOperator> filter;
  std::optional<TurbineSpec> turbine;

  void validate() const;
};

struct CovarianceBlock {
  SelectionSet rows;
  SelectionSet cols;
  Eigen::MatrixXd values;  // rows.size() x cols.size(), channel-major
};

// Entry ((n,q,t),(m,q',t')) = sum_{ij} w_q(n,i) alpha_ij k^{qq'}_ij(t-t')
// w_q'(m,j). Weights are rows of M^-1/2 V for states and M^1/2 V for power.
// With a filter, kernels are conjugated by the discrete zero-phase operator
// at the reporting rate (times must be on a uniform grid); the white
// feedthrough of power/rocof enters as alpha/dt on the sample diagonal
// before conjugation.
CovarianceBlock assemble(const CovarianceContext& ctx, const SelectionSet& rows,
                         const SelectionSet& cols);

// Adds diag(noise_std^2) per channel-time entry; rows must equal cols.
CovarianceBlock add_noise(CovarianceBlock block);

// Row `bus` of M^-1/2 V over retained eigenstates: how strongly each
// retained mode shows up in that bus's signals.
Eigen::VectorXd participation(const GridModel& model, const EigenSpace& space, int bus);

// Low-rank form Sigma = B * core * B^T for one selection set, with
// core[(q,i,t),(q',j,t')] = alpha_ij k^{qq'}_ij(t-t') over the distinct
// quantities q of the selection. B is (channels*T) x (|Q|*D*T).
struct FactoredCovariance {
  Eigen::MatrixXd b;
  Eigen::MatrixXd core;
  std::vector<Quantity> quantities;
};

FactoredCovariance assemble_factored(const CovarianceContext& ctx, const SelectionSet& sel);

// Cross core between two selections' eigen-level variables, such that
// Sigma_rc = basis_r.b * cross * basis_c.b^T.
Eigen::MatrixXd factored_cross_core(const CovarianceContext& ctx,
                                    const std::vector<Quantity>& row_quantities,
                                    const std::vector<double>& row_times,
                                    const std::vector<Quantity>& col_quantities,
                                    const std::vector<double>& col_times);

// K~_tau over retained eigenstates, optionally after zero-phase conjugation
// at the filter's reporting rate (tau must then be an integer number of
// samples). This is the kernel table the method of moments fits against.
Eigen::MatrixXd eigenstate_kernel_matrix(const EigenSpace& space, Quantity row_quantity,
                                         Quantity col_quantity, double tau,
                                         const std::optional<FilterOperator>& filter = std::nullopt,
                                         const std::optional<TurbineSpec>& turbine = std::nullopt);

}  // namespace gridgp
