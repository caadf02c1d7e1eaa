#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "gridgp/covariance.hpp"
#include "gridgp/grid_model.hpp"
#include "gridgp/signal.hpp"

namespace gridgp {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Eigeninput covariance over the retained eigenstates. Entries where the
// mask is false are structurally zero (non-overlapping passbands).
struct AlphaMatrix {
  Eigen::MatrixXd values;
  BoolMatrix mask;

  Eigen::Index dim() const { return values.rows(); }
  void validate() const;
};

struct SampleCovariance {
  double lag_s = 0.0;
  Eigen::MatrixXd values;
  Eigen::Index sample_count = 0;  // usable pair count
};

// Per metered channel measurement-noise variances; known entries are
// subtracted before fitting, unknown ones are estimated jointly.
struct NoiseSpec {
  Eigen::VectorXd variance;
  std::vector<bool> known;

  static NoiseSpec all_known(const Eigen::VectorXd& var);
  static NoiseSpec all_unknown(Eigen::Index m);
  void validate(Eigen::Index m) const;
};

// C_tau = (1/T) sum_t z(t+tau) z(t)^T over all usable pairs; the lag-0
// matrix is symmetrized.
SampleCovariance sample_cov(const SignalFrame& data, int lag_samples);

// Half-power cutoff frequencies of one eigensystem (rad/s); the bandwidth
// w_high - w_low equals gamma for every eigenvalue.
struct Cutoffs {
  double w_low = 0.0;
  double w_high = 0.0;
  double bandwidth = 0.0;
};
Cutoffs cutoffs(double lambda, double gamma);

// mask(i,j) true iff the doubled passbands (2*w_low, 2*w_high) of retained
// eigenstates i and j intersect; alpha entries outside the mask are pinned
// at zero in the fit.
BoolMatrix overlap_mask(const EigenSpace& space);

// Eigenvalue clipping at zero (nearest PSD matrix in Frobenius norm).
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& sym);

struct AlphaFit {
  AlphaMatrix alpha;
  NoiseSpec noise;        // with fitted values filled in for unknown entries
  double ls_residual = 0; // LS objective at the unprojected solution
};

// Least-squares fit of the masked upper triangle of alpha (and any unknown
// noise variances) to the stacked sample covariances, followed by
// alternating projection onto the PSD cone and the mask subspace. channels
// describe the metered rows of each C_tau (bus + quantity); a filter makes
// the model moments filter-consistent.
AlphaFit fit_alpha(const std::vector<SampleCovariance>& covs, const GridModel& model,
                   const EigenSpace& space, const BoolMatrix& mask, const NoiseSpec& noise,
                   const std::vector<ChannelSpec>& channels,
                   const std::optional<FilterOperator>& filter = std::nullopt,
                   const std::optional<TurbineSpec>& turbine = std::nullopt);

}  // namespace gridgp
