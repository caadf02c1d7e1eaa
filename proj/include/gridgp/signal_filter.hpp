#pragma once

#include <Eigen/Dense>

#include "gridgp/signal.hpp"

namespace gridgp {

// Passband plus the FIR design knobs. low_hz = 0 degenerates to a low-pass.
struct BandSpec {
  double low_hz = 0.5;
  double high_hz = 0.8;
  double transition_hz = 0.3;
  int num_taps = 201;  // odd

  bool contains_hz(double f) const { return f >= low_hz && f <= high_hz; }
  void validate(double rate_hz) const;
};

// Linear-phase FIR taps applied forward-backward (zero phase). Also the
// operator conjugating analytic covariances onto the filtered process.
struct FilterOperator {
  Eigen::VectorXd taps;  // symmetric
  double sample_rate_hz = 0.0;
  double pass_low_hz = 0.0;
  double pass_high_hz = 0.0;

  int num_taps() const { return static_cast<int>(taps.size()); }

  // Samples within this many indices of either end of a filtered record are
  // edge-contaminated and excluded from accuracy metrics.
  int edge_samples() const { return num_taps(); }

  // Amplitude response of a single (forward) pass at frequency f_hz.
  double gain_at(double f_hz) const;

  // Combined zero-phase kernel g of the forward-backward pass: the output at
  // an interior sample n is sum_k g[k] x[n-k] with g symmetric,
  // k in [-(num_taps-1), num_taps-1]. Returned with g[0] at index num_taps-1.
  Eigen::VectorXd zero_phase_kernel() const;
};

// Windowed-sinc (Hamming) band-pass design; verifies the realized response
// meets ripple/attenuation requirements and throws NumericError otherwise.
FilterOperator design(const BandSpec& band, double rate_hz);

// Forward-backward filtering of every channel with odd-symmetric reflection
// padding of num_taps samples at each end.
SignalFrame apply_zero_phase(const FilterOperator& filter, const SignalFrame& frame);
Eigen::VectorXd apply_zero_phase(const FilterOperator& filter, const Eigen::VectorXd& x);

}  // namespace gridgp
