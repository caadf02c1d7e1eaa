#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

#include "gridgp/grid_model.hpp"
#include "gridgp/signal.hpp"

namespace gridgp {

// Poles and residues of one second-order eigensystem's speed impulse
// response h_i(t) = (a e^{ct} + b e^{dt}) u(t).
struct EigenSystemPoles {
  int index = 0;
  double lambda = 0.0;
  std::complex<double> a, b;  // residues, a + b = 1
  std::complex<double> c, d;  // poles, c + d = -gamma, c*d = lambda
};

// h(t) = f*delta(t) + sum_k r_k e^{p_k t} u(t), all poles stable. Closed
// under the differentiation/integration/combination steps needed for the
// angle/speed/rocof/input chain.
struct ExpMixKernel {
  struct Term {
    std::complex<double> residue;
    std::complex<double> pole;
  };
  std::vector<Term> terms;
  double feedthrough = 0.0;  // coefficient of delta(t)

  // Smooth part at time t with the step convention u(0) = 1/2. The delta is
  // not included.
  double eval(double t) const;

  std::complex<double> residue_sum() const {
    std::complex<double> s{0.0, 0.0};
    for (const auto& t : terms) s += t.residue;
    return s;
  }
};

// Eq.-(8)-style pole/residue pairs; the critically damped case is handled by
// an epsilon split of the double pole.
EigenSystemPoles poles_second_order(double lambda, double gamma);

// Speed -> the mixture itself; angle -> residues over poles (lambda > 0
// only); rocof -> residues times poles plus unit feedthrough.
ExpMixKernel to_expmix(const EigenSystemPoles& poles, Quantity quantity);

// Speed kernel of the third-order turbine/droop eigensystem
// H(s) = s(tau s + 1) / (tau s^3 + (1+gamma tau) s^2 + (gamma+r+tau lambda) s + lambda).
ExpMixKernel poles_third_order(double lambda, double gamma, const TurbineSpec& turbine);

// Kernel for any quantity of eigensystem (lambda, gamma), second- or
// third-order. Quantity::power yields the net accelerating input
// ddot y + gamma dot y + lambda y: a pure Dirac for the second-order model,
// Dirac minus the governor tail r s / C(s) with a turbine.
ExpMixKernel quantity_mix(double lambda, double gamma, Quantity quantity,
                          const std::optional<TurbineSpec>& turbine = std::nullopt);

// Stationary cross-correlation integral (h_i * h_j~)(tau) between two
// impulse responses driven by a common unit white input:
//   tau >= 0: sum_k sum_l r_k q_l e^{p_k tau} / -(p_k + q-poles_l)
// plus the feedthrough cross terms f_j g_i(tau) + f_i g_j(-tau). The
// delta-squared term f_i f_j delta(tau) is excluded; callers needing
// equal-time feedthrough energy must go through the covariance module's
// discrete filtered conjugation.
double cross_corr(const ExpMixKernel& h_i, const ExpMixKernel& h_j, double tau);

// [K]_ij = cross_corr of the (row, col) quantity kernels of retained
// eigenstates i and j at lag tau.
Eigen::MatrixXd kernel_matrix(const EigenSpace& space, Quantity row_quantity,
                              Quantity col_quantity, double tau,
                              const std::optional<TurbineSpec>& turbine = std::nullopt);

// |H_i(w)|^2 = 1 / ((lambda/w - w)^2 + gamma^2) for the speed output.
double freq_response_sq(double lambda, double gamma, double w);

}  // namespace gridgp
