#pragma once

// Shared fixtures and independent oracles for the test suites. The closed
// forms here are deliberately written from the published formulas (not by
// calling the library) so they can catch sign/convention bugs in the
// implementation path.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "gridgp/grid_model.hpp"

namespace testsup {

constexpr double kPi = 3.14159265358979323846;

struct SecondOrderPoles {
  std::complex<double> a, b, c, d;
};

inline SecondOrderPoles oracle_poles(double lambda, double gamma) {
  std::complex<double> s = std::sqrt(std::complex<double>(gamma * gamma - 4.0 * lambda, 0.0));
  SecondOrderPoles p;
  p.c = 0.5 * (-gamma + s);
  p.d = 0.5 * (-gamma - s);
  p.a = 0.5 - gamma / (2.0 * s);
  p.b = 0.5 + gamma / (2.0 * s);
  return p;
}

// Speed autocovariance k_ii(tau) = h(|tau|)/(2 gamma) for a unit white
// input, with k_ii(0) = 1/(2 gamma).
inline double prop1_kii(double lambda, double gamma, double tau) {
  SecondOrderPoles p = oracle_poles(lambda, gamma);
  double at = std::abs(tau);
  std::complex<double> h = p.a * std::exp(p.c * at) + p.b * std::exp(p.d * at);
  return h.real() / (2.0 * gamma);
}

// Speed cross-covariance between eigensystems i and j (unit input
// covariance): k_ij(tau) u(tau) + k_ji(-tau) u(-tau) with the published
// residues.
inline double prop2_kij(double lambda_i, double lambda_j, double gamma, double tau) {
  if (tau < 0) return prop2_kij(lambda_j, lambda_i, gamma, -tau);
  SecondOrderPoles pi = oracle_poles(lambda_i, gamma);
  SecondOrderPoles pj = oracle_poles(lambda_j, gamma);
  std::complex<double> a_ij = -pi.c * pi.c / ((pi.c + pj.c) * (pi.c + pj.d) * (pi.c - pi.d));
  std::complex<double> b_ij = pi.d * pi.d / ((pj.c + pi.d) * (pi.d + pj.d) * (pi.c - pi.d));
  std::complex<double> k = a_ij * std::exp(pi.c * tau) + b_ij * std::exp(pi.d * tau);
  double value = k.real();
  if (tau == 0.0) value = 0.5 * (value + prop2_kij(lambda_j, lambda_i, gamma, 1e-300));
  return value;
}

// Numeric cross-correlation of two impulse responses by midpoint quadrature
// (never samples the t = 0 step); slow but independent of the pole-residue
// algebra.
template <typename F, typename G>
double quadrature_cross_corr(F h_i, G h_j, double tau, double horizon = 80.0, int n = 200000) {
  double acc = 0.0;
  const double h = horizon / n;
  for (int k = 0; k < n; ++k) {
    const double u = (k + 0.5) * h;
    acc += h_i(u + tau) * h_j(u);
  }
  return acc * h;
}

// Uniform-parameter chain of n machines.
inline gridgp::GridModel path_model(int n, double branch_weight, double inertia, double gamma) {
  gridgp::GridModel m;
  m.n_buses = n;
  m.base_freq_hz = 60.0;
  m.inertia = Eigen::VectorXd::Constant(n, inertia);
  m.damping = Eigen::VectorXd::Constant(n, gamma * inertia);
  m.gamma = gamma;
  m.laplacian = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    m.laplacian(i, i) += branch_weight;
    m.laplacian(i + 1, i + 1) += branch_weight;
    m.laplacian(i, i + 1) -= branch_weight;
    m.laplacian(i + 1, i) -= branch_weight;
  }
  m.bus_ids.resize(n);
  for (int i = 0; i < n; ++i) m.bus_ids[i] = i + 1;
  return m;
}

// Ten-machine model with modes pinned at the given resonance frequencies
// (ascending, Hz, one per non-zero mode). The eigenbasis is the uniform
// chain's (delocalized), so every mode is visible from any few buses, and
// the spectrum can be given a clean gap around the analysis band. The
// resulting matrix is symmetric PSD with exact zero row sums.
inline gridgp::GridModel designer_model(const std::vector<double>& mode_freqs_hz, double inertia,
                                        double gamma) {
  const int n = static_cast<int>(mode_freqs_hz.size()) + 1;
  gridgp::GridModel base = path_model(n, 1.0, inertia, gamma);
  gridgp::EigenSpace space = gridgp::eigenspace(base);
  Eigen::VectorXd lam(n);
  lam[0] = 0.0;
  for (int k = 1; k < n; ++k) {
    const double w = 2.0 * kPi * mode_freqs_hz[static_cast<std::size_t>(k - 1)];
    lam[k] = w * w;
  }
  gridgp::GridModel m = base;
  Eigen::VectorXd sqrt_m = m.inertia.array().sqrt();
  m.laplacian = sqrt_m.asDiagonal() * space.eigvecs * lam.asDiagonal() *
                space.eigvecs.transpose() * sqrt_m.asDiagonal();
  m.laplacian = 0.5 * (m.laplacian + m.laplacian.transpose()).eval();
  return m;
}

// Standard spectrum used by the estimator/extrapolation suites: five slow
// collective modes well below the band, four modes inside [0.5, 0.8] Hz.
inline gridgp::GridModel standard_ten_machine() {
  return designer_model({0.06, 0.10, 0.14, 0.18, 0.19, 0.53, 0.60, 0.68, 0.76},
                        0.026525823848649224, 0.3);
}

// Two chains joined by a vanishing tie; intra-cluster modes of one side are
// invisible from the other.
inline gridgp::GridModel two_cluster_model(double tie_weight = 1e-5) {
  const double inertia = 0.026525823848649224;
  const double gamma = 0.3;
  gridgp::GridModel m;
  m.n_buses = 10;
  m.base_freq_hz = 60.0;
  m.inertia = Eigen::VectorXd::Constant(10, inertia);
  m.damping = Eigen::VectorXd::Constant(10, gamma * inertia);
  m.gamma = gamma;
  m.laplacian = Eigen::MatrixXd::Zero(10, 10);
  auto add_edge = [&](int i, int j, double w) {
    m.laplacian(i, i) += w;
    m.laplacian(j, j) += w;
    m.laplacian(i, j) -= w;
    m.laplacian(j, i) -= w;
  };
  // sqrt(b/m)/pi = 1.10 -> cluster A intra modes at {0.34, 0.65, 0.89, 1.05} Hz
  const double b_a = 1.10 * 1.10 * kPi * kPi * inertia;
  // sqrt(b/m)/pi = 0.95 -> cluster B intra modes at {0.29, 0.56, 0.77, 0.90} Hz
  const double b_b = 0.95 * 0.95 * kPi * kPi * inertia;
  for (int i = 0; i < 4; ++i) add_edge(i, i + 1, b_a);
  for (int i = 5; i < 9; ++i) add_edge(i, i + 1, b_b);
  add_edge(4, 5, tie_weight);
  m.bus_ids.resize(10);
  for (int i = 0; i < 10; ++i) m.bus_ids[i] = i + 1;
  return m;
}

}  // namespace testsup
