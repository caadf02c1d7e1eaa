#include "gridgp/eigen_kernels.hpp"

#include <cmath>

namespace gridgp {

namespace {

using Complex = std::complex<double>;

constexpr double kPoleSplitScale = 1e-7;

// Roots of a real cubic via the companion matrix; clustered roots are spread
// apart by an epsilon split so residue formulas stay finite.
std::vector<Complex> cubic_roots(double c3, double c2, double c1, double c0) {
  Eigen::Matrix3d companion = Eigen::Matrix3d::Zero();
  companion(0, 2) = -c0 / c3;
  companion(1, 2) = -c1 / c3;
  companion(2, 2) = -c2 / c3;
  companion(1, 0) = 1.0;
  companion(2, 1) = 1.0;
  Eigen::EigenSolver<Eigen::Matrix3d> solver(companion);
  if (solver.info() != Eigen::Success) throw NumericError("cubic root solve failed");
  std::vector<Complex> roots(3);
  for (int i = 0; i < 3; ++i) roots[i] = solver.eigenvalues()[i];

  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      double eps = kPoleSplitScale * std::max(1.0, std::abs(roots[i]));
      if (std::abs(roots[i] - roots[j]) < eps) {
        // Repeated roots of a real cubic sit on the real axis, so a real
        // split preserves conjugate symmetry.
        Complex mid = 0.5 * (roots[i] + roots[j]);
        roots[i] = mid + eps;
        roots[j] = mid - eps;
      }
    }
  }
  return roots;
}

struct ThirdOrderSystem {
  double tau;
  std::vector<Complex> poles;  // 3 stable roots of C(s)

  Complex denom_derivative(int k) const {
    Complex prod{tau, 0.0};
    for (int l = 0; l < 3; ++l) {
      if (l != k) prod *= poles[k] - poles[l];
    }
    return prod;
  }
};

ThirdOrderSystem third_order_poles(double lambda, double gamma, const TurbineSpec& turbine) {
  turbine.validate();
  if (lambda < 0) throw ValidationError("lambda must be non-negative");
  if (!(gamma > 0)) throw ValidationError("gamma must be positive");
  ThirdOrderSystem sys;
  sys.tau = turbine.tau;
  sys.poles = cubic_roots(turbine.tau, 1.0 + gamma * turbine.tau,
                          gamma + turbine.droop_r + turbine.tau * lambda, lambda);
  for (const auto& p : sys.poles) {
    if (p.real() > 1e-10) {
      throw NumericError("unstable eigensystem root (Re = " + std::to_string(p.real()) +
                         "): invalid turbine parameters");
    }
  }
  return sys;
}

void check_real(double magnitude, double imag, const char* what) {
  if (std::abs(imag) > 1e-9 * std::max(1.0, magnitude)) {
    throw NumericError(std::string(what) + " has a non-negligible imaginary part");
  }
}

}  // namespace

double ExpMixKernel::eval(double t) const {
  if (t < 0.0) return 0.0;
  Complex acc{0.0, 0.0};
  for (const auto& term : terms) acc += term.residue * std::exp(term.pole * t);
  double step = (t == 0.0) ? 0.5 : 1.0;
  check_real(std::abs(acc), acc.imag(), "impulse response");
  return step * acc.real();
}

EigenSystemPoles poles_second_order(double lambda, double gamma) {
  if (!(gamma > 0)) throw ValidationError("gamma must be positive");
  if (lambda < 0) throw ValidationError("lambda must be non-negative");
  EigenSystemPoles p;
  p.lambda = lambda;
  Complex disc = Complex(gamma * gamma - 4.0 * lambda, 0.0);
  Complex s = std::sqrt(disc);
  // Critically damped: split the double pole instead of carrying a
  // (r + q t) e^{pt} representation.
  double eps = kPoleSplitScale * std::max(1.0, 0.5 * gamma);
  if (std::abs(s) < eps) s = Complex(eps, 0.0);
  p.c = 0.5 * (-gamma + s);
  p.d = 0.5 * (-gamma - s);
  p.a = 0.5 - gamma / (2.0 * s);
  p.b = 0.5 + gamma / (2.0 * s);
  if (lambda == 0.0) {
    // Exact structural values: the zero pole carries zero residue.
    p.a = 0.0;
    p.b = 1.0;
    p.c = 0.0;
    p.d = -gamma;
  }
  return p;
}

ExpMixKernel to_expmix(const EigenSystemPoles& poles, Quantity quantity) {
  ExpMixKernel k;
  const Complex split = poles.c - poles.d;
  switch (quantity) {
    case Quantity::speed:
      if (poles.a != 0.0) k.terms.push_back({poles.a, poles.c});
      k.terms.push_back({poles.b, poles.d});
      break;
    case Quantity::angle:
      if (poles.lambda <= 0.0) {
        throw ValidationError("angle kernel undefined for the zero-eigenvalue mode (integrator)");
      }
      // Residues of 1/((s-c)(s-d)); equals a/c and b/d.
      k.terms.push_back({1.0 / split, poles.c});
      k.terms.push_back({-1.0 / split, poles.d});
      break;
    case Quantity::rocof:
      k.feedthrough = 1.0;
      if (poles.a != 0.0) k.terms.push_back({poles.a * poles.c, poles.c});
      k.terms.push_back({poles.b * poles.d, poles.d});
      break;
    case Quantity::power:
      // ddot y + gamma dot y + lambda y: residues r (p^2 + gamma p + lambda)
      // vanish at the system poles, leaving the pure input Dirac.
      k.feedthrough = 1.0;
      break;
  }
  return k;
}

ExpMixKernel poles_third_order(double lambda, double gamma, const TurbineSpec& turbine) {
  ThirdOrderSystem sys = third_order_poles(lambda, gamma, turbine);
  ExpMixKernel k;
  for (int i = 0; i < 3; ++i) {
    const Complex p = sys.poles[i];
    Complex residue = p * (sys.tau * p + 1.0) / sys.denom_derivative(i);
    k.terms.push_back({residue, p});
  }
  return k;
}

ExpMixKernel quantity_mix(double lambda, double gamma, Quantity quantity,
                          const std::optional<TurbineSpec>& turbine) {
  if (!turbine) return to_expmix(poles_second_order(lambda, gamma), quantity);

  ThirdOrderSystem sys = third_order_poles(lambda, gamma, *turbine);
  ExpMixKernel k;
  switch (quantity) {
    case Quantity::speed:
      return poles_third_order(lambda, gamma, *turbine);
    case Quantity::angle: {
      if (lambda <= 0.0) {
        throw ValidationError("angle kernel undefined for the zero-eigenvalue mode (integrator)");
      }
      for (int i = 0; i < 3; ++i) {
        const Complex p = sys.poles[i];
        k.terms.push_back({(sys.tau * p + 1.0) / sys.denom_derivative(i), p});
      }
      return k;
    }
    case Quantity::rocof: {
      ExpMixKernel speed = poles_third_order(lambda, gamma, *turbine);
      k.feedthrough = 1.0;  // sum of speed residues
      for (const auto& t : speed.terms) k.terms.push_back({t.residue * t.pole, t.pole});
      return k;
    }
    case Quantity::power: {
      // Net accelerating input; the governor feedback leaves -r s / C(s)
      // beyond the Dirac.
      k.feedthrough = 1.0;
      for (int i = 0; i < 3; ++i) {
        const Complex p = sys.poles[i];
        k.terms.push_back({-turbine->droop_r * p / sys.denom_derivative(i), p});
      }
      return k;
    }
  }
  return k;
}

double cross_corr(const ExpMixKernel& h_i, const ExpMixKernel& h_j, double tau) {
  if (tau < 0.0) return cross_corr(h_j, h_i, -tau);
  Complex acc{0.0, 0.0};
  for (const auto& ti : h_i.terms) {
    for (const auto& tj : h_j.terms) {
      Complex pole_sum = ti.pole + tj.pole;
      if (std::abs(pole_sum) < 1e-12) {
        throw NumericError("resonant pole pair in cross-correlation (pole sum ~ 0)");
      }
      acc += ti.residue * tj.residue * std::exp(ti.pole * tau) / (-pole_sum);
    }
  }
  double value = acc.real();
  check_real(std::abs(acc), acc.imag(), "cross-correlation");
  // Cross terms between one side's Dirac and the other's smooth part.
  if (h_j.feedthrough != 0.0) value += h_j.feedthrough * h_i.eval(tau);
  if (h_i.feedthrough != 0.0) value += h_i.feedthrough * h_j.eval(-tau);
  return value;
}

Eigen::MatrixXd kernel_matrix(const EigenSpace& space, Quantity row_quantity,
                              Quantity col_quantity, double tau,
                              const std::optional<TurbineSpec>& turbine) {
  if (space.retained.empty()) throw ValidationError("kernel_matrix needs retained eigenstates");
  const Eigen::Index d = space.n_retained();
  std::vector<ExpMixKernel> row_mix(d), col_mix(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    row_mix[i] = quantity_mix(space.eigvals[space.retained[i]], space.gamma, row_quantity, turbine);
    col_mix[i] = quantity_mix(space.eigvals[space.retained[i]], space.gamma, col_quantity, turbine);
  }
  Eigen::MatrixXd k(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) k(i, j) = cross_corr(row_mix[i], col_mix[j], tau);
  }
  return k;
}

double freq_response_sq(double lambda, double gamma, double w) {
  if (w == 0.0) return lambda == 0.0 ? 1.0 / (gamma * gamma) : 0.0;
  double detune = lambda / w - w;
  return 1.0 / (detune * detune + gamma * gamma);
}

}  // namespace gridgp
