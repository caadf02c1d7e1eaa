#include <doctest.h>

#include <cmath>

#include "gridgp/common.hpp"
#include "gridgp/signal_filter.hpp"
#include "test_support.hpp"

using namespace gridgp;

namespace {

SignalFrame sine_frame(double freq_hz, double rate_hz, double duration_s, double amplitude = 1.0) {
  SignalFrame f;
  f.rate_hz = rate_hz;
  f.channels = {{0, Quantity::speed, 0.0}};
  const auto n = static_cast<Eigen::Index>(duration_s * rate_hz);
  f.samples.resize(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    f.samples(k, 0) = amplitude * std::sin(2.0 * testsup::kPi * freq_hz * k / rate_hz);
  }
  f.units = {"rad/s"};
  return f;
}

BandSpec interarea_band() {
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  band.transition_hz = 0.3;
  band.num_taps = 201;
  return band;
}

}  // namespace

TEST_CASE("low-pass design has unit DC gain") {
  BandSpec band;
  band.low_hz = 0.0;
  band.high_hz = 2.0;
  band.transition_hz = 0.3;
  band.num_taps = 201;
  FilterOperator f = design(band, 15.0);
  CHECK(f.gain_at(0.0) >= 0.99);
  CHECK(f.gain_at(0.0) <= 1.01);
  CHECK(f.gain_at(1.0) >= 0.89);
  CHECK(f.gain_at(3.0) <= 0.01);
}

TEST_CASE("band-pass design meets pass and stop targets") {
  FilterOperator f = design(interarea_band(), 15.0);
  CHECK(f.gain_at(0.65) >= 0.9);
  CHECK(f.gain_at(0.1) <= 0.01);
  CHECK(f.gain_at(2.0) <= 0.01);
  // taps exactly symmetric by construction
  for (int k = 0; k < f.num_taps(); ++k) {
    CHECK(f.taps[k] == f.taps[f.num_taps() - 1 - k]);
  }
}

TEST_CASE("unachievable specs report the measured attenuation") {
  BandSpec band = interarea_band();
  band.num_taps = 31;
  CHECK_THROWS_WITH_AS(design(band, 15.0), doctest::Contains("unachievable"), NumericError);
}

TEST_CASE("zero-phase pass of an in-band sinusoid preserves amplitude and phase") {
  FilterOperator f = design(interarea_band(), 15.0);
  SignalFrame probe = sine_frame(0.65, 15.0, 240.0);
  SignalFrame out = apply_zero_phase(f, probe);

  // compare against the analytic sinusoid over the interior
  const int edge = f.edge_samples();
  double max_err = 0.0;
  for (Eigen::Index k = edge; k < out.n_samples() - edge; ++k) {
    max_err = std::max(max_err, std::abs(out.samples(k, 0) - probe.samples(k, 0)));
  }
  // amplitude within 2 percent and no phase shift: pointwise error bound
  CHECK(max_err < 0.02);

  // delay measured by the cross-correlation peak: must sit at zero shift
  double best = -1e300;
  int best_shift = -5;
  for (int shift = -1; shift <= 1; ++shift) {
    double acc = 0.0;
    for (Eigen::Index k = edge; k < out.n_samples() - edge; ++k) {
      acc += out.samples(k, 0) * probe.samples(k + shift, 0);
    }
    if (acc > best) {
      best = acc;
      best_shift = shift;
    }
  }
  CHECK(best_shift == 0);
}

TEST_CASE("out-of-band drift is crushed") {
  FilterOperator f = design(interarea_band(), 15.0);
  SignalFrame drift = sine_frame(0.05, 15.0, 400.0);
  SignalFrame out = apply_zero_phase(f, drift);
  const int edge = f.edge_samples();
  double peak = 0.0;
  for (Eigen::Index k = edge; k < out.n_samples() - edge; ++k) {
    peak = std::max(peak, std::abs(out.samples(k, 0)));
  }
  CHECK(peak < 1.0 / 100.0);
}

TEST_CASE("all-zero input stays zero") {
  FilterOperator f = design(interarea_band(), 15.0);
  SignalFrame zero = sine_frame(0.6, 15.0, 100.0, 0.0);
  SignalFrame out = apply_zero_phase(f, zero);
  CHECK(out.samples.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("short frames are rejected") {
  FilterOperator f = design(interarea_band(), 15.0);
  SignalFrame tiny = sine_frame(0.6, 15.0, 30.0);  // 450 samples < 3 * 201
  CHECK_THROWS_AS(apply_zero_phase(f, tiny), ValidationError);
}

TEST_CASE("interior response equals the combined zero-phase kernel") {
  FilterOperator f = design(interarea_band(), 15.0);
  // impulse in the middle of a long record
  SignalFrame imp = sine_frame(0.6, 15.0, 200.0, 0.0);
  const Eigen::Index mid = imp.n_samples() / 2;
  imp.samples(mid, 0) = 1.0;
  SignalFrame out = apply_zero_phase(f, imp);
  Eigen::VectorXd g = f.zero_phase_kernel();
  const int half = f.num_taps() - 1;
  for (int k = -half; k <= half; ++k) {
    CHECK(out.samples(mid + k, 0) == doctest::Approx(g[k + half]).epsilon(1e-12));
  }
  for (int k = 0; k < g.size(); ++k) CHECK(g[k] == doctest::Approx(g[g.size() - 1 - k]));
}

TEST_CASE("double filtering equals conjugation by the squared response") {
  FilterOperator f = design(interarea_band(), 15.0);
  Rng rng(99);
  SignalFrame noise = sine_frame(0.0, 15.0, 300.0, 0.0);
  for (Eigen::Index k = 0; k < noise.n_samples(); ++k) noise.samples(k, 0) = rng.normal();

  SignalFrame once = apply_zero_phase(f, noise);
  SignalFrame twice = apply_zero_phase(f, once);

  // interior samples of the second pass equal convolution of the first pass
  // with the combined kernel
  Eigen::VectorXd g = f.zero_phase_kernel();
  const int half = f.num_taps() - 1;
  const int edge = 2 * f.num_taps();
  for (Eigen::Index k = edge; k < noise.n_samples() - edge; k += 97) {
    double acc = 0.0;
    for (int m = -half; m <= half; ++m) acc += g[m + half] * once.samples(k - m, 0);
    CHECK(twice.samples(k, 0) == doctest::Approx(acc).epsilon(1e-9));
  }
}

TEST_CASE("filtering commutes with the eigen-transform") {
  GridModel model = testsup::path_model(4, 2.0, 0.5, 0.6);
  EigenSpace space = eigenspace(model);
  FilterOperator f = design(interarea_band(), 15.0);

  Rng rng(5);
  SignalFrame theta;
  theta.rate_hz = 15.0;
  const Eigen::Index n = 15 * 200;
  theta.samples.resize(n, 4);
  for (int b = 0; b < 4; ++b) {
    theta.channels.push_back({b, Quantity::angle, 0.0});
    for (Eigen::Index k = 0; k < n; ++k) theta.samples(k, b) = rng.normal();
  }
  theta.units.assign(4, "rad");

  Eigen::MatrixXd transform =
      space.eigvecs.transpose() * model.inertia.array().sqrt().matrix().asDiagonal();

  SignalFrame transformed = theta;
  transformed.samples = theta.samples * transform.transpose();
  SignalFrame filter_then_transform = apply_zero_phase(f, theta);
  filter_then_transform.samples = filter_then_transform.samples * transform.transpose();
  SignalFrame transform_then_filter = apply_zero_phase(f, transformed);

  CHECK((filter_then_transform.samples - transform_then_filter.samples).cwiseAbs().maxCoeff() <
        1e-10);
}
