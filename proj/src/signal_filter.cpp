#include "gridgp/signal_filter.hpp"

#include <cmath>
#include <sstream>

namespace gridgp {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Ideal low-pass impulse response (cutoff in cycles/sample) at offset k from
// the center tap.
double sinc_lp(double cutoff, int k) {
  if (k == 0) return 2.0 * cutoff;
  return std::sin(2.0 * kPi * cutoff * k) / (kPi * k);
}

}  // namespace

void BandSpec::validate(double rate_hz) const {
  if (!(low_hz >= 0.0) || !(low_hz < high_hz) || !(high_hz < rate_hz / 2.0)) {
    throw ValidationError("band requires 0 <= low < high < rate/2");
  }
  if (num_taps < 31 || num_taps % 2 == 0) {
    throw ValidationError("num_taps must be odd and >= 31");
  }
  if (transition_hz <= 0.0) throw ValidationError("transition width must be positive");
}

double FilterOperator::gain_at(double f_hz) const {
  const int n = num_taps();
  const int mid = (n - 1) / 2;
  // Symmetric taps: real zero-centered amplitude response.
  double re = taps[mid];
  for (int k = 1; k <= mid; ++k) {
    re += 2.0 * taps[mid + k] * std::cos(2.0 * kPi * f_hz / sample_rate_hz * k);
  }
  return std::abs(re);
}

Eigen::VectorXd FilterOperator::zero_phase_kernel() const {
  const int n = num_taps();
  // Forward pass then reversed pass equals correlation of the taps with
  // themselves: g[r] = sum_k h[k] h[k+r].
  Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * n - 1);
  for (int r = -(n - 1); r <= n - 1; ++r) {
    double acc = 0.0;
    for (int k = std::max(0, -r); k < std::min(n, n - r); ++k) acc += taps[k] * taps[k + r];
    g[r + n - 1] = acc;
  }
  return g;
}

FilterOperator design(const BandSpec& band, double rate_hz) {
  band.validate(rate_hz);
  const int n = band.num_taps;
  const int mid = (n - 1) / 2;
  const bool lowpass = band.low_hz <= 0.0;

  // Ideal cutoffs centered inside the transition bands.
  const double fc_low = lowpass ? 0.0 : (band.low_hz - 0.5 * band.transition_hz) / rate_hz;
  const double fc_high = (band.high_hz + 0.5 * band.transition_hz) / rate_hz;
  if (fc_high >= 0.5) throw ValidationError("upper transition band exceeds Nyquist");
  if (!lowpass && fc_low <= 0.0) throw ValidationError("lower transition band extends below DC");

  FilterOperator f;
  f.taps.resize(n);
  f.sample_rate_hz = rate_hz;
  f.pass_low_hz = band.low_hz;
  f.pass_high_hz = band.high_hz;
  for (int i = 0; i < n; ++i) {
    const int k = i - mid;
    double ideal = lowpass ? sinc_lp(fc_high, k) : sinc_lp(fc_high, k) - sinc_lp(fc_low, k);
    // Centered Hamming form keeps the taps bitwise symmetric.
    double window = 0.54 + 0.46 * std::cos(2.0 * kPi * k / (n - 1));
    f.taps[i] = ideal * window;
  }

  // Normalize to unit gain at the passband center (DC for a low-pass).
  const double f_center = lowpass ? 0.0 : 0.5 * (band.low_hz + band.high_hz);
  const double g0 = f.gain_at(f_center);
  if (g0 <= 0.0) throw NumericError("filter design yielded zero passband gain");
  f.taps /= g0;

  // Verify the realized response: <1 dB ripple in the passband, >40 dB
  // attenuation beyond the transition bands, on a 1024-point grid.
  const double pass_floor = std::pow(10.0, -1.0 / 20.0);
  const double stop_ceil = std::pow(10.0, -40.0 / 20.0);
  double worst_pass = 1.0, worst_stop = 0.0;
  const int grid = 1024;
  for (int i = 0; i <= grid; ++i) {
    const double fz = 0.5 * rate_hz * i / grid;
    const double g = f.gain_at(fz);
    if (fz >= band.low_hz && fz <= band.high_hz) worst_pass = std::min(worst_pass, g);
    const bool in_stop = (!lowpass && fz <= band.low_hz - band.transition_hz) ||
                         (fz >= band.high_hz + band.transition_hz);
    if (in_stop) worst_stop = std::max(worst_stop, g);
  }
  if (worst_pass < pass_floor || worst_stop > stop_ceil) {
    std::ostringstream msg;
    msg << "filter spec unachievable at " << n << " taps: passband min gain " << worst_pass
        << ", stopband max gain " << worst_stop << " (" << -20.0 * std::log10(worst_stop)
        << " dB attenuation)";
    throw NumericError(msg.str());
  }
  return f;
}

Eigen::VectorXd apply_zero_phase(const FilterOperator& filter, const Eigen::VectorXd& x) {
  const int n = filter.num_taps();
  const int pad = n;
  const Eigen::Index len = x.size();
  if (len <= 3 * static_cast<Eigen::Index>(n)) {
    throw ValidationError("frame too short for zero-phase filtering (need > 3*num_taps samples)");
  }

  // Odd-symmetric reflection about both endpoints.
  Eigen::VectorXd z(len + 2 * pad);
  for (int k = 0; k < pad; ++k) z[k] = 2.0 * x[0] - x[pad - k];
  z.segment(pad, len) = x;
  for (int k = 0; k < pad; ++k) z[pad + len + k] = 2.0 * x[len - 1] - x[len - 2 - k];

  auto conv_full = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size() + n - 1);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double vi = v[i];
      if (vi == 0.0) continue;
      for (int k = 0; k < n; ++k) out[i + k] += vi * filter.taps[k];
    }
    return out;
  };

  Eigen::VectorXd a = conv_full(z);
  Eigen::VectorXd c = conv_full(a.reverse());
  // After forward+backward passes the zero-phase sample aligned with z[i]
  // sits at reversed index i + (n-1).
  Eigen::VectorXd d = c.reverse();
  return d.segment(pad + n - 1, len);
}

SignalFrame apply_zero_phase(const FilterOperator& filter, const SignalFrame& frame) {
  frame.validate();
  SignalFrame out = frame;
  for (Eigen::Index c = 0; c < frame.n_channels(); ++c) {
    out.samples.col(c) = apply_zero_phase(filter, Eigen::VectorXd(frame.samples.col(c)));
  }
  return out;
}

}  // namespace gridgp
