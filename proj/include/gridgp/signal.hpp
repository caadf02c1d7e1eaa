#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gridgp/common.hpp"

namespace gridgp {

// Which dynamic signal a channel carries. angle/speed/rocof are the rotor
// state chain; power is the injection, reconstructed through the swing
// identity p = M*dw/dt + D*w + L*theta rather than carrying its own kernel.
enum class Quantity { angle, speed, rocof, power };

inline const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::angle: return "angle";
    case Quantity::speed: return "speed";
    case Quantity::rocof: return "rocof";
    case Quantity::power: return "power";
  }
  return "?";
}

Quantity quantity_from_name(const std::string& name);

// One measured or queried signal: a bus, what it carries, and the std of its
// additive noise in internal units (rad, rad/s, rad/s^2, pu).
struct ChannelSpec {
  int bus = 0;
  Quantity quantity = Quantity::speed;
  double noise_std = 0.0;
};

// A set of (channel, time) variables; every channel is sampled at every time.
struct SelectionSet {
  std::vector<ChannelSpec> channels;
  std::vector<double> times;  // strictly increasing, seconds

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(channels.size() * times.size());
  }
  // Variables are ordered channel-major: index = channel*|times| + time.
  Eigen::Index flat(std::size_t channel, std::size_t time) const {
    return static_cast<Eigen::Index>(channel * times.size() + time);
  }
  void validate() const;
};

// Multichannel uniformly sampled time series; the unit of all measurement and
// query exchange. samples is T x C.
struct SignalFrame {
  double rate_hz = 0.0;
  double t0 = 0.0;
  std::vector<ChannelSpec> channels;
  Eigen::MatrixXd samples;
  std::vector<std::string> units;  // per channel: rad, deg, rad/s, hz, pu, pu_speed, rad/s2
  double base_freq_hz = 60.0;

  Eigen::Index n_samples() const { return samples.rows(); }
  Eigen::Index n_channels() const { return samples.cols(); }
  double time(Eigen::Index k) const { return t0 + static_cast<double>(k) / rate_hz; }

  // Index of the first channel matching (bus, quantity); -1 if absent.
  Eigen::Index find_channel(int bus, Quantity q) const;
  void validate() const;
};

}  // namespace gridgp
