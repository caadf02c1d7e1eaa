#include "gridgp/signal.hpp"

namespace gridgp {

Quantity quantity_from_name(const std::string& name) {
  if (name == "angle") return Quantity::angle;
  if (name == "speed") return Quantity::speed;
  if (name == "rocof") return Quantity::rocof;
  if (name == "power") return Quantity::power;
  throw ParseError("unknown quantity '" + name + "'");
}

void SelectionSet::validate() const {
  if (channels.empty()) throw ValidationError("selection set has no channels");
  for (const auto& c : channels) {
    if (c.noise_std < 0) throw ValidationError("negative noise_std");
  }
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) throw ValidationError("selection times not strictly increasing");
  }
}

Eigen::Index SignalFrame::find_channel(int bus, Quantity q) const {
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].bus == bus && channels[c].quantity == q) return static_cast<Eigen::Index>(c);
  }
  return -1;
}

void SignalFrame::validate() const {
  if (rate_hz <= 0) throw ValidationError("signal frame rate must be positive");
  if (samples.cols() != static_cast<Eigen::Index>(channels.size())) {
    throw ValidationError("channel count does not match sample matrix");
  }
  if (!units.empty() && units.size() != channels.size()) {
    throw ValidationError("units metadata does not match channel count");
  }
  if (!samples.allFinite()) throw NumericError("signal frame contains non-finite samples");
}

}  // namespace gridgp
