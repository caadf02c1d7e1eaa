#pragma once

#include <string>
#include <vector>

#include "gridgp/grid_model.hpp"
#include "gridgp/mom_estimator.hpp"
#include "gridgp/signal.hpp"

namespace gridgp {

// Shortest round-trip-exact decimal representation; all CSV/JSON numbers go
// through this so artifacts are byte-stable.
std::string format_double(double v);

// SignalFrame persistence: <base>.csv (header time_s,<quantity>_<busid>,...)
// plus a <base>.json sidecar with rate/units/channels metadata.
void write_frame(const SignalFrame& frame, const std::string& base_path,
                 const std::vector<int>& bus_ids = {});
SignalFrame read_frame(const std::string& base_path);

// Learned alpha with provenance (band, retained indices, data hash).
struct AlphaProvenance {
  std::vector<int> retained;
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
  double gamma = 0.0;
  std::uint64_t data_hash = 0;
};
void write_alpha(const AlphaMatrix& alpha, const AlphaProvenance& prov, const std::string& path);
AlphaMatrix read_alpha(const std::string& path, AlphaProvenance* prov = nullptr);

enum class UnitDirection { to_display, to_internal };

// rad <-> deg, rad/s <-> Hz, normalized per-unit speed <-> rad/s via the
// frame's base frequency. Unknown unit tags throw.
SignalFrame convert_units(const SignalFrame& frame, UnitDirection direction);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::uint64_t hash_file(const std::string& path);

}  // namespace gridgp
