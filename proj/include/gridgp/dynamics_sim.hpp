#pragma once

#include <cstdint>
#include <optional>

#include "gridgp/grid_model.hpp"
#include "gridgp/signal.hpp"

namespace gridgp {

enum class ScenarioKind { ambient, fault_impulse, generator_trip };

ScenarioKind scenario_kind_from_name(const std::string& name);
const char* scenario_kind_name(ScenarioKind kind);

// Disturbance description. Ambient input is zero-mean white Gaussian with
// E[p(t+tau) p(t)^T] = ambient_scale^2 M^2 delta(tau); faults are unit-area
// impulses and trips are steps, both at t = duration/4 on target_bus.
// ambient_scale > 0 adds the ambient background to any kind.
struct Scenario {
  ScenarioKind kind = ScenarioKind::ambient;
  int target_bus = -1;
  double magnitude = 1.0;      // impulse area (pu*s) / trip step (pu)
  double ambient_scale = 0.1;  // sigma
  double duration = 60.0;      // s
  double sim_dt = 1e-3;        // s
  std::uint64_t seed = 0;

  void validate(int n_buses) const;
};

struct MeasurementPipeline {
  double angle_noise_std = 0.01;   // rad, applied in Cartesian voltage form
  double speed_noise_std = 0.005;  // rad/s
  double rocof_noise_std = 0.0;    // rad/s^2
  double power_noise_std = 0.02;   // pu
  double report_rate_hz = 15.0;
};

// Integrates the linearized swing dynamics (optionally with turbine/droop
// states) by fixed-step RK4 under zero-order-held inputs. Returns all four
// quantities for every bus at the simulation rate; record_every > 1 keeps
// every k-th step (integration still runs at sim_dt) so long ambient runs
// stay in memory.
SignalFrame simulate(const GridModel& model, const Scenario& scenario,
                     const std::optional<TurbineSpec>& turbine = std::nullopt,
                     Eigen::Index record_every = 1);

// Decimates to the reporting rate (sample picking, no anti-alias filter) and
// adds per-quantity measurement noise; angle noise goes through the
// Cartesian voltage form. Streams are keyed by (seed, channel).
SignalFrame measure(const SignalFrame& truth, const MeasurementPipeline& pipeline,
                    const SelectionSet& channels, std::uint64_t seed);

// y = V^T M^1/2 theta and dy = V^T M^1/2 omega per sample; channel bus index
// is the eigenstate index. Test instrumentation.
SignalFrame eigen_trajectories(const GridModel& model, const EigenSpace& space,
                               const SignalFrame& truth);

}  // namespace gridgp
