#include "gridgp/dynamics_sim.hpp"

#include <cmath>

#include "gridgp/common.hpp"

namespace gridgp {

ScenarioKind scenario_kind_from_name(const std::string& name) {
  if (name == "ambient") return ScenarioKind::ambient;
  if (name == "fault_impulse") return ScenarioKind::fault_impulse;
  if (name == "generator_trip") return ScenarioKind::generator_trip;
  throw ParseError("unknown scenario kind '" + name + "'");
}

const char* scenario_kind_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::ambient: return "ambient";
    case ScenarioKind::fault_impulse: return "fault_impulse";
    case ScenarioKind::generator_trip: return "generator_trip";
  }
  return "?";
}

void Scenario::validate(int n_buses) const {
  if (!(duration > 0)) throw ValidationError("scenario duration must be positive");
  if (!(sim_dt > 0)) throw ValidationError("sim_dt must be positive");
  if (ambient_scale < 0) throw ValidationError("ambient_scale must be non-negative");
  if (kind != ScenarioKind::ambient) {
    if (target_bus < 0 || target_bus >= n_buses) {
      throw ValidationError("fault/trip scenario needs a valid target_bus");
    }
  }
}

SignalFrame simulate(const GridModel& model, const Scenario& scenario,
                     const std::optional<TurbineSpec>& turbine, Eigen::Index record_every) {
  model.validate_dynamic();
  scenario.validate(model.n_buses);
  if (turbine) turbine->validate();
  if (record_every < 1) throw ValidationError("record_every must be >= 1");

  const int n = model.n_buses;
  const int nx = turbine ? 3 * n : 2 * n;
  const Eigen::VectorXd inv_m = model.inertia.cwiseInverse();

  // State [theta; omega; (p_c)].
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nx, nx);
  a.block(0, n, n, n).setIdentity();
  a.block(n, 0, n, n) = -(inv_m.asDiagonal() * model.laplacian);
  a.block(n, n, n, n) = Eigen::MatrixXd((-inv_m.cwiseProduct(model.damping)).asDiagonal());
  if (turbine) {
    a.block(n, 2 * n, n, n) = Eigen::MatrixXd(inv_m.asDiagonal());
    // tau dp_c/dt + p_c = -r M omega
    a.block(2 * n, n, n, n) =
        Eigen::MatrixXd((-(turbine->droop_r / turbine->tau) * model.inertia).asDiagonal());
    a.block(2 * n, 2 * n, n, n) = (-1.0 / turbine->tau) * Eigen::MatrixXd::Identity(n, n);
  }

  Eigen::EigenSolver<Eigen::MatrixXd> stability(a, false);
  if (stability.info() != Eigen::Success) throw NumericError("state matrix eigensolve failed");
  double max_re = stability.eigenvalues().real().maxCoeff();
  if (max_re > 1e-9) {
    throw NumericError("unstable model: state eigenvalue with Re = " + std::to_string(max_re));
  }

  // RK4 with zero-order-held input collapses to the linear one-step map
  // x+ = P4(dt A) x + Q(dt A) B p with the usual degree-4 polynomials.
  const double dt = scenario.sim_dt;
  Eigen::MatrixXd ai = Eigen::MatrixXd::Identity(nx, nx);  // (dt A)^{k-1}
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(nx, nx);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(nx, nx);
  double factorial = 1.0;
  for (int k = 1; k <= 4; ++k) {
    factorial *= k;
    q += ai * (dt / factorial);  // dt^k A^{k-1} / k!
    ai = dt * (a * ai);
    phi += ai / factorial;
  }
  // Input enters through B = [0; M^-1; 0].
  Eigen::MatrixXd gamma_in = q.block(0, n, nx, n) * inv_m.asDiagonal();

  const auto steps = static_cast<Eigen::Index>(std::llround(scenario.duration / dt));
  if (steps < 1) throw ValidationError("duration shorter than one step");
  const Eigen::Index event_step = steps / 4;

  Rng rng(scenario.seed, 0);
  const double ambient_step_std = scenario.ambient_scale / std::sqrt(dt);

  SignalFrame frame;
  frame.rate_hz = 1.0 / (dt * static_cast<double>(record_every));
  frame.t0 = 0.0;
  frame.base_freq_hz = model.base_freq_hz;
  const Eigen::Index recorded = (steps + record_every - 1) / record_every;
  frame.samples.resize(recorded, 4 * n);
  for (Quantity q_ : {Quantity::angle, Quantity::speed, Quantity::rocof, Quantity::power}) {
    for (int b = 0; b < n; ++b) frame.channels.push_back({b, q_, 0.0});
  }
  frame.units.assign(static_cast<std::size_t>(n), "rad");
  for (int b = 0; b < n; ++b) frame.units.push_back("rad/s");
  for (int b = 0; b < n; ++b) frame.units.push_back("rad/s2");
  for (int b = 0; b < n; ++b) frame.units.push_back("pu");

  Eigen::VectorXd x = Eigen::VectorXd::Zero(nx);
  Eigen::VectorXd p(n);
  for (Eigen::Index k = 0; k < steps; ++k) {
    p.setZero();
    if (scenario.ambient_scale > 0) {
      for (int b = 0; b < n; ++b) p[b] = ambient_step_std * model.inertia[b] * rng.normal();
    }
    if (scenario.kind == ScenarioKind::fault_impulse && k == event_step) {
      p[scenario.target_bus] += scenario.magnitude / dt;
    }
    if (scenario.kind == ScenarioKind::generator_trip && k >= event_step) {
      p[scenario.target_bus] -= scenario.magnitude;
    }

    if (k % record_every == 0) {
      // Record the state and the input held over [t_k, t_k + dt).
      Eigen::VectorXd rocof = inv_m.cwiseProduct(
          p - model.damping.cwiseProduct(x.segment(n, n)) - model.laplacian * x.head(n));
      if (turbine) rocof += inv_m.cwiseProduct(x.segment(2 * n, n));
      const Eigen::Index row = k / record_every;
      frame.samples.row(row).segment(0, n) = x.head(n);
      frame.samples.row(row).segment(n, n) = x.segment(n, n);
      frame.samples.row(row).segment(2 * n, n) = rocof;
      frame.samples.row(row).segment(3 * n, n) = p;
    }

    x = phi * x + gamma_in * p;
    if (x.cwiseAbs().maxCoeff() > 1e6) {
      throw NumericError("simulation diverged (state norm > 1e6); max state eigenvalue Re = " +
                         std::to_string(max_re));
    }
  }
  return frame;
}

SignalFrame measure(const SignalFrame& truth, const MeasurementPipeline& pipeline,
                    const SelectionSet& channels, std::uint64_t seed) {
  truth.validate();
  channels.validate();
  if (!(pipeline.report_rate_hz > 0)) throw ValidationError("report rate must be positive");
  const double factor_f = truth.rate_hz / pipeline.report_rate_hz;
  const auto factor = static_cast<Eigen::Index>(std::llround(factor_f));
  if (factor < 1 || std::abs(factor_f - static_cast<double>(factor)) > 1e-9 * factor_f) {
    throw ValidationError("report rate must divide the simulation rate");
  }

  const Eigen::Index t_out = (truth.n_samples() + factor - 1) / factor;
  SignalFrame out;
  out.rate_hz = pipeline.report_rate_hz;
  out.t0 = truth.t0;
  out.base_freq_hz = truth.base_freq_hz;
  out.channels = channels.channels;
  out.samples.resize(t_out, static_cast<Eigen::Index>(channels.channels.size()));
  out.units.resize(channels.channels.size());

  for (std::size_t c = 0; c < channels.channels.size(); ++c) {
    const ChannelSpec& ch = channels.channels[c];
    Eigen::Index src = truth.find_channel(ch.bus, ch.quantity);
    if (src < 0) {
      throw ValidationError(std::string("truth frame lacks channel ") + quantity_name(ch.quantity) +
                            "/bus " + std::to_string(ch.bus));
    }
    Rng rng(seed, 0x10000 + c);
    double sigma = 0.0;
    switch (ch.quantity) {
      case Quantity::angle: sigma = pipeline.angle_noise_std; break;
      case Quantity::speed: sigma = pipeline.speed_noise_std; break;
      case Quantity::rocof: sigma = pipeline.rocof_noise_std; break;
      case Quantity::power: sigma = pipeline.power_noise_std; break;
    }
    out.channels[c].noise_std = sigma;
    out.units[c] = truth.units.empty() ? "" : truth.units[static_cast<std::size_t>(src)];

    for (Eigen::Index k = 0; k < t_out; ++k) {
      double value = truth.samples(k * factor, src);
      if (sigma > 0) {
        if (ch.quantity == Quantity::angle) {
          // Unit-magnitude voltage phasor with Cartesian noise.
          double re = std::cos(value) + sigma * rng.normal();
          double im = std::sin(value) + sigma * rng.normal();
          value = std::atan2(im, re);
        } else {
          value += sigma * rng.normal();
        }
      }
      out.samples(k, static_cast<Eigen::Index>(c)) = value;
    }
  }
  return out;
}

SignalFrame eigen_trajectories(const GridModel& model, const EigenSpace& space,
                               const SignalFrame& truth) {
  truth.validate();
  const int n = model.n_buses;
  Eigen::MatrixXd theta(truth.n_samples(), n), omega(truth.n_samples(), n);
  for (int b = 0; b < n; ++b) {
    Eigen::Index ca = truth.find_channel(b, Quantity::angle);
    Eigen::Index cs = truth.find_channel(b, Quantity::speed);
    if (ca < 0 || cs < 0) throw ValidationError("truth frame must contain all angles and speeds");
    theta.col(b) = truth.samples.col(ca);
    omega.col(b) = truth.samples.col(cs);
  }
  Eigen::MatrixXd to_eigen =
      space.eigvecs.transpose() * model.inertia.array().sqrt().matrix().asDiagonal();

  SignalFrame out;
  out.rate_hz = truth.rate_hz;
  out.t0 = truth.t0;
  out.base_freq_hz = truth.base_freq_hz;
  out.samples.resize(truth.n_samples(), 2 * n);
  out.samples.leftCols(n) = theta * to_eigen.transpose();
  out.samples.rightCols(n) = omega * to_eigen.transpose();
  for (int i = 0; i < n; ++i) out.channels.push_back({i, Quantity::angle, 0.0});
  for (int i = 0; i < n; ++i) out.channels.push_back({i, Quantity::speed, 0.0});
  out.units.assign(static_cast<std::size_t>(2 * n), "eigen");
  return out;
}

}  // namespace gridgp
