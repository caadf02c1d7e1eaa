#include "gridgp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gridgp {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string field;
  while (std::getline(ss, field, ',')) {
    field = trim(field);
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

double to_number(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

int to_int(const std::string& v, const std::string& key) {
  double x = to_number(v, key);
  int i = static_cast<int>(x);
  if (static_cast<double>(i) != x) throw ParseError("config key '" + key + "' expects an integer");
  return i;
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("config key '" + key + "' expects true/false");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  for (const auto& f : split_list(v)) out.push_back(to_int(f, key));
  return out;
}

// Window [t_start, t_end): sample indices of a frame inside it.
std::vector<Eigen::Index> window_indices(const SignalFrame& f, double t_start, double t_end) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = 0; k < f.n_samples(); ++k) {
    const double t = f.time(k);
    if (t >= t_start - 1e-12 && t < t_end - 1e-12) idx.push_back(k);
  }
  return idx;
}

SignalFrame slice_rows(const SignalFrame& f, const std::vector<Eigen::Index>& idx) {
  SignalFrame out = f;
  out.samples.resize(static_cast<Eigen::Index>(idx.size()), f.n_channels());
  for (std::size_t r = 0; r < idx.size(); ++r) out.samples.row(static_cast<Eigen::Index>(r)) = f.samples.row(idx[r]);
  out.t0 = idx.empty() ? f.t0 : f.time(idx.front());
  return out;
}

double quantity_noise_std(const MeasurementPipeline& p, Quantity q) {
  switch (q) {
    case Quantity::angle: return p.angle_noise_std;
    case Quantity::speed: return p.speed_noise_std;
    case Quantity::rocof: return p.rocof_noise_std;
    case Quantity::power: return p.power_noise_std;
  }
  return 0.0;
}

const char* reduction_name(ExperimentConfig::Reduction r) {
  switch (r) {
    case ExperimentConfig::Reduction::augment: return "augment";
    case ExperimentConfig::Reduction::kron: return "kron";
    case ExperimentConfig::Reduction::none: return "none";
  }
  return "?";
}

}  // namespace

void ExperimentConfig::validate() const {
  if (case_path.empty()) throw ValidationError("config needs a case path");
  if (metered_buses.empty()) throw ValidationError("config needs metered buses");
  for (int qb : query_buses) {
    for (int mb : metered_buses) {
      if (qb == mb && metered_quantity == query_quantity) {
        throw ValidationError("bus " + std::to_string(qb) +
                              " appears in both metered and query sets for the same quantity");
      }
    }
  }
  if (!(scenario.duration > 0)) throw ValidationError("scenario duration must be positive");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.raw_text = text;
  std::istringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.empty()) continue;  // unset key

    if (section.empty()) {
      if (key == "case") cfg.case_path = value;
      else if (key == "out") cfg.out_dir = value;
      else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_number(value, key));
      else if (key == "reduction") {
        if (value == "augment") cfg.reduction = ExperimentConfig::Reduction::augment;
        else if (value == "kron") cfg.reduction = ExperimentConfig::Reduction::kron;
        else if (value == "none") cfg.reduction = ExperimentConfig::Reduction::none;
        else throw ParseError("reduction must be augment|kron|none", line_no);
      } else throw ParseError("unknown top-level key '" + key + "'", line_no);
    } else if (section == "scenario") {
      if (key == "kind") cfg.scenario.kind = scenario_kind_from_name(value);
      else if (key == "target_bus") cfg.scenario.target_bus = to_int(value, key);
      else if (key == "magnitude") cfg.scenario.magnitude = to_number(value, key);
      else if (key == "ambient_scale") cfg.scenario.ambient_scale = to_number(value, key);
      else if (key == "duration") cfg.scenario.duration = to_number(value, key);
      else if (key == "sim_dt") cfg.scenario.sim_dt = to_number(value, key);
      else throw ParseError("unknown scenario key '" + key + "'", line_no);
    } else if (section == "pipeline") {
      if (key == "report_rate") cfg.pipeline.report_rate_hz = to_number(value, key);
      else if (key == "angle_noise_std") cfg.pipeline.angle_noise_std = to_number(value, key);
      else if (key == "speed_noise_std") cfg.pipeline.speed_noise_std = to_number(value, key);
      else if (key == "rocof_noise_std") cfg.pipeline.rocof_noise_std = to_number(value, key);
      else if (key == "power_noise_std") cfg.pipeline.power_noise_std = to_number(value, key);
      else throw ParseError("unknown pipeline key '" + key + "'", line_no);
    } else if (section == "band") {
      if (!cfg.band) cfg.band.emplace();
      if (key == "enabled") {
        if (!to_bool(value, key)) cfg.band.reset();
      } else if (key == "low_hz") cfg.band->low_hz = to_number(value, key);
      else if (key == "high_hz") cfg.band->high_hz = to_number(value, key);
      else if (key == "transition_hz") cfg.band->transition_hz = to_number(value, key);
      else if (key == "num_taps") cfg.band->num_taps = to_int(value, key);
      else throw ParseError("unknown band key '" + key + "'", line_no);
    } else if (section == "turbine") {
      if (!cfg.turbine) cfg.turbine.emplace();
      if (key == "tau") cfg.turbine->tau = to_number(value, key);
      else if (key == "droop_r") cfg.turbine->droop_r = to_number(value, key);
      else throw ParseError("unknown turbine key '" + key + "'", line_no);
    } else if (section == "metered") {
      if (key == "buses") cfg.metered_buses = to_int_list(value, key);
      else if (key == "quantity") cfg.metered_quantity = quantity_from_name(value);
      else throw ParseError("unknown metered key '" + key + "'", line_no);
    } else if (section == "query") {
      if (key == "buses") cfg.query_buses = to_int_list(value, key);
      else if (key == "quantity") cfg.query_quantity = quantity_from_name(value);
      else if (key == "window_start") cfg.window_start = to_number(value, key);
      else if (key == "window_end") cfg.window_end = to_number(value, key);
      else throw ParseError("unknown query key '" + key + "'", line_no);
    } else if (section == "estimator") {
      if (key == "lags") cfg.lags = to_int_list(value, key);
      else if (key == "mask_policy") {
        if (value == "overlap") cfg.mask_policy = ExperimentConfig::MaskPolicy::overlap;
        else if (value == "full") cfg.mask_policy = ExperimentConfig::MaskPolicy::full;
        else throw ParseError("mask_policy must be overlap|full", line_no);
      } else if (key == "known_noise") cfg.known_noise = to_bool(value, key);
      else throw ParseError("unknown estimator key '" + key + "'", line_no);
    } else if (section == "impute") {
      if (key == "bus") cfg.impute_bus = to_int(value, key);
      else if (key == "quantity") cfg.impute_quantity = quantity_from_name(value);
      else if (key == "gap_start") cfg.impute_gap_start = to_number(value, key);
      else if (key == "gap_lengths") {
        cfg.impute_gap_lengths.clear();
        for (const auto& f : split_list(value)) cfg.impute_gap_lengths.push_back(to_number(f, key));
      } else throw ParseError("unknown impute key '" + key + "'", line_no);
    } else if (section == "differentiate") {
      if (key == "bus") cfg.differentiate_bus = to_int(value, key);
      else throw ParseError("unknown differentiate key '" + key + "'", line_no);
    } else {
      throw ParseError("unknown section [" + section + "]", line_no);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

void ResultTable::finalize(double) {
  bus_summaries.clear();
  double total = 0.0;
  Eigen::Index counted = 0;
  std::vector<std::pair<int, Quantity>> keys;
  for (const auto& r : rows) {
    if (!r.has_truth) continue;
    total += r.abs_error;
    ++counted;
    bool seen = false;
    for (auto& k : keys) seen = seen || (k.first == r.bus_id && k.second == r.quantity);
    if (!seen) keys.push_back({r.bus_id, r.quantity});
  }
  for (const auto& [bus, q] : keys) {
    double acc = 0.0;
    Eigen::Index n = 0;
    for (const auto& r : rows) {
      if (r.has_truth && r.bus_id == bus && r.quantity == q) {
        acc += r.abs_error;
        ++n;
      }
    }
    bus_summaries.push_back({bus, q, acc / static_cast<double>(n)});
  }
  global_mae = counted > 0 ? total / static_cast<double>(counted) : 0.0;
  has_summary = counted > 0;
}

void write_result_csv(const ResultTable& table, const std::string& path) {
  std::ostringstream out;
  out << "row_type,bus,quantity,time_s,truth,mean,std,abs_error\n";
  for (const auto& r : table.rows) {
    out << "sample," << r.bus_id << "," << quantity_name(r.quantity) << ","
        << format_double(r.time_s) << ",";
    if (r.has_truth) out << format_double(r.truth);
    out << "," << format_double(r.mean) << "," << format_double(r.std) << ",";
    if (r.has_truth) out << format_double(r.abs_error);
    out << "\n";
  }
  for (const auto& s : table.bus_summaries) {
    out << "bus_summary," << s.bus_id << "," << quantity_name(s.quantity) << ",,,,,"
        << format_double(s.mean_abs_error) << "\n";
  }
  if (table.has_summary) {
    out << "global,,,,,,," << format_double(table.global_mae) << "\n";
  }
  write_text_file(path, out.str());
}

ResultTable read_result_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty result csv");
  ResultTable table;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    f.resize(8);
    if (f[0] == "sample") {
      ResultRow r;
      r.bus_id = to_int(f[1], "bus");
      r.quantity = quantity_from_name(f[2]);
      r.time_s = to_number(f[3], "time_s");
      r.has_truth = !f[4].empty();
      if (r.has_truth) {
        r.truth = to_number(f[4], "truth");
        r.abs_error = to_number(f[7], "abs_error");
      }
      r.mean = to_number(f[5], "mean");
      r.std = to_number(f[6], "std");
      table.rows.push_back(r);
    } else if (f[0] == "bus_summary") {
      table.bus_summaries.push_back(
          {to_int(f[1], "bus"), quantity_from_name(f[2]), to_number(f[7], "mae")});
      table.has_summary = true;
    } else if (f[0] == "global") {
      table.global_mae = to_number(f[7], "mae");
      table.has_summary = true;
    } else {
      throw ParseError("unknown result row type '" + f[0] + "'", line_no);
    }
  }
  return table;
}

std::string RunContext::path(const std::string& name) const {
  return config.out_dir + "/" + name;
}

RunContext prepare_run(const ExperimentConfig& config) {
  config.validate();
  RunContext rc;
  rc.config = config;
  rc.case_file = load_case(config.case_path);

  switch (config.reduction) {
    case ExperimentConfig::Reduction::augment:
      rc.model = build_model(rc.case_file, true);
      break;
    case ExperimentConfig::Reduction::none:
      rc.model = build_model(rc.case_file, false);
      break;
    case ExperimentConfig::Reduction::kron: {
      GridModel full = build_model(rc.case_file, false);
      std::vector<int> keep;
      for (std::size_t i = 0; i < rc.case_file.buses.size(); ++i) {
        if (rc.case_file.buses[i].type == BusType::generator) keep.push_back(static_cast<int>(i));
      }
      rc.model = kron_reduce(full, keep);
      break;
    }
  }
  rc.model.validate_dynamic();
  rc.space = eigenspace(rc.model, config.band);
  if (rc.space.retained.empty()) {
    throw ValidationError("no eigenstate resonances inside the configured band");
  }

  if (config.band) {
    rc.filter = design(*config.band, config.pipeline.report_rate_hz);
    rc.filtered_noise_scale = rc.filter->zero_phase_kernel().norm();
  }

  auto resolve = [&](int external_id, const char* what) {
    int idx = rc.model.index_of(external_id);
    if (idx < 0) {
      throw ValidationError(std::string(what) + " bus " + std::to_string(external_id) +
                            " not present in the reduced model");
    }
    return idx;
  };
  for (int b : config.metered_buses) rc.metered_idx.push_back(resolve(b, "metered"));
  for (int b : config.query_buses) rc.query_idx.push_back(resolve(b, "query"));
  if (config.scenario.kind != ScenarioKind::ambient) {
    rc.target_bus_index = resolve(config.scenario.target_bus, "scenario target");
  }

  std::filesystem::create_directories(config.out_dir);
  return rc;
}

namespace {

Scenario resolved_scenario(const RunContext& rc) {
  Scenario s = rc.config.scenario;
  s.seed = rc.config.seed;
  if (s.kind != ScenarioKind::ambient) s.target_bus = rc.target_bus_index;
  return s;
}

double edge_time(const RunContext& rc) {
  return rc.filter ? rc.filter->edge_samples() / rc.config.pipeline.report_rate_hz : 0.0;
}

// Query window with defaults: starts after the filter edge, spans at most
// 30 s, ends before the trailing edge.
std::pair<double, double> query_window(const RunContext& rc) {
  const double edge = edge_time(rc);
  double ws = rc.config.window_start >= 0 ? rc.config.window_start : edge;
  double we = rc.config.window_end >= 0 ? rc.config.window_end
                                        : std::min(ws + 30.0, rc.config.scenario.duration - edge);
  if (ws < edge - 1e-9 || we > rc.config.scenario.duration - edge + 1e-9 || ws >= we) {
    throw ValidationError("query window must lie inside the filter-edge-free interior");
  }
  return {ws, we};
}

SelectionSet metered_selection(const RunContext& rc, const std::vector<double>& times) {
  SelectionSet sel;
  const double raw = quantity_noise_std(rc.config.pipeline, rc.config.metered_quantity);
  const double sigma = raw * (rc.filter ? rc.filtered_noise_scale : 1.0);
  for (int idx : rc.metered_idx) sel.channels.push_back({idx, rc.config.metered_quantity, sigma});
  sel.times = times;
  return sel;
}

CovarianceContext make_context(const RunContext& rc, const AlphaMatrix& alpha) {
  CovarianceContext ctx;
  ctx.model = &rc.model;
  ctx.space = &rc.space;
  ctx.alpha = alpha.values;
  ctx.filter = rc.filter;
  ctx.turbine = rc.config.turbine;
  return ctx;
}

}  // namespace

void stage_simulate(RunContext& rc) {
  const auto record_every = static_cast<Eigen::Index>(
      std::llround(1.0 / (rc.config.scenario.sim_dt * rc.config.pipeline.report_rate_hz)));
  const double factor = 1.0 / (rc.config.scenario.sim_dt * rc.config.pipeline.report_rate_hz);
  if (record_every < 1 || std::abs(factor - static_cast<double>(record_every)) > 1e-9 * factor) {
    throw ValidationError("report rate must divide the simulation rate");
  }

  SignalFrame truth = simulate(rc.model, resolved_scenario(rc), rc.config.turbine, record_every);
  write_frame(truth, rc.path("truth"), rc.model.bus_ids);

  SelectionSet metered;
  for (int idx : rc.metered_idx) metered.channels.push_back({idx, rc.config.metered_quantity, 0.0});
  metered.times = {};  // measure() ignores times
  MeasurementPipeline p = rc.config.pipeline;
  p.report_rate_hz = truth.rate_hz;  // truth is already at the reporting rate
  SignalFrame measured = measure(truth, p, metered, rc.config.seed);
  write_frame(measured, rc.path("measured"), rc.model.bus_ids);

  SignalFrame filtered = rc.filter ? apply_zero_phase(*rc.filter, measured) : measured;
  write_frame(filtered, rc.path("filtered"), rc.model.bus_ids);
  SignalFrame truth_filtered = rc.filter ? apply_zero_phase(*rc.filter, truth) : truth;
  write_frame(truth_filtered, rc.path("truth_filtered"), rc.model.bus_ids);
}

AlphaMatrix stage_estimate_alpha(RunContext& rc) {
  SignalFrame filtered = read_frame(rc.path("filtered"));
  const double edge = edge_time(rc);
  SignalFrame interior = slice_rows(
      filtered, window_indices(filtered, edge, rc.config.scenario.duration - edge));

  std::vector<SampleCovariance> covs;
  for (int lag : rc.config.lags) covs.push_back(sample_cov(interior, lag));

  BoolMatrix mask = rc.config.mask_policy == ExperimentConfig::MaskPolicy::overlap
                        ? overlap_mask(rc.space)
                        : BoolMatrix::Constant(rc.space.n_retained(), rc.space.n_retained(), true);

  const Eigen::Index m = static_cast<Eigen::Index>(rc.metered_idx.size());
  NoiseSpec noise = NoiseSpec::all_unknown(m);
  if (rc.config.known_noise) {
    const double raw = quantity_noise_std(rc.config.pipeline, rc.config.metered_quantity);
    const double sigma = raw * (rc.filter ? rc.filtered_noise_scale : 1.0);
    noise = NoiseSpec::all_known(Eigen::VectorXd::Constant(m, sigma * sigma));
  }

  std::vector<ChannelSpec> channels;
  for (int idx : rc.metered_idx) channels.push_back({idx, rc.config.metered_quantity, 0.0});
  AlphaFit fit = fit_alpha(covs, rc.model, rc.space, mask, noise, channels, rc.filter,
                           rc.config.turbine);

  AlphaProvenance prov;
  prov.retained = rc.space.retained;
  if (rc.config.band) {
    prov.band_low_hz = rc.config.band->low_hz;
    prov.band_high_hz = rc.config.band->high_hz;
  }
  prov.gamma = rc.space.gamma;
  prov.data_hash = hash_file(rc.path("filtered") + ".csv");
  write_alpha(fit.alpha, prov, rc.path("alpha.json"));
  return fit.alpha;
}

ResultTable stage_infer(RunContext& rc) {
  SignalFrame filtered = read_frame(rc.path("filtered"));
  AlphaMatrix alpha = read_alpha(rc.path("alpha.json"));
  const auto [ws, we] = query_window(rc);
  const std::vector<Eigen::Index> idx = window_indices(filtered, ws, we);
  if (idx.size() < 2) throw ValidationError("query window holds fewer than 2 samples");
  std::vector<double> times;
  for (Eigen::Index k : idx) times.push_back(filtered.time(k));

  SelectionSet measured = metered_selection(rc, times);
  Eigen::VectorXd data(measured.size());
  for (std::size_t c = 0; c < measured.channels.size(); ++c) {
    const Eigen::Index col = filtered.find_channel(measured.channels[c].bus, rc.config.metered_quantity);
    if (col < 0) throw ValidationError("filtered frame is missing a metered channel");
    for (std::size_t k = 0; k < idx.size(); ++k) data[measured.flat(c, k)] = filtered.samples(idx[k], col);
  }

  SelectionSet query;
  for (int q : rc.query_idx) query.channels.push_back({q, rc.config.query_quantity, 0.0});
  query.times = times;

  InferenceProblem problem;
  problem.measured = measured;
  problem.data = data;
  problem.query = query;
  problem.context = make_context(rc, alpha);
  PosteriorEstimate post = posterior(problem);

  // Truth columns compare against the filtered truth: the estimand is the
  // band-limited component.
  ResultTable table;
  bool have_truth = std::filesystem::exists(rc.path("truth_filtered") + ".csv");
  SignalFrame truth;
  if (have_truth) truth = read_frame(rc.path("truth_filtered"));
  const double w0 = rc.model.omega0();
  for (std::size_t c = 0; c < query.channels.size(); ++c) {
    const int bus_idx = query.channels[c].bus;
    Eigen::Index tcol = have_truth ? truth.find_channel(bus_idx, rc.config.query_quantity) : -1;
    for (std::size_t k = 0; k < times.size(); ++k) {
      ResultRow r;
      r.bus_id = rc.model.bus_ids[static_cast<std::size_t>(bus_idx)];
      r.quantity = rc.config.query_quantity;
      r.time_s = times[k];
      r.mean = post.mean[query.flat(c, k)];
      r.std = post.std[query.flat(c, k)];
      if (tcol >= 0) {
        r.has_truth = true;
        r.truth = truth.samples(idx[k], tcol);
        const double scale = r.quantity == Quantity::speed ? w0 : 1.0;
        r.abs_error = std::abs(r.truth - r.mean) / scale;
      }
      table.rows.push_back(r);
    }
  }
  table.finalize();
  write_result_csv(table, rc.path("result.csv"));
  return table;
}

std::vector<std::pair<int, double>> stage_locate(RunContext& rc) {
  SignalFrame filtered = read_frame(rc.path("filtered"));
  AlphaMatrix alpha = read_alpha(rc.path("alpha.json"));
  const auto [ws, we] = query_window(rc);
  const std::vector<Eigen::Index> idx = window_indices(filtered, ws, we);
  std::vector<double> times;
  for (Eigen::Index k : idx) times.push_back(filtered.time(k));

  SelectionSet measured = metered_selection(rc, times);
  Eigen::VectorXd data(measured.size());
  for (std::size_t c = 0; c < measured.channels.size(); ++c) {
    const Eigen::Index col = filtered.find_channel(measured.channels[c].bus, rc.config.metered_quantity);
    if (col < 0) throw ValidationError("filtered frame is missing a metered channel");
    for (std::size_t k = 0; k < idx.size(); ++k) data[measured.flat(c, k)] = filtered.samples(idx[k], col);
  }

  SelectionSet query;
  for (int b = 0; b < rc.model.n_buses; ++b) query.channels.push_back({b, Quantity::power, 0.0});
  query.times = times;

  InferenceProblem problem;
  problem.measured = measured;
  problem.data = data;
  problem.query = query;
  problem.context = make_context(rc, alpha);
  PosteriorEstimate post = posterior(problem);

  // Rank buses by the energy of the inferred filtered injection.
  const double dt = 1.0 / filtered.rate_hz;
  std::vector<std::pair<int, double>> ranking;
  for (std::size_t c = 0; c < query.channels.size(); ++c) {
    double energy = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double v = post.mean[query.flat(c, k)];
      energy += v * v * dt;
    }
    ranking.push_back({rc.model.bus_ids[static_cast<std::size_t>(query.channels[c].bus)], energy});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::ostringstream out;
  out << "bus,injection_energy\n";
  for (const auto& [bus, energy] : ranking) out << bus << "," << format_double(energy) << "\n";
  write_text_file(rc.path("locate.csv"), out.str());
  return ranking;
}

void stage_impute(RunContext& rc) {
  if (rc.config.impute_bus < 0 || rc.config.impute_gap_start < 0) {
    throw ValidationError("impute stage needs [impute] bus and gap_start");
  }
  SignalFrame filtered = read_frame(rc.path("filtered"));
  const int bus_idx = rc.model.index_of(rc.config.impute_bus);
  if (bus_idx < 0) throw ValidationError("impute bus not in model");
  const Eigen::Index col = filtered.find_channel(bus_idx, rc.config.impute_quantity);
  if (col < 0) throw ValidationError("impute channel not in filtered frame");

  const auto [ws, we] = query_window(rc);
  const double gap0 = rc.config.impute_gap_start;
  std::vector<double> lengths = rc.config.impute_gap_lengths;
  const double max_len = *std::max_element(lengths.begin(), lengths.end());
  if (gap0 < ws || gap0 + max_len > we) {
    throw ValidationError("imputation gap must lie inside the query window");
  }

  // Hyperparameters come from the longest observed segment under the widest
  // gap, shared across gap lengths so the nested-conditioning monotonicity
  // is exact.
  const std::vector<Eigen::Index> pre = window_indices(filtered, ws, gap0);
  const std::vector<Eigen::Index> post_idx = window_indices(filtered, gap0 + max_len, we);
  const std::vector<Eigen::Index>& fit_idx = pre.size() >= post_idx.size() ? pre : post_idx;
  if (fit_idx.size() < 30) throw ValidationError("not enough observed samples to fit a kernel");
  SignalFrame fit_frame = slice_rows(filtered, fit_idx);
  ModelFreeKernel kernel = fit_model_free(fit_frame, col);

  const double sigma = std::sqrt(kernel.noise_var);
  std::ostringstream out;
  out << "gap_length_s,n_gap,avg_posterior_std,rms_error\n";

  bool have_truth = std::filesystem::exists(rc.path("truth_filtered") + ".csv");
  SignalFrame truth;
  Eigen::Index tcol = -1;
  if (have_truth) {
    truth = read_frame(rc.path("truth_filtered"));
    tcol = truth.find_channel(bus_idx, rc.config.impute_quantity);
  }

  for (double len : lengths) {
    std::vector<Eigen::Index> gap_idx = window_indices(filtered, gap0, gap0 + len);
    std::vector<Eigen::Index> window_idx = window_indices(filtered, ws, we);
    InferenceProblem p;
    p.model_free = kernel;
    ChannelSpec meas{bus_idx, rc.config.impute_quantity, sigma};
    p.measured.channels = {meas};
    ChannelSpec qch{bus_idx, rc.config.impute_quantity, 0.0};
    p.query.channels = {qch};
    p.query_orders = {0};
    std::vector<double> mdata;
    for (Eigen::Index k : window_idx) {
      const double t = filtered.time(k);
      if (t >= gap0 - 1e-12 && t < gap0 + len - 1e-12) continue;
      p.measured.times.push_back(t);
      mdata.push_back(filtered.samples(k, col) - kernel.mean_offset);
    }
    p.data = Eigen::Map<Eigen::VectorXd>(mdata.data(), static_cast<Eigen::Index>(mdata.size()));
    for (Eigen::Index k : gap_idx) p.query.times.push_back(filtered.time(k));
    PosteriorEstimate est = posterior(p);

    double acc_std = est.std.sum() / static_cast<double>(est.std.size());
    double rms = 0.0;
    if (tcol >= 0) {
      for (std::size_t k = 0; k < gap_idx.size(); ++k) {
        const double err = est.mean[static_cast<Eigen::Index>(k)] - truth.samples(gap_idx[k], tcol);
        rms += err * err;
      }
      rms = std::sqrt(rms / static_cast<double>(gap_idx.size()));
    }
    out << format_double(len) << "," << gap_idx.size() << "," << format_double(acc_std) << ","
        << format_double(rms) << "\n";
  }
  write_text_file(rc.path("impute.csv"), out.str());
}

void stage_differentiate(RunContext& rc) {
  if (rc.config.differentiate_bus < 0) {
    throw ValidationError("differentiate stage needs [differentiate] bus");
  }
  SignalFrame filtered = read_frame(rc.path("filtered"));
  const int bus_idx = rc.model.index_of(rc.config.differentiate_bus);
  if (bus_idx < 0) throw ValidationError("differentiate bus not in model");
  const Eigen::Index col = filtered.find_channel(bus_idx, Quantity::angle);
  if (col < 0) throw ValidationError("differentiate needs a metered angle channel on that bus");

  const auto [ws, we] = query_window(rc);
  const std::vector<Eigen::Index> idx = window_indices(filtered, ws, we);
  SignalFrame win = slice_rows(filtered, idx);
  std::vector<double> qt;
  for (Eigen::Index k : idx) qt.push_back(filtered.time(k));
  PosteriorEstimate est = differentiate(win, col, qt);

  ResultTable table;
  bool have_truth = std::filesystem::exists(rc.path("truth_filtered") + ".csv");
  SignalFrame truth;
  Eigen::Index tcol = -1;
  if (have_truth) {
    truth = read_frame(rc.path("truth_filtered"));
    tcol = truth.find_channel(bus_idx, Quantity::speed);
  }
  const double w0 = rc.model.omega0();
  for (std::size_t k = 0; k < qt.size(); ++k) {
    ResultRow r;
    r.bus_id = rc.config.differentiate_bus;
    r.quantity = Quantity::speed;
    r.time_s = qt[k];
    r.mean = est.mean[static_cast<Eigen::Index>(k)];
    r.std = est.std[static_cast<Eigen::Index>(k)];
    if (tcol >= 0) {
      r.has_truth = true;
      r.truth = truth.samples(idx[k], tcol);
      r.abs_error = std::abs(r.truth - r.mean) / w0;
    }
    table.rows.push_back(r);
  }
  table.finalize();
  write_result_csv(table, rc.path("derivative.csv"));
}

void stage_report(RunContext& rc) {
  ResultTable stored = read_result_csv(rc.path("result.csv"));
  ResultTable recomputed;
  recomputed.rows = stored.rows;
  recomputed.finalize();
  if (stored.has_summary) {
    if (std::abs(stored.global_mae - recomputed.global_mae) > 1e-12) {
      throw NumericError("stored summary MAE disagrees with recomputation");
    }
    for (const auto& s : stored.bus_summaries) {
      bool matched = false;
      for (const auto& r : recomputed.bus_summaries) {
        if (r.bus_id == s.bus_id && r.quantity == s.quantity) {
          if (std::abs(r.mean_abs_error - s.mean_abs_error) > 1e-12) {
            throw NumericError("stored bus summary disagrees with recomputation");
          }
          matched = true;
        }
      }
      if (!matched) throw NumericError("stored bus summary has no recomputed counterpart");
    }
  }
  std::ostringstream out;
  out << "bus,quantity,mean_abs_error\n";
  for (const auto& s : recomputed.bus_summaries) {
    out << s.bus_id << "," << quantity_name(s.quantity) << "," << format_double(s.mean_abs_error)
        << "\n";
  }
  out << "all,," << format_double(recomputed.global_mae) << "\n";
  write_text_file(rc.path("summary.csv"), out.str());
}

void write_manifest(const RunContext& rc, const std::vector<std::string>& artifacts) {
  json j;
  j["version"] = kVersion;
  j["seed"] = rc.config.seed;
  j["config_text"] = rc.config.raw_text;
  j["config_hash"] = fnv1a(rc.config.raw_text);
  j["case_hash"] = hash_file(rc.config.case_path);
  j["reduction"] = reduction_name(rc.config.reduction);
  json arts;
  for (const auto& name : artifacts) {
    const std::string p = rc.path(name);
    if (std::filesystem::exists(p)) arts[name] = hash_file(p);
  }
  j["artifacts"] = arts;
  write_text_file(rc.path("manifest.json"), j.dump(2) + "\n");
}

ResultTable run_pipeline(const ExperimentConfig& config) {
  RunContext rc = prepare_run(config);
  stage_simulate(rc);
  stage_estimate_alpha(rc);
  ResultTable table = stage_infer(rc);
  write_manifest(rc, {"truth.csv", "measured.csv", "filtered.csv", "truth_filtered.csv",
                      "alpha.json", "result.csv"});
  return table;
}

}  // namespace gridgp
