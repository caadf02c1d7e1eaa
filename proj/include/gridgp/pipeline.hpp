#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridgp/covariance.hpp"
#include "gridgp/dynamics_sim.hpp"
#include "gridgp/gp_inference.hpp"
#include "gridgp/grid_model.hpp"
#include "gridgp/io.hpp"
#include "gridgp/mom_estimator.hpp"

namespace gridgp {

// One experiment: case + scenario + measurement/filtering setup + estimator
// options + metered/query channel lists. Bus ids here are external case ids.
struct ExperimentConfig {
  enum class Reduction { augment, kron, none };
  enum class MaskPolicy { overlap, full };

  std::string case_path;
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  Reduction reduction = Reduction::augment;

  Scenario scenario;  // target_bus holds the external id until resolved
  MeasurementPipeline pipeline;
  std::optional<BandSpec> band;
  std::optional<TurbineSpec> turbine;

  std::vector<int> metered_buses;
  Quantity metered_quantity = Quantity::speed;
  std::vector<int> query_buses;
  Quantity query_quantity = Quantity::speed;
  double window_start = -1.0;
  double window_end = -1.0;

  std::vector<int> lags = {0};
  MaskPolicy mask_policy = MaskPolicy::overlap;
  bool known_noise = true;

  int impute_bus = -1;
  Quantity impute_quantity = Quantity::speed;
  double impute_gap_start = -1.0;
  std::vector<double> impute_gap_lengths = {0.5, 1.0, 2.0};

  int differentiate_bus = -1;

  std::string raw_text;  // verbatim config document, hashed into manifests

  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct ResultRow {
  int bus_id = 0;
  Quantity quantity = Quantity::speed;
  double time_s = 0.0;
  bool has_truth = false;
  double truth = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double abs_error = 0.0;  // |truth-mean|/omega0 for speed rows, |truth-mean| otherwise
};

struct ResultTable {
  std::vector<ResultRow> rows;
  struct BusSummary {
    int bus_id = 0;
    Quantity quantity = Quantity::speed;
    double mean_abs_error = 0.0;
  };
  std::vector<BusSummary> bus_summaries;
  double global_mae = 0.0;
  bool has_summary = false;

  void finalize(double omega0_unused = 0.0);
};

void write_result_csv(const ResultTable& table, const std::string& path);
ResultTable read_result_csv(const std::string& path);

// Prepared run state shared by the stages.
struct RunContext {
  ExperimentConfig config;
  CaseFile case_file;
  GridModel model;
  EigenSpace space;
  std::optional<FilterOperator> filter;
  int target_bus_index = -1;                 // resolved internal index
  std::vector<int> metered_idx, query_idx;   // internal indices
  double filtered_noise_scale = 1.0;         // ||g||_2 of the zero-phase kernel

  std::string path(const std::string& name) const;
};

RunContext prepare_run(const ExperimentConfig& config);

// Stages; each reads its inputs from the run directory when invoked
// standalone and persists its outputs there.
void stage_simulate(RunContext& rc);
AlphaMatrix stage_estimate_alpha(RunContext& rc);
ResultTable stage_infer(RunContext& rc);
std::vector<std::pair<int, double>> stage_locate(RunContext& rc);  // (bus id, energy) desc
void stage_impute(RunContext& rc);
void stage_differentiate(RunContext& rc);
void stage_report(RunContext& rc);

// simulate -> estimate-alpha -> infer, plus manifest.
ResultTable run_pipeline(const ExperimentConfig& config);

void write_manifest(const RunContext& rc, const std::vector<std::string>& artifacts);

}  // namespace gridgp
