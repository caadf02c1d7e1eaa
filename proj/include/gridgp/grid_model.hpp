#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gridgp/signal_filter.hpp"

namespace gridgp {

enum class BusType { generator, load };

// Parsed case file; see cases/FORMAT.md for the grammar.
struct CaseFile {
  struct Bus {
    int id = 0;
    BusType type = BusType::load;
  };
  struct Branch {
    int from = 0;
    int to = 0;
    double reactance_pu = 0.0;
  };
  struct Generator {
    int bus = 0;
    double inertia_h_s = 0.0;
    double damping_pu = 0.0;
  };

  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  double base_freq_hz = 60.0;
  double base_mva = 100.0;

  int bus_index(int id) const;  // -1 if unknown
  void validate() const;
};

// Turbine/droop augmentation parameters: T = tau*I and R^-1 = r*M.
struct TurbineSpec {
  double tau = 1.0;
  double droop_r = 0.0;

  void validate() const {
    if (!(tau > 0.0)) throw ValidationError("turbine tau must be positive");
    if (droop_r < 0.0) throw ValidationError("droop coefficient must be non-negative");
  }
};

// Reduced dynamic network: per-bus inertia M (s^2*pu/rad) and damping D (pu),
// susceptance Laplacian L (pu/rad), and the uniform damping ratio gamma.
struct GridModel {
  int n_buses = 0;
  Eigen::VectorXd inertia;
  Eigen::VectorXd damping;
  Eigen::MatrixXd laplacian;
  double base_freq_hz = 60.0;
  double gamma = 0.0;

  std::vector<int> bus_ids;  // external ids, parallel to internal indices

  double omega0() const { return 2.0 * 3.14159265358979323846 * base_freq_hz; }
  int index_of(int bus_id) const;
  // Requires strictly positive inertia everywhere (after augmentation or
  // Kron reduction).
  void validate_dynamic() const;
};

// Eigendecomposition of L_M = M^-1/2 L M^-1/2 with the retained band-limited
// eigenstate indices.
struct EigenSpace {
  Eigen::MatrixXd eigvecs;  // orthonormal columns V
  Eigen::VectorXd eigvals;  // ascending, rad^2/s^2
  double gamma = 0.0;
  std::vector<int> retained;

  Eigen::Index dim() const { return eigvals.size(); }
  Eigen::Index n_retained() const { return static_cast<Eigen::Index>(retained.size()); }
  double resonance_hz(int i) const {
    return std::sqrt(std::max(eigvals[i], 0.0)) / (2.0 * 3.14159265358979323846);
  }
};

CaseFile load_case(const std::string& path);
CaseFile parse_case(const std::string& text);

// M_n = 2 H_n / (2 pi f0) at generator buses. With augment, non-generator
// buses get inertia 1e-4 and damping 0.1; without it they stay at zero and
// the model must be Kron-reduced before use.
GridModel build_model(const CaseFile& case_file, bool augment_virtual_inertia);

// Schur-complement elimination of all buses not in `keep` (internal indices).
GridModel kron_reduce(const GridModel& model, const std::vector<int>& keep);

EigenSpace eigenspace(const GridModel& model, const std::optional<BandSpec>& band = std::nullopt);

}  // namespace gridgp
