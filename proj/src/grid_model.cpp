#include "gridgp/grid_model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace gridgp {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

double parse_number(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + s + "'", line_no);
  }
}

int parse_int(const std::string& s, int line_no) {
  double v = parse_number(s, line_no);
  int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) throw ParseError("expected an integer, got '" + s + "'", line_no);
  return i;
}

}  // namespace

int CaseFile::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

void CaseFile::validate() const {
  if (buses.empty()) throw ValidationError("case has no buses");
  if (base_freq_hz <= 0) throw ValidationError("base_freq_hz must be positive");
  std::set<int> seen;
  for (const auto& b : buses) {
    if (!seen.insert(b.id).second) {
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    }
  }
  for (const auto& br : branches) {
    if (bus_index(br.from) < 0 || bus_index(br.to) < 0) {
      throw ValidationError("branch references unknown bus " +
                            std::to_string(bus_index(br.from) < 0 ? br.from : br.to));
    }
    if (br.from == br.to) throw ValidationError("branch connects a bus to itself");
    if (!(br.reactance_pu > 0)) throw ValidationError("branch reactance must be positive");
  }
  for (const auto& g : generators) {
    if (bus_index(g.bus) < 0) {
      throw ValidationError("generator references unknown bus " + std::to_string(g.bus));
    }
    if (!(g.inertia_h_s > 0)) throw ValidationError("generator inertia must be positive");
    if (g.damping_pu < 0) throw ValidationError("generator damping must be non-negative");
  }

  // Connectivity over branches.
  const int n = static_cast<int>(buses.size());
  if (n > 1) {
    std::vector<std::vector<int>> adj(n);
    for (const auto& br : branches) {
      int a = bus_index(br.from), b = bus_index(br.to);
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<char> vis(n, 0);
    std::vector<int> stack = {0};
    vis[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : adj[u]) {
        if (!vis[v]) {
          vis[v] = 1;
          ++count;
          stack.push_back(v);
        }
      }
    }
    if (count != n) throw ValidationError("case graph is disconnected");
  }
}

CaseFile parse_case(const std::string& text) {
  CaseFile cf;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  bool saw_bus_section = false;
  while (std::getline(in, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "buses" && section != "branches" && section != "generators") {
        throw ParseError("unknown section [" + section + "]", line_no);
      }
      if (section == "buses") saw_bus_section = true;
      continue;
    }

    auto eq = line.find('=');
    if (section.empty() || (eq != std::string::npos && line.find(',') == std::string::npos)) {
      if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key == "base_freq_hz") {
        cf.base_freq_hz = parse_number(value, line_no);
      } else if (key == "base_mva") {
        cf.base_mva = parse_number(value, line_no);
      } else {
        throw ParseError("unknown key '" + key + "'", line_no);
      }
      continue;
    }

    auto fields = split_fields(line);
    if (section == "buses") {
      if (fields.size() != 2) throw ParseError("bus row needs: id, type", line_no);
      CaseFile::Bus b;
      b.id = parse_int(fields[0], line_no);
      if (fields[1] == "generator") {
        b.type = BusType::generator;
      } else if (fields[1] == "load") {
        b.type = BusType::load;
      } else {
        throw ParseError("bus type must be generator or load, got '" + fields[1] + "'", line_no);
      }
      cf.buses.push_back(b);
    } else if (section == "branches") {
      if (fields.size() != 3) throw ParseError("branch row needs: from, to, reactance_pu", line_no);
      CaseFile::Branch br;
      br.from = parse_int(fields[0], line_no);
      br.to = parse_int(fields[1], line_no);
      br.reactance_pu = parse_number(fields[2], line_no);
      cf.branches.push_back(br);
    } else if (section == "generators") {
      if (fields.size() != 3) throw ParseError("generator row needs: bus, H_s, D_pu", line_no);
      CaseFile::Generator g;
      g.bus = parse_int(fields[0], line_no);
      g.inertia_h_s = parse_number(fields[1], line_no);
      g.damping_pu = parse_number(fields[2], line_no);
      cf.generators.push_back(g);
    }
  }
  if (!saw_bus_section) throw ParseError("case file has no [buses] section");
  cf.validate();
  return cf;
}

CaseFile load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_case(buffer.str());
}

int GridModel::index_of(int bus_id) const {
  for (std::size_t i = 0; i < bus_ids.size(); ++i) {
    if (bus_ids[i] == bus_id) return static_cast<int>(i);
  }
  return -1;
}

void GridModel::validate_dynamic() const {
  if (inertia.size() != n_buses || damping.size() != n_buses) {
    throw ValidationError("model vectors do not match bus count");
  }
  if ((inertia.array() <= 0.0).any()) {
    throw ValidationError("model has non-positive inertia; augment or Kron-reduce first");
  }
  if ((damping.array() < 0.0).any()) throw ValidationError("negative damping");
  double asym = (laplacian - laplacian.transpose()).norm();
  if (asym > 1e-10 * std::max(1.0, laplacian.norm())) {
    throw ValidationError("laplacian is not symmetric");
  }
}

GridModel build_model(const CaseFile& cf, bool augment_virtual_inertia) {
  cf.validate();
  const int n = static_cast<int>(cf.buses.size());
  GridModel m;
  m.n_buses = n;
  m.base_freq_hz = cf.base_freq_hz;
  m.inertia = Eigen::VectorXd::Zero(n);
  m.damping = Eigen::VectorXd::Zero(n);
  m.laplacian = Eigen::MatrixXd::Zero(n, n);
  m.bus_ids.resize(n);
  for (int i = 0; i < n; ++i) m.bus_ids[i] = cf.buses[i].id;

  // Susceptance-weighted graph Laplacian (DC approximation, b = 1/x).
  for (const auto& br : cf.branches) {
    int a = cf.bus_index(br.from), b = cf.bus_index(br.to);
    double w = 1.0 / br.reactance_pu;
    m.laplacian(a, a) += w;
    m.laplacian(b, b) += w;
    m.laplacian(a, b) -= w;
    m.laplacian(b, a) -= w;
  }

  const double w0 = m.omega0();
  for (const auto& g : cf.generators) {
    int i = cf.bus_index(g.bus);
    m.inertia[i] = 2.0 * g.inertia_h_s / w0;
    m.damping[i] = g.damping_pu;
  }
  for (int i = 0; i < n; ++i) {
    if (cf.buses[i].type == BusType::generator && m.inertia[i] <= 0.0) {
      throw ValidationError("generator bus " + std::to_string(cf.buses[i].id) +
                            " has no generator record");
    }
    if (cf.buses[i].type == BusType::load && augment_virtual_inertia) {
      m.inertia[i] = 1e-4;
      m.damping[i] = 0.1;
    }
  }

  double total_inertia = m.inertia.sum();
  if (!(total_inertia > 0.0)) throw ValidationError("non-positive total inertia after construction");
  m.gamma = m.damping.sum() / total_inertia;
  return m;
}

GridModel kron_reduce(const GridModel& model, const std::vector<int>& keep) {
  if (keep.empty()) throw ValidationError("kron_reduce needs a non-empty keep set");
  std::vector<char> is_kept(model.n_buses, 0);
  for (int k : keep) {
    if (k < 0 || k >= model.n_buses) throw ValidationError("keep index out of range");
    if (is_kept[k]) throw ValidationError("duplicate keep index");
    is_kept[k] = 1;
  }
  std::vector<int> kept(keep.begin(), keep.end());
  std::sort(kept.begin(), kept.end());
  std::vector<int> gone;
  for (int i = 0; i < model.n_buses; ++i) {
    if (!is_kept[i]) gone.push_back(i);
  }

  const int nk = static_cast<int>(kept.size());
  const int ne = static_cast<int>(gone.size());
  GridModel out;
  out.n_buses = nk;
  out.base_freq_hz = model.base_freq_hz;
  out.inertia.resize(nk);
  out.damping.resize(nk);
  out.bus_ids.resize(nk);
  for (int i = 0; i < nk; ++i) {
    out.inertia[i] = model.inertia[kept[i]];
    out.damping[i] = model.damping[kept[i]];
    out.bus_ids[i] = model.bus_ids.empty() ? kept[i] : model.bus_ids[kept[i]];
  }

  if (ne == 0) {
    out.laplacian = model.laplacian;
    out.gamma = out.inertia.sum() > 0 ? out.damping.sum() / out.inertia.sum() : 0.0;
    return out;
  }

  Eigen::MatrixXd lkk(nk, nk), lke(nk, ne), lee(ne, ne);
  for (int i = 0; i < nk; ++i) {
    for (int j = 0; j < nk; ++j) lkk(i, j) = model.laplacian(kept[i], kept[j]);
    for (int j = 0; j < ne; ++j) lke(i, j) = model.laplacian(kept[i], gone[j]);
  }
  for (int i = 0; i < ne; ++i) {
    for (int j = 0; j < ne; ++j) lee(i, j) = model.laplacian(gone[i], gone[j]);
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(lee);
  if (!lu.isInvertible()) {
    throw NumericError("singular elimination block: an eliminated subnetwork is isolated");
  }
  Eigen::MatrixXd reduced = lkk - lke * lu.solve(lke.transpose());
  out.laplacian = 0.5 * (reduced + reduced.transpose());
  out.gamma = out.inertia.sum() > 0 ? out.damping.sum() / out.inertia.sum() : 0.0;
  return out;
}

EigenSpace eigenspace(const GridModel& model, const std::optional<BandSpec>& band) {
  model.validate_dynamic();
  Eigen::VectorXd inv_sqrt_m = model.inertia.array().rsqrt();
  Eigen::MatrixXd lm = inv_sqrt_m.asDiagonal() * model.laplacian * inv_sqrt_m.asDiagonal();
  lm = 0.5 * (lm + lm.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lm);
  if (solver.info() != Eigen::Success) throw NumericError("eigensolver failed on L_M");

  EigenSpace space;
  space.eigvecs = solver.eigenvectors();
  space.eigvals = solver.eigenvalues();
  space.gamma = model.gamma;
  if (!space.eigvals.allFinite() || !space.eigvecs.allFinite()) {
    throw NumericError("eigensolver produced non-finite entries");
  }
  if (space.eigvals[0] < -1e-8 * std::max(1.0, space.eigvals.cwiseAbs().maxCoeff())) {
    throw NumericError("L_M has a significantly negative eigenvalue");
  }
  // The structural zero mode must be exactly zero for its closed forms.
  for (Eigen::Index i = 0; i < space.eigvals.size(); ++i) {
    if (std::abs(space.eigvals[i]) < 1e-8) space.eigvals[i] = 0.0;
  }

  for (int i = 0; i < space.eigvals.size(); ++i) {
    if (!band || band->contains_hz(space.resonance_hz(i))) space.retained.push_back(i);
  }
  return space;
}

}  // namespace gridgp
