#include "gridgp/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gridgp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

using nlohmann::json;

json frame_sidecar(const SignalFrame& frame, const std::vector<int>& bus_ids) {
  json channels = json::array();
  for (std::size_t c = 0; c < frame.channels.size(); ++c) {
    const ChannelSpec& ch = frame.channels[c];
    json jc;
    jc["bus_index"] = ch.bus;
    jc["bus_id"] = bus_ids.empty() ? ch.bus : bus_ids[static_cast<std::size_t>(ch.bus)];
    jc["quantity"] = quantity_name(ch.quantity);
    jc["noise_std"] = ch.noise_std;
    jc["unit"] = frame.units.empty() ? "" : frame.units[c];
    channels.push_back(jc);
  }
  json j;
  j["rate_hz"] = frame.rate_hz;
  j["t0"] = frame.t0;
  j["base_freq_hz"] = frame.base_freq_hz;
  j["n_samples"] = frame.n_samples();
  j["channels"] = channels;
  return j;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
}

std::uint64_t hash_file(const std::string& path) { return fnv1a(read_text_file(path)); }

void write_frame(const SignalFrame& frame, const std::string& base_path,
                 const std::vector<int>& bus_ids) {
  frame.validate();
  std::ostringstream csv;
  csv << "time_s";
  for (const auto& ch : frame.channels) {
    const int id = bus_ids.empty() ? ch.bus : bus_ids[static_cast<std::size_t>(ch.bus)];
    csv << "," << quantity_name(ch.quantity) << "_" << id;
  }
  csv << "\n";
  for (Eigen::Index k = 0; k < frame.n_samples(); ++k) {
    csv << format_double(frame.time(k));
    for (Eigen::Index c = 0; c < frame.n_channels(); ++c) {
      csv << "," << format_double(frame.samples(k, c));
    }
    csv << "\n";
  }
  write_text_file(base_path + ".csv", csv.str());
  write_text_file(base_path + ".json", frame_sidecar(frame, bus_ids).dump(2) + "\n");
}

SignalFrame read_frame(const std::string& base_path) {
  json j = json::parse(read_text_file(base_path + ".json"));
  SignalFrame frame;
  frame.rate_hz = j.at("rate_hz").get<double>();
  frame.t0 = j.at("t0").get<double>();
  frame.base_freq_hz = j.at("base_freq_hz").get<double>();
  for (const auto& jc : j.at("channels")) {
    ChannelSpec ch;
    ch.bus = jc.at("bus_index").get<int>();
    ch.quantity = quantity_from_name(jc.at("quantity").get<std::string>());
    ch.noise_std = jc.at("noise_std").get<double>();
    frame.channels.push_back(ch);
    frame.units.push_back(jc.at("unit").get<std::string>());
  }

  std::string csv = read_text_file(base_path + ".csv");
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty frame csv");
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + field + "'", line_no);
      }
    }
    if (row.size() != frame.channels.size() + 1) {
      throw ParseError("csv row width does not match channel count", line_no);
    }
    rows.push_back(row);
  }
  frame.samples.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(frame.channels.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < frame.channels.size(); ++c) {
      frame.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c + 1];
    }
  }
  frame.validate();
  return frame;
}

void write_alpha(const AlphaMatrix& alpha, const AlphaProvenance& prov, const std::string& path) {
  alpha.validate();
  json j;
  const Eigen::Index d = alpha.dim();
  j["dim"] = d;
  json values = json::array(), mask = json::array();
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index jj = 0; jj < d; ++jj) {
      values.push_back(alpha.values(i, jj));
      mask.push_back(static_cast<bool>(alpha.mask(i, jj)));
    }
  }
  j["values_row_major"] = values;
  j["mask_row_major"] = mask;
  j["retained"] = prov.retained;
  j["band_low_hz"] = prov.band_low_hz;
  j["band_high_hz"] = prov.band_high_hz;
  j["gamma"] = prov.gamma;
  j["data_hash"] = prov.data_hash;
  write_text_file(path, j.dump(2) + "\n");
}

AlphaMatrix read_alpha(const std::string& path, AlphaProvenance* prov) {
  json j = json::parse(read_text_file(path));
  const Eigen::Index d = j.at("dim").get<Eigen::Index>();
  AlphaMatrix alpha;
  alpha.values.resize(d, d);
  alpha.mask.resize(d, d);
  const auto& values = j.at("values_row_major");
  const auto& mask = j.at("mask_row_major");
  if (static_cast<Eigen::Index>(values.size()) != d * d ||
      static_cast<Eigen::Index>(mask.size()) != d * d) {
    throw ParseError("alpha json has inconsistent dimensions");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index jj = 0; jj < d; ++jj) {
      alpha.values(i, jj) = values[static_cast<std::size_t>(i * d + jj)].get<double>();
      alpha.mask(i, jj) = mask[static_cast<std::size_t>(i * d + jj)].get<bool>();
    }
  }
  if (prov) {
    prov->retained = j.at("retained").get<std::vector<int>>();
    prov->band_low_hz = j.at("band_low_hz").get<double>();
    prov->band_high_hz = j.at("band_high_hz").get<double>();
    prov->gamma = j.at("gamma").get<double>();
    prov->data_hash = j.at("data_hash").get<std::uint64_t>();
  }
  alpha.validate();
  return alpha;
}

SignalFrame convert_units(const SignalFrame& frame, UnitDirection direction) {
  frame.validate();
  if (frame.units.size() != frame.channels.size()) {
    throw ValidationError("convert_units requires units metadata");
  }
  SignalFrame out = frame;
  const double w0 = kTwoPi * frame.base_freq_hz;
  for (std::size_t c = 0; c < frame.units.size(); ++c) {
    const std::string& unit = frame.units[c];
    double scale = 1.0;
    std::string target = unit;
    if (direction == UnitDirection::to_display) {
      if (unit == "rad") {
        scale = 180.0 / kPi;
        target = "deg";
      } else if (unit == "rad/s") {
        scale = 1.0 / kTwoPi;
        target = "hz";
      } else if (unit == "rad/s2") {
        scale = 1.0 / kTwoPi;
        target = "hz/s";
      } else if (unit == "pu_speed") {
        scale = frame.base_freq_hz;  // omega/omega0 -> Hz
        target = "hz";
      } else if (unit == "pu" || unit == "deg" || unit == "hz" || unit == "hz/s" ||
                 unit == "eigen" || unit.empty()) {
        // already display-friendly
      } else {
        throw ValidationError("unknown unit tag '" + unit + "'");
      }
    } else {
      if (unit == "deg") {
        scale = kPi / 180.0;
        target = "rad";
      } else if (unit == "hz") {
        scale = kTwoPi;
        target = "rad/s";
      } else if (unit == "hz/s") {
        scale = kTwoPi;
        target = "rad/s2";
      } else if (unit == "pu_speed") {
        scale = w0;
        target = "rad/s";
      } else if (unit == "pu" || unit == "rad" || unit == "rad/s" || unit == "rad/s2" ||
                 unit == "eigen" || unit.empty()) {
        // already internal
      } else {
        throw ValidationError("unknown unit tag '" + unit + "'");
      }
    }
    if (scale != 1.0) out.samples.col(static_cast<Eigen::Index>(c)) *= scale;
    out.units[c] = target;
  }
  return out;
}

}  // namespace gridgp
