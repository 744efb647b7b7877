#pragma once

// File formats: trajectory CSV (+ JSON sidecar), results CSV, system JSON.

#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/models.hpp"
#include "ikl/system.hpp"
#include "ikl/trajectory.hpp"

namespace ikl {

// Shortest text that is not ambiguous: always 17 significant digits.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json to_json(const SystemSpec& spec) {
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : spec.kernels()) ks.push_back(k.descriptor());
  return {{"d", spec.d()}, {"K", spec.K()}, {"type_of", spec.types()}, {"kernels", ks}};
}

inline SystemSpec system_from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("d").get<int>();
    KernelSet ks;
    for (const auto& k : j.at("kernels")) ks.push_back(kernel_from_json(k));
    if (j.contains("type_of")) return SystemSpec(d, j.at("type_of").get<std::vector<int>>(), ks, j.at("K").get<int>());
    return SystemSpec(d, j.at("type_sizes").get<std::vector<int>>(), ks);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("system description: ") + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << content;
  if (!out) throw FormatError("write failed for '" + path + "'");
}

inline nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

inline void write_trajectory_csv(std::ostream& os, const TrajectoryBatch& batch, const SystemSpec& spec) {
  const bool v = batch.has_velocities();
  os << (v ? "m,l,t,agent,comp,x,v\n" : "m,l,t,agent,comp,x\n");
  const int d = spec.d();
  for (int m = 0; m < batch.M(); ++m) {
    const auto& tr = batch.trajectories[m];
    for (int l = 0; l < batch.L(); ++l) {
      const std::string t = fmt17(batch.times[l]);
      for (int i = 0; i < spec.N(); ++i)
        for (int c = 0; c < d; ++c) {
          os << m << ',' << l << ',' << t << ',' << i << ',' << c << ',' << fmt17(tr.states[l][i * d + c]);
          if (v) os << ',' << fmt17(tr.velocities[l][i * d + c]);
          os << '\n';
        }
    }
  }
}

inline nlohmann::json trajectory_sidecar(const TrajectoryBatch& batch, const SystemSpec& spec) {
  return {{"system", to_json(spec)}, {"seed", batch.seed}, {"times", batch.times}, {"M", batch.M()}};
}

// Writes `path` and `path + ".json"`.
inline void save_trajectories(const std::string& path, const TrajectoryBatch& batch, const SystemSpec& spec) {
  std::ostringstream os;
  write_trajectory_csv(os, batch, spec);
  write_file(path, os.str());
  write_file(path + ".json", trajectory_sidecar(batch, spec).dump(2) + "\n");
}

inline TrajectoryBatch read_trajectory_csv(std::istream& is, const SystemSpec& spec, const std::vector<double>& times) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("trajectory CSV: empty input");
  bool v;
  if (line == "m,l,t,agent,comp,x,v")
    v = true;
  else if (line == "m,l,t,agent,comp,x")
    v = false;
  else
    throw FormatError("trajectory CSV: unexpected header '" + line + "'");
  TrajectoryBatch b;
  b.times = times;
  const int L = static_cast<int>(times.size()), d = spec.d();
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    long m, l, i, c;
    double t, x, vel = 0.0;
    const int want = v ? 7 : 6;
    const int got = v ? std::sscanf(line.c_str(), "%ld,%ld,%lf,%ld,%ld,%lf,%lf", &m, &l, &t, &i, &c, &x, &vel)
                      : std::sscanf(line.c_str(), "%ld,%ld,%lf,%ld,%ld,%lf", &m, &l, &t, &i, &c, &x);
    if (got != want) throw FormatError("trajectory CSV: malformed row " + std::to_string(row));
    if (m < 0 || l < 0 || l >= L || i < 0 || i >= spec.N() || c < 0 || c >= d)
      throw FormatError("trajectory CSV: index out of range at row " + std::to_string(row));
    if (static_cast<std::size_t>(m) >= b.trajectories.size()) b.trajectories.resize(static_cast<std::size_t>(m) + 1);
    auto& tr = b.trajectories[static_cast<std::size_t>(m)];
    if (tr.states.empty()) {
      tr.states.assign(static_cast<std::size_t>(L), State::Constant(spec.dim(), NAN));
      if (v) tr.velocities.assign(static_cast<std::size_t>(L), State::Constant(spec.dim(), NAN));
    }
    tr.states[l][i * d + c] = x;
    if (v) tr.velocities[l][i * d + c] = vel;
  }
  for (const auto& tr : b.trajectories) {
    if (tr.states.empty()) throw FormatError("trajectory CSV: missing trajectory index");
    for (const auto& s : tr.states)
      if (s.hasNaN()) throw FormatError("trajectory CSV: incomplete state grid");
    for (const auto& s : tr.velocities)
      if (s.hasNaN()) throw FormatError("trajectory CSV: incomplete velocity grid");
  }
  return b;
}

struct LoadedTrajectories {
  SystemSpec spec;
  TrajectoryBatch batch;
};

inline LoadedTrajectories load_trajectories(const std::string& path) {
  const auto side = read_json(path + ".json");
  LoadedTrajectories out;
  out.spec = system_from_json(side.at("system"));
  std::istringstream is(read_file(path));
  out.batch = read_trajectory_csv(is, out.spec, side.at("times").get<std::vector<double>>());
  out.batch.seed = side.value("seed", std::uint64_t{0});
  return out;
}

struct ResultRow {
  std::string experiment;
  long M = 0;
  int trial = 0;
  std::string metric;
  std::string window;
  double value = 0.0;
};

inline void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "experiment,M,trial,metric,window,value\n";
  for (const auto& r : rows)
    os << r.experiment << ',' << r.M << ',' << r.trial << ',' << r.metric << ',' << r.window << ','
       << fmt17(r.value) << '\n';
}

inline std::vector<ResultRow> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "experiment,M,trial,metric,window,value")
    throw FormatError("results CSV: unexpected header");
  std::vector<ResultRow> rows;
  std::size_t n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw FormatError("results CSV: row " + std::to_string(n) + " needs 6 fields");
    try {
      rows.push_back({f[0], std::stol(f[1]), std::stoi(f[2]), f[3], f[4], std::stod(f[5])});
    } catch (const std::exception&) {
      throw FormatError("results CSV: bad number in row " + std::to_string(n));
    }
  }
  return rows;
}

}  // namespace ikl
