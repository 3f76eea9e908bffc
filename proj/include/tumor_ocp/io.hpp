#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"

namespace tumor_ocp {

/// 17 significant digits: doubles round-trip exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Field snapshots
//
//   # tumor_ocp snapshot
//   dim 2
//   cells 32 32
//   extent 1 1
//   variable phi
//   time 0.5
//   values 1089
//   <one value per line, row-major, last axis fastest>
//
// A trajectory file is a concatenation of such records.

struct Snapshot {
  Grid grid = Grid::line(1.0, 1);
  std::string variable;
  double time = 0.0;
  Vector values;
};

inline void write_snapshot(std::ostream& os, const Grid& g, const std::string& variable, double time,
                           const Vector& values) {
  require_on_grid(g, values, "snapshot values");
  os << "# tumor_ocp snapshot\n";
  os << "dim " << g.dim() << '\n';
  os << "cells";
  for (int a = 0; a < g.dim(); ++a) os << ' ' << g.cells(a);
  os << "\nextent";
  for (int a = 0; a < g.dim(); ++a) os << ' ' << format_double(g.extent(a));
  os << "\nvariable " << variable << '\n';
  os << "time " << format_double(time) << '\n';
  os << "values " << values.size() << '\n';
  for (Eigen::Index i = 0; i < values.size(); ++i) os << format_double(values[i]) << '\n';
}

namespace detail {

inline bool next_content_line(std::istream& is, std::string& line, int& lineno) {
  while (std::getline(is, line)) {
    ++lineno;
    const auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '#') continue;
    return true;
  }
  return false;
}

inline std::istringstream expect_key(std::istream& is, const char* key, int& lineno, const std::string& src) {
  std::string line;
  if (!next_content_line(is, line, lineno))
    throw StructuralError(src + ": unexpected end of snapshot, expected '" + key + "'");
  std::istringstream ls(line);
  std::string k;
  ls >> k;
  if (k != key)
    throw StructuralError(src + ":" + std::to_string(lineno) + ": expected '" + key + "', got '" + k + "'");
  return ls;
}

}  // namespace detail

/// Reads the next record; returns false at a clean end of stream.  `lineno` tracks position for messages.
inline bool read_snapshot(std::istream& is, Snapshot& out, int& lineno, const std::string& src = "snapshot") {
  std::string line;
  std::streampos mark = is.tellg();
  int probe_line = lineno;
  if (!detail::next_content_line(is, line, probe_line)) return false;
  is.clear();
  is.seekg(mark);

  auto ls = detail::expect_key(is, "dim", lineno, src);
  int dim = 0;
  ls >> dim;
  if (dim < 1 || dim > 3) throw StructuralError(src + ": snapshot dim must be 1, 2 or 3");
  std::array<int, 3> cells{1, 1, 1};
  std::array<double, 3> extent{1.0, 1.0, 1.0};
  ls = detail::expect_key(is, "cells", lineno, src);
  for (int a = 0; a < dim; ++a) ls >> cells[a];
  ls = detail::expect_key(is, "extent", lineno, src);
  for (int a = 0; a < dim; ++a) ls >> extent[a];
  if (!ls) throw StructuralError(src + ": malformed grid header");
  ls = detail::expect_key(is, "variable", lineno, src);
  ls >> out.variable;
  ls = detail::expect_key(is, "time", lineno, src);
  ls >> out.time;
  ls = detail::expect_key(is, "values", lineno, src);
  Eigen::Index n = 0;
  ls >> n;
  out.grid = Grid(dim, extent, cells);
  if (n != out.grid.n_nodes()) throw StructuralError(src + ": value count does not match the grid");
  out.values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!detail::next_content_line(is, line, lineno)) throw StructuralError(src + ": truncated values");
    try {
      out.values[i] = std::stod(line);
    } catch (const std::exception&) {
      throw StructuralError(src + ":" + std::to_string(lineno) + ": not a number: " + line);
    }
  }
  return true;
}

inline bool read_snapshot(std::istream& is, Snapshot& out) {
  int lineno = 0;
  return read_snapshot(is, out, lineno);
}

inline std::vector<Snapshot> read_snapshots(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open snapshot file " + path);
  std::vector<Snapshot> out;
  Snapshot s;
  int lineno = 0;
  while (read_snapshot(is, s, lineno, path)) out.push_back(s);
  if (out.empty()) throw StructuralError(path + ": no snapshot records");
  return out;
}

inline void write_trajectory(std::ostream& os, const TimeMesh& tm, const std::string& variable,
                             const Trajectory& traj, int every = 1) {
  const std::size_t step = every > 0 ? static_cast<std::size_t>(every) : 1;
  for (std::size_t k = 0; k < traj.size(); ++k)
    if (k % step == 0 || k + 1 == traj.size())
      write_snapshot(os, traj.grid(), variable, tm.time(static_cast<int>(k)), traj[k]);
}

// ---------------------------------------------------------------------------
// CSV

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : os_(path), width_(header.size()) {
    if (!os_) throw ConfigError("cannot write " + path);
    write(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw InternalError("csv row width mismatch");
    write(cells);
  }

  static std::string cell(double v) { return format_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }

 private:
  void write(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

  std::ofstream os_;
  std::size_t width_;
};

}  // namespace tumor_ocp
