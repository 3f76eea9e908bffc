#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tumor_ocp/adjoint_solver.hpp"
#include "tumor_ocp/asymptotics.hpp"
#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"
#include "tumor_ocp/io.hpp"
#include "tumor_ocp/optimizer.hpp"
#include "tumor_ocp/params.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

/**
 * Flat run configuration.  Field-valued keys take a specifier string:
 *
 *   constant:c
 *   cosine:amp,offset,k1[,k2[,k3]]          offset + amp Π cos(k_a π x_a / L_a)
 *   gaussian:amp,offset,width,c1[,c2[,c3]]  offset + amp exp(-|x-c|² / (2 width²))
 *   cosine_t:amp,offset,omega,k1[,k2[,k3]]  offset + amp sin(omega π t / T) Π cos(k_a π x_a / L_a)
 *   file:path                               snapshot file (relative to the config file)
 *
 * Space-time keys (targets over Q, controls) evaluate the specifier at the
 * time nodes, or at slice midpoints for controls.  A file there holds either
 * one record (constant in time) or one record per node/slice.
 */
struct RunConfig {
  double alpha = 0.0;
  double beta = 1.0;
  double P = 1.0;
  std::array<double, 5> b{1.0, 0.0, 0.0, 0.0, 0.0};
  double T = 1.0;
  int n_steps = 100;

  int grid_dim = 1;
  std::vector<int> grid_cells{64};
  std::vector<double> grid_extent{1.0};

  std::string potential_kind = "regular_quartic";
  std::vector<double> potential_coefficients;
  double potential_C1 = 3.0;

  double lin_tol = 1e-12;
  std::string newton = "semi_implicit";
  double newton_tol = 1e-10;
  int newton_max_iterations = 30;

  std::string initial_mu = "constant:0";
  std::string initial_phi = "constant:0";
  std::string initial_sigma = "constant:0";

  std::string target_phi_Q = "constant:0";
  std::string target_sigma_Q = "constant:0";
  std::string target_phi_Omega = "constant:0";
  std::string target_sigma_Omega = "constant:0";
  std::string target_generate_from_control;  ///< empty: off

  double control_lower = -1.0;
  double control_upper = 1.0;
  std::string control_u = "constant:0";

  int opt_max_iters = 200;
  double opt_vi_tol = 1e-6;
  double opt_stag_tol = 1e-10;
  double opt_clamp_tol = 1e-5;
  double opt_armijo_c1 = 1e-4;
  double opt_bt_factor = 0.5;
  std::string opt_bb_rule = "short";
  std::string opt_mode = "auto";
  std::string opt_u_ref_path;

  std::string adjoint_scheme = "consistent";

  std::vector<double> sweep_alphas{0.2, 0.1, 0.05, 0.025, 0.0125};
  std::string sweep_kind = "all";
  bool sweep_plain_control_gap = false;

  int gradcheck_directions = 10;
  double gradcheck_epsilon = 1e-6;
  double gradcheck_tol = 1e-2;

  std::string output_dir = "out";
  int snapshot_every = 0;
  std::uint64_t rng_seed = 0;
  std::string log_level = "info";

  std::string base_dir = ".";     ///< directory of the config file; not a key
  std::set<std::string> given;    ///< keys set explicitly; not a key
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(d)) throw ConfigError(key + ": not a finite number: '" + v + "'");
  return d;
}

inline long long to_integer(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (v == a) return v;
    list += list.empty() ? a : std::string(", ") + a;
  }
  throw ConfigError(key + ": expected one of {" + list + "}, got '" + v + "'");
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (const auto& x : xs) {
    if (!s.empty()) s += ", ";
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(x);
    else
      s += std::to_string(x);
  }
  return s;
}

struct FieldSpec {
  std::string kind;
  std::vector<double> args;
  std::string path;
};

inline FieldSpec parse_field_spec(const std::string& key, const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw ConfigError(key + ": field specifier needs the form kind:args, got '" + spec + "'");
  FieldSpec f;
  f.kind = trim(spec.substr(0, colon));
  const std::string rest = trim(spec.substr(colon + 1));
  if (f.kind == "file") {
    if (rest.empty()) throw ConfigError(key + ": file specifier needs a path");
    f.path = rest;
    return f;
  }
  for (const auto& a : split_list(rest)) f.args.push_back(to_double(key, a));
  std::size_t lo = 0, hi = 0;
  if (f.kind == "constant") lo = hi = 1;
  else if (f.kind == "cosine") lo = 3, hi = 5;
  else if (f.kind == "gaussian") lo = 4, hi = 6;
  else if (f.kind == "cosine_t") lo = 4, hi = 6;
  else throw ConfigError(key + ": unknown field kind '" + f.kind + "'");
  if (f.args.size() < lo || f.args.size() > hi)
    throw ConfigError(key + ": " + f.kind + " takes " + std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                      " numbers");
  if (f.kind == "gaussian" && !(f.args[2] > 0.0)) throw ConfigError(key + ": gaussian width must be > 0");
  return f;
}

inline std::string resolve_path(const std::string& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (std::filesystem::path(base) / path).string();
}

/// Analytic specifier at time t; `file` is handled by the callers.
inline Vector eval_analytic(const FieldSpec& f, const Grid& g, double t, double T) {
  Vector v(g.n_nodes());
  for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
    const auto mi = g.multi_index(i);
    if (f.kind == "constant") {
      v[i] = f.args[0];
    } else if (f.kind == "cosine" || f.kind == "cosine_t") {
      const std::size_t k0 = f.kind == "cosine" ? 2 : 3;
      double prod = 1.0;
      for (int a = 0; a < g.dim() && k0 + a < f.args.size(); ++a)
        prod *= std::cos(f.args[k0 + a] * M_PI * g.coordinate(a, mi[a]) / g.extent(a));
      const double amp = f.kind == "cosine" ? f.args[0] : f.args[0] * std::sin(f.args[2] * M_PI * t / T);
      v[i] = f.args[1] + amp * prod;
    } else {
      double r2 = 0.0;
      for (int a = 0; a < g.dim(); ++a) {
        const double c = 3 + a < static_cast<int>(f.args.size()) ? f.args[3 + a] : 0.5 * g.extent(a);
        const double d = g.coordinate(a, mi[a]) - c;
        r2 += d * d;
      }
      v[i] = f.args[1] + f.args[0] * std::exp(-r2 / (2.0 * f.args[2] * f.args[2]));
    }
  }
  return v;
}

inline void check_record_grid(const Snapshot& s, const Grid& g, const std::string& key) {
  if (s.grid != g) throw ConfigError(key + ": snapshot grid does not match grid.*");
}

}  // namespace detail

/// Single field (initial data, terminal targets).
inline Vector eval_field(const std::string& key, const std::string& spec, const Grid& g, const std::string& base_dir) {
  const auto f = detail::parse_field_spec(key, spec);
  if (f.kind != "file") return detail::eval_analytic(f, g, 0.0, 1.0);
  const auto recs = read_snapshots(detail::resolve_path(base_dir, f.path));
  if (recs.size() != 1) throw ConfigError(key + ": expected a single snapshot record");
  detail::check_record_grid(recs[0], g, key);
  return recs[0].values;
}

/// Space-time field: `piecewise` selects n_steps slices at midpoints, else n_steps+1 nodes.
inline Trajectory eval_spacetime(const std::string& key, const std::string& spec, const Grid& g, const TimeMesh& tm,
                                 const std::string& base_dir, bool piecewise) {
  const auto f = detail::parse_field_spec(key, spec);
  const std::size_t n = static_cast<std::size_t>(tm.n_steps()) + (piecewise ? 0 : 1);
  Trajectory out(g, n);
  if (f.kind == "file") {
    const auto recs = read_snapshots(detail::resolve_path(base_dir, f.path));
    if (recs.size() != 1 && recs.size() != n)
      throw ConfigError(key + ": expected 1 or " + std::to_string(n) + " snapshot records, found " +
                        std::to_string(recs.size()));
    for (const auto& r : recs) detail::check_record_grid(r, g, key);
    for (std::size_t k = 0; k < n; ++k) out[k] = recs[recs.size() == 1 ? 0 : k].values;
    return out;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double t = tm.time(static_cast<int>(k)) + (piecewise ? 0.5 * tm.tau() : 0.0);
    out[k] = detail::eval_analytic(f, g, t, tm.T());
  }
  return out;
}

namespace detail {

struct KeyEntry {
  std::string name;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline std::vector<KeyEntry> key_table(RunConfig& c) {
  std::vector<KeyEntry> t;
  auto real = [&t](const std::string& n, double& v) {
    t.push_back({n, [&v, n](const std::string& s) { v = to_double(n, s); }, [&v] { return format_double(v); }});
  };
  auto integer = [&t](const std::string& n, int& v) {
    t.push_back({n,
                 [&v, n](const std::string& s) {
                   const long long i = to_integer(n, s);
                   if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(n + ": out of range");
                   v = static_cast<int>(i);
                 },
                 [&v] { return std::to_string(v); }});
  };
  auto text = [&t](const std::string& n, std::string& v) {
    t.push_back({n, [&v](const std::string& s) { v = s; }, [&v] { return v; }});
  };
  auto choice = [&t](const std::string& n, std::string& v, std::initializer_list<const char*> allowed) {
    std::vector<std::string> al(allowed.begin(), allowed.end());
    t.push_back({n,
                 [&v, n, al](const std::string& s) {
                   std::string list;
                   for (const auto& a : al) {
                     if (s == a) {
                       v = s;
                       return;
                     }
                     list += list.empty() ? a : ", " + a;
                   }
                   throw ConfigError(n + ": expected one of {" + list + "}, got '" + s + "'");
                 },
                 [&v] { return v; }});
  };
  auto field = [&t](const std::string& n, std::string& v) {
    t.push_back({n,
                 [&v, n](const std::string& s) {
                   parse_field_spec(n, s);
                   v = s;
                 },
                 [&v] { return v; }});
  };
  auto reals = [&t](const std::string& n, std::vector<double>& v) {
    t.push_back({n,
                 [&v, n](const std::string& s) {
                   v.clear();
                   for (const auto& x : split_list(s)) v.push_back(to_double(n, x));
                 },
                 [&v] { return join(v); }});
  };

  real("alpha", c.alpha);
  real("beta", c.beta);
  real("P", c.P);
  for (int i = 0; i < 5; ++i) real("b" + std::to_string(i), c.b[i]);
  real("T", c.T);
  integer("n_steps", c.n_steps);
  integer("grid.dim", c.grid_dim);
  t.push_back({"grid.cells",
               [&c](const std::string& s) {
                 c.grid_cells.clear();
                 for (const auto& x : split_list(s)) {
                   const long long i = to_integer("grid.cells", x);
                   if (i < 1 || i > 1 << 20) throw ConfigError("grid.cells: entries must be in [1, 2^20]");
                   c.grid_cells.push_back(static_cast<int>(i));
                 }
               },
               [&c] { return join(c.grid_cells); }});
  reals("grid.extent", c.grid_extent);
  choice("potential.kind", c.potential_kind, {"regular_quartic", "custom"});
  reals("potential.coefficients", c.potential_coefficients);
  real("potential.C1", c.potential_C1);
  real("lin_tol", c.lin_tol);
  choice("newton", c.newton, {"semi_implicit", "full"});
  real("newton_tol", c.newton_tol);
  integer("newton_max_iterations", c.newton_max_iterations);
  field("initial.mu", c.initial_mu);
  field("initial.phi", c.initial_phi);
  field("initial.sigma", c.initial_sigma);
  field("target.phi_Q", c.target_phi_Q);
  field("target.sigma_Q", c.target_sigma_Q);
  field("target.phi_Omega", c.target_phi_Omega);
  field("target.sigma_Omega", c.target_sigma_Omega);
  t.push_back({"target.generate_from_control",
               [&c](const std::string& s) {
                 if (!s.empty()) parse_field_spec("target.generate_from_control", s);
                 c.target_generate_from_control = s;
               },
               [&c] { return c.target_generate_from_control; }});
  real("control.lower", c.control_lower);
  real("control.upper", c.control_upper);
  field("control.u", c.control_u);
  integer("opt.max_iters", c.opt_max_iters);
  real("opt.vi_tol", c.opt_vi_tol);
  real("opt.stag_tol", c.opt_stag_tol);
  real("opt.clamp_tol", c.opt_clamp_tol);
  real("opt.armijo_c1", c.opt_armijo_c1);
  real("opt.bt_factor", c.opt_bt_factor);
  choice("opt.bb_rule", c.opt_bb_rule, {"short", "long"});
  choice("opt.mode", c.opt_mode, {"auto", "cp", "cp_alpha", "cp_tilde"});
  text("opt.u_ref_path", c.opt_u_ref_path);
  choice("adjoint.scheme", c.adjoint_scheme, {"consistent", "backward_euler"});
  reals("sweep.alphas", c.sweep_alphas);
  choice("sweep.kind", c.sweep_kind, {"state", "adjoint", "control", "all"});
  t.push_back({"sweep.plain_control_gap",
               [&c](const std::string& s) { c.sweep_plain_control_gap = to_bool("sweep.plain_control_gap", s); },
               [&c] { return std::string(c.sweep_plain_control_gap ? "true" : "false"); }});
  integer("gradcheck.directions", c.gradcheck_directions);
  real("gradcheck.epsilon", c.gradcheck_epsilon);
  real("gradcheck.tol", c.gradcheck_tol);
  text("output_dir", c.output_dir);
  integer("snapshot_every", c.snapshot_every);
  t.push_back({"rng_seed",
               [&c](const std::string& s) {
                 const long long i = to_integer("rng_seed", s);
                 if (i < 0) throw ConfigError("rng_seed: must be >= 0");
                 c.rng_seed = static_cast<std::uint64_t>(i);
               },
               [&c] { return std::to_string(c.rng_seed); }});
  choice("log_level", c.log_level, {"error", "warn", "info", "debug"});
  return t;
}

}  // namespace detail

/// Checks ranges and the model assumptions; messages name the key.
inline void validate(const RunConfig& c) {
  if (!(c.alpha >= 0.0)) throw ConfigError("alpha must be >= 0 (alpha > 0 relaxed system, alpha = 0 limit system)");
  if (!(c.beta > 0.0)) throw ConfigError("beta must be > 0, assumption (ab)");
  if (!(c.P > 0.0)) throw ConfigError("P must be > 0, assumption (P)");
  bool any = false;
  for (int i = 0; i < 5; ++i) {
    if (!(c.b[i] >= 0.0)) throw ConfigError("b" + std::to_string(i) + " must be >= 0, assumption (constants)");
    any = any || c.b[i] > 0.0;
  }
  if (!any) throw ConfigError("b0..b4 must not all be zero, assumption (constants)");
  if (!(c.control_lower <= c.control_upper))
    throw ConfigError("control.lower must be <= control.upper, assumption (targets) u_* <= u^*");
  if (!(c.T > 0.0)) throw ConfigError("T must be > 0");
  if (c.n_steps < 1) throw ConfigError("n_steps must be >= 1");
  if (c.grid_dim < 1 || c.grid_dim > 3) throw ConfigError("grid.dim must be 1, 2 or 3");
  auto per_axis = [&](std::size_t n, const char* key) {
    if (n != 1 && n != static_cast<std::size_t>(c.grid_dim))
      throw ConfigError(std::string(key) + " needs 1 or grid.dim entries");
  };
  per_axis(c.grid_cells.size(), "grid.cells");
  per_axis(c.grid_extent.size(), "grid.extent");
  for (double e : c.grid_extent)
    if (!(e > 0.0)) throw ConfigError("grid.extent entries must be > 0");
  if (c.potential_kind == "custom" && c.potential_coefficients.empty())
    throw ConfigError("potential.coefficients required when potential.kind = custom");
  if (!(c.potential_C1 > 0.0)) throw ConfigError("potential.C1 must be > 0");
  if (!(c.lin_tol > 0.0 && c.lin_tol < 1.0)) throw ConfigError("lin_tol must lie in (0, 1)");
  if (!(c.newton_tol > 0.0)) throw ConfigError("newton_tol must be > 0");
  if (c.newton_max_iterations < 1) throw ConfigError("newton_max_iterations must be >= 1");
  if (c.opt_max_iters < 0) throw ConfigError("opt.max_iters must be >= 0");
  if (!(c.opt_vi_tol > 0.0)) throw ConfigError("opt.vi_tol must be > 0");
  if (!(c.opt_stag_tol >= 0.0)) throw ConfigError("opt.stag_tol must be >= 0");
  if (!(c.opt_clamp_tol > 0.0)) throw ConfigError("opt.clamp_tol must be > 0");
  if (!(c.opt_armijo_c1 > 0.0 && c.opt_armijo_c1 < 1.0)) throw ConfigError("opt.armijo_c1 must lie in (0, 1)");
  if (!(c.opt_bt_factor > 0.0 && c.opt_bt_factor < 1.0)) throw ConfigError("opt.bt_factor must lie in (0, 1)");
  if (c.opt_mode == "cp" && c.alpha != 0.0) throw ConfigError("opt.mode = cp requires alpha = 0");
  if ((c.opt_mode == "cp_alpha" || c.opt_mode == "cp_tilde") && !(c.alpha > 0.0))
    throw ConfigError("opt.mode = " + c.opt_mode + " requires alpha > 0, assumption (ab)");
  if (c.opt_mode == "cp_tilde" && c.opt_u_ref_path.empty()) throw ConfigError("opt.mode = cp_tilde needs opt.u_ref_path");
  validate_alphas(c.sweep_alphas);
  if (c.gradcheck_directions < 1) throw ConfigError("gradcheck.directions must be >= 1");
  if (!(c.gradcheck_epsilon > 0.0)) throw ConfigError("gradcheck.epsilon must be > 0");
  if (!(c.gradcheck_tol > 0.0)) throw ConfigError("gradcheck.tol must be > 0");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (c.snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
  if (!c.target_generate_from_control.empty()) {
    for (const char* k : {"target.phi_Q", "target.sigma_Q", "target.phi_Omega", "target.sigma_Omega"})
      if (c.given.count(k))
        throw ConfigError(std::string(k) + " conflicts with target.generate_from_control");
  }
}

/// Parses `key = value` lines with optional [section] prefixes and # comments.
inline RunConfig parse_config_text(const std::string& text, const std::string& src = "<config>") {
  RunConfig c;
  auto table = detail::key_table(c);
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = src + ":" + std::to_string(lineno) + ": ";
    // a '#' starts a comment at line start or after whitespace
    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line.resize(i);
        break;
      }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ConfigError(where + "missing key");
    if (!section.empty()) key = section + "." + key;
    auto it = std::find_if(table.begin(), table.end(), [&](const detail::KeyEntry& e) { return e.name == key; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (c.given.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    c.given.insert(key);
  }
  validate(c);
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig c = parse_config_text(ss.str(), path);
  const auto parent = std::filesystem::path(path).parent_path();
  c.base_dir = parent.empty() ? "." : parent.string();
  return c;
}

/// Every key with its resolved value, in a fixed order; parses back to the same configuration.
inline std::string render_config(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::string out;
  for (const auto& e : detail::key_table(c)) {
    const std::string v = e.get();
    out += e.name + " = " + (v.empty() ? "\"\"" : v) + "\n";
  }
  return out;
}

/// Everything a run needs, assembled from a RunConfig.
struct Problem {
  Grid grid;
  TimeMesh tmesh;
  ModelParams params;
  Trajectory control;  ///< control.u on n_steps slices
  std::optional<Trajectory> u_ref;
  StateOptions state;
  AdjointOptions adjoint;
  OptimizeOptions optimize;
};

inline Problem build_problem(const RunConfig& c) {
  std::array<double, 3> extent{1.0, 1.0, 1.0};
  std::array<int, 3> cells{1, 1, 1};
  for (int a = 0; a < c.grid_dim; ++a) {
    extent[a] = c.grid_extent.size() == 1 ? c.grid_extent[0] : c.grid_extent[a];
    cells[a] = c.grid_cells.size() == 1 ? c.grid_cells[0] : c.grid_cells[a];
  }
  const Grid g(c.grid_dim, extent, cells);
  const TimeMesh tm(c.T, c.n_steps);

  ModelParams p = ModelParams::defaults(g, tm);
  p.alpha = c.alpha;
  p.beta = c.beta;
  p.P = c.P;
  p.b = c.b;
  p.potential = c.potential_kind == "custom" ? Potential::custom(c.potential_coefficients, c.potential_C1)
                                             : Potential::regular_quartic(c.potential_C1);
  p.initial.mu0 = eval_field("initial.mu", c.initial_mu, g, c.base_dir);
  p.initial.phi0 = eval_field("initial.phi", c.initial_phi, g, c.base_dir);
  p.initial.sigma0 = eval_field("initial.sigma", c.initial_sigma, g, c.base_dir);
  p.bounds = Box::constant(g, tm, c.control_lower, c.control_upper);

  StateOptions so;
  so.linear.lin_tol = c.lin_tol;
  so.newton = c.newton == "full" ? NewtonMode::full : NewtonMode::semi_implicit;
  so.newton_tol = c.newton_tol;
  so.newton_max_iterations = c.newton_max_iterations;
  AdjointOptions ao;
  ao.linear.lin_tol = c.lin_tol;
  ao.scheme = c.adjoint_scheme == "backward_euler" ? AdjointScheme::backward_euler : AdjointScheme::consistent;

  if (c.target_generate_from_control.empty()) {
    p.targets.phi_Q = eval_spacetime("target.phi_Q", c.target_phi_Q, g, tm, c.base_dir, false);
    p.targets.sigma_Q = eval_spacetime("target.sigma_Q", c.target_sigma_Q, g, tm, c.base_dir, false);
    p.targets.phi_Omega = eval_field("target.phi_Omega", c.target_phi_Omega, g, c.base_dir);
    p.targets.sigma_Omega = eval_field("target.sigma_Omega", c.target_sigma_Omega, g, c.base_dir);
  } else {
    const Trajectory u_true =
        eval_spacetime("target.generate_from_control", c.target_generate_from_control, g, tm, c.base_dir, true);
    const StateTrajectory st = solve_forward(p, g, tm, u_true, so);
    const auto N = static_cast<std::size_t>(tm.n_steps());
    p.targets.phi_Q = st.phi;
    p.targets.sigma_Q = st.sigma;
    p.targets.phi_Omega = st.phi[N];
    p.targets.sigma_Omega = st.sigma[N];
  }
  p.validate(g, tm);

  Trajectory u = eval_spacetime("control.u", c.control_u, g, tm, c.base_dir, true);
  for (std::size_t k = 0; k < u.size(); ++k)
    if ((u[k].array() < c.control_lower).any() || (u[k].array() > c.control_upper).any())
      throw ConfigError("control.u must lie inside [control.lower, control.upper]");

  std::optional<Trajectory> uref;
  if (!c.opt_u_ref_path.empty())
    uref = eval_spacetime("opt.u_ref_path", "file:" + c.opt_u_ref_path, g, tm, c.base_dir, true);

  OptimizeOptions oo;
  oo.max_iters = c.opt_max_iters;
  oo.vi_tol = c.opt_vi_tol;
  oo.stag_tol = c.opt_stag_tol;
  oo.clamp_tol = c.opt_clamp_tol;
  oo.armijo_c1 = c.opt_armijo_c1;
  oo.bt_factor = c.opt_bt_factor;
  oo.bb_rule = c.opt_bb_rule == "long" ? BBRule::long_step : BBRule::short_step;
  oo.seed = c.rng_seed;
  oo.state = so;
  oo.adjoint = ao;

  return Problem{g, tm, std::move(p), std::move(u), std::move(uref), so, ao, oo};
}

}  // namespace tumor_ocp
