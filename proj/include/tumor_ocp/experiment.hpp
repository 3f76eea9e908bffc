#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tumor_ocp/adjoint_solver.hpp"
#include "tumor_ocp/asymptotics.hpp"
#include "tumor_ocp/config.hpp"
#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/io.hpp"
#include "tumor_ocp/objective.hpp"
#include "tumor_ocp/optimizer.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int internal = 1;
inline constexpr int config = 2;
inline constexpr int solver = 3;
inline constexpr int not_converged = 4;
}  // namespace exit_code

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel parse_log_level(const std::string& s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  throw ConfigError("log_level: expected error, warn, info or debug, got '" + s + "'");
}

/// Timestamped lines to stderr and to run.log; nothing else carries wall-clock data.
class Logger {
 public:
  Logger(LogLevel level, const std::filesystem::path& file) : level_(level), file_(file, std::ios::app) {}

  void log(LogLevel l, const std::string& msg) {
    if (l > level_) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream line;
    line << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " [" << names[static_cast<int>(l)] << "] " << msg;
    std::cerr << line.str() << '\n';
    if (file_) file_ << line.str() << '\n';
  }
  void error(const std::string& m) { log(LogLevel::error, m); }
  void warn(const std::string& m) { log(LogLevel::warn, m); }
  void info(const std::string& m) { log(LogLevel::info, m); }
  void debug(const std::string& m) { log(LogLevel::debug, m); }

 private:
  LogLevel level_;
  std::ofstream file_;
};

namespace detail {

using nlohmann::json;

inline std::vector<std::string> norm_header(const std::string& v) { return {v + "_L2", v + "_H1", v + "_Linf"}; }

inline void append_norms(std::vector<std::string>& row, const Norms& n) {
  row.push_back(CsvWriter::cell(n.L2));
  row.push_back(CsvWriter::cell(n.H1));
  row.push_back(CsvWriter::cell(n.Linf));
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json cost_json(const CostBreakdown& c) {
  return {{"j_phiQ", c.j_phiQ},       {"j_phiT", c.j_phiT},       {"j_sigmaQ", c.j_sigmaQ}, {"j_sigmaT", c.j_sigmaT},
          {"j_control", c.j_control}, {"adapted_term", c.adapted_term}, {"total", c.total}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline void write_state_csv(const std::filesystem::path& path, const StateTrajectory& st) {
  std::vector<std::string> header{"step", "time"};
  for (const char* v : {"mu", "phi", "sigma"})
    for (auto& h : norm_header(v)) header.push_back(h);
  header.push_back("phi_lap_L2");
  header.push_back("conservation");
  CsvWriter csv(path.string(), header);
  for (std::size_t k = 0; k < st.report.steps.size(); ++k) {
    const auto& s = st.report.steps[k];
    std::vector<std::string> row{CsvWriter::cell(k), CsvWriter::cell(s.time)};
    append_norms(row, s.mu);
    append_norms(row, s.phi);
    append_norms(row, s.sigma);
    row.push_back(CsvWriter::cell(s.phi_lap_L2));
    row.push_back(CsvWriter::cell(s.conservation));
    csv.row(row);
  }
}

inline json state_summary(const StateTrajectory& st) {
  const auto& r = st.report;
  return {{"alpha", st.alpha},
          {"conservation_residual", r.conservation_residual},
          {"linear_solves", r.linear_solves},
          {"newton_iterations", r.newton_iterations},
          {"max_linear_residual", r.max_linear_residual},
          {"phi_linf_h1", r.phi_linf_h1},
          {"mu_l2_h1", r.mu_l2_h1},
          {"sigma_linf_l2", r.sigma_linf_l2},
          {"sigma_l2_h1", r.sigma_l2_h1},
          {"sqrt_alpha_mu_linf_l2", r.sqrt_alpha_mu_linf_l2}};
}

inline void write_snapshots(const std::filesystem::path& dir, const TimeMesh& tm, int every,
                            const std::vector<std::pair<std::string, const Trajectory*>>& vars) {
  if (every <= 0) return;
  std::filesystem::create_directories(dir);
  for (const auto& [name, traj] : vars) {
    std::ofstream os(dir / (name + ".snap"));
    if (!os) throw ConfigError("cannot write snapshot " + name);
    write_trajectory(os, tm, name, *traj, every);
  }
}

inline ProblemKind problem_kind(const RunConfig& c) {
  if (c.opt_mode == "cp") return ProblemKind::cp;
  if (c.opt_mode == "cp_alpha") return ProblemKind::cp_alpha;
  if (c.opt_mode == "cp_tilde") return ProblemKind::cp_tilde;
  return c.alpha == 0.0 ? ProblemKind::cp : ProblemKind::cp_alpha;
}

inline int run_forward(const RunConfig& c, const Problem& pb, const std::filesystem::path& out, Logger& log,
                       std::ostream& os) {
  const StateTrajectory st = solve_forward(pb.params, pb.grid, pb.tmesh, pb.control, pb.state);
  write_state_csv(out / "forward_steps.csv", st);
  write_snapshots(out / "snapshots", pb.tmesh, c.snapshot_every,
                  {{"mu", &st.mu}, {"phi", &st.phi}, {"sigma", &st.sigma}});
  const CostBreakdown cb = cost(pb.params, st, pb.control);
  json j = {{"subcommand", "forward"}, {"state", state_summary(st)}, {"cost", cost_json(cb)}};
  write_json(out / "summary.json", j);
  log.info("forward: conservation residual " + format_double(st.report.conservation_residual));
  os << "conservation_residual " << format_double(st.report.conservation_residual) << '\n'
     << "cost " << format_double(cb.total) << '\n';
  return exit_code::ok;
}

inline int run_adjoint(const RunConfig& c, const Problem& pb, const std::filesystem::path& out, Logger& log,
                       std::ostream& os) {
  const StateTrajectory st = solve_forward(pb.params, pb.grid, pb.tmesh, pb.control, pb.state);
  const AdjointTrajectory adj = solve_adjoint(pb.params, pb.grid, pb.tmesh, st, pb.adjoint);
  std::vector<std::string> header{"step", "time"};
  for (const char* v : {"q", "p", "r", "w"})
    for (auto& h : norm_header(v)) header.push_back(h);
  {
    CsvWriter csv((out / "adjoint_steps.csv").string(), header);
    for (std::size_t k = 0; k < adj.report.steps.size(); ++k) {
      const auto& s = adj.report.steps[k];
      std::vector<std::string> row{CsvWriter::cell(k), CsvWriter::cell(s.time)};
      append_norms(row, s.q);
      append_norms(row, s.p);
      append_norms(row, s.r);
      append_norms(row, s.w);
      csv.row(row);
    }
  }
  const auto& r = adj.report;
  const std::vector<std::pair<std::string, double>> bounds{
      {"w_linf_l2", r.w_linf_l2},     {"w_l2_h1", r.w_l2_h1},
      {"q_l2_h1", r.q_l2_h1},         {"sqrt_alpha_p_linf_h1", r.sqrt_alpha_p_linf_h1},
      {"alpha_dt_p_l2_l2", r.alpha_dt_p_l2_l2}, {"p_l2_w", r.p_l2_w},
      {"r_linf_l2", r.r_linf_l2},     {"r_l2_h1", r.r_l2_h1},
      {"k2_total", r.k2_total}};
  {
    CsvWriter csv((out / "adjoint_bounds.csv").string(), {"quantity", "value"});
    for (const auto& [k, v] : bounds) csv.row({k, CsvWriter::cell(v)});
  }
  write_snapshots(out / "snapshots", pb.tmesh, c.snapshot_every, {{"q", &adj.q}, {"p", &adj.p}, {"r", &adj.r}});
  json jb;
  for (const auto& [k, v] : bounds) jb[k] = v;
  json j = {{"subcommand", "adjoint"},
            {"scheme", to_string(adj.scheme)},
            {"state", state_summary(st)},
            {"adjoint", {{"linear_solves", r.linear_solves}, {"max_linear_residual", r.max_linear_residual}, {"bounds", jb}}}};
  write_json(out / "summary.json", j);
  log.info("adjoint: K2 estimate " + format_double(r.k2_total));
  os << "k2_total " << format_double(r.k2_total) << '\n';
  return exit_code::ok;
}

inline int run_optimize(const RunConfig& c, const Problem& pb, const std::filesystem::path& out, Logger& log,
                        std::ostream& os) {
  OptimizeMode mode{problem_kind(c), pb.u_ref};
  const Control u0(pb.control, pb.params.bounds);
  const OptimizeResult res = optimize(pb.params, pb.grid, pb.tmesh, u0, mode, pb.optimize);
  {
    CsvWriter csv((out / "iterations.csv").string(),
                  {"iter", "total", "j_phiQ", "j_phiT", "j_sigmaQ", "j_sigmaT", "j_control", "adapted_term", "step",
                   "vi_residual", "clamp_mismatch", "backtracks"});
    for (const auto& it : res.report.log) {
      const auto& cb = it.cost;
      csv.row({CsvWriter::cell(it.iter), CsvWriter::cell(cb.total), CsvWriter::cell(cb.j_phiQ),
               CsvWriter::cell(cb.j_phiT), CsvWriter::cell(cb.j_sigmaQ), CsvWriter::cell(cb.j_sigmaT),
               CsvWriter::cell(cb.j_control), CsvWriter::cell(cb.adapted_term), CsvWriter::cell(it.step),
               CsvWriter::cell(it.vi_residual), CsvWriter::cell(it.clamp_mismatch), CsvWriter::cell(it.backtracks)});
    }
  }
  {
    std::ofstream snap(out / "control.snap");
    for (std::size_t k = 0; k < res.control.size(); ++k)
      write_snapshot(snap, pb.grid, "u", pb.tmesh.time(static_cast<int>(k)) + 0.5 * pb.tmesh.tau(),
                     res.control.values()[k]);
  }
  const auto& r = res.report;
  json j = {{"subcommand", "optimize"},
            {"problem", to_string(mode.kind)},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"reason", r.reason},
            {"vi_residual", r.vi_residual},
            {"clamp_mismatch", finite_or_null(r.clamp_mismatch)},
            {"gradient_norm", r.gradient_norm},
            {"cost", cost_json(r.cost_history.back())}};
  write_json(out / "summary.json", j);
  log.info("optimize: " + r.reason + " after " + std::to_string(r.iterations) + " iterations");
  os << "converged " << (r.converged ? "true" : "false") << " (" << r.reason << ")\n"
     << "cost " << format_double(r.cost_history.back().total) << '\n'
     << "vi_residual " << format_double(r.vi_residual) << '\n'
     << "clamp_mismatch " << format_double(r.clamp_mismatch) << '\n';
  if (!r.converged) {
    log.warn("optimize: not converged");
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

inline json sweep_json(const AlphaSweepReport& rep) {
  json cols = json::object();
  for (const auto& col : rep.columns)
    cols[col.name] = {{"slope", finite_or_null(col.slope)}, {"status", to_string(col.status)}, {"asserted", col.asserted}};
  json j = {{"alphas", rep.alphas}, {"columns", cols}, {"all_pass", rep.all_pass()}};
  if (rep.kind == "control") {
    j["reference_cost"] = rep.reference_cost;
    j["reference_converged"] = rep.reference_converged;
  }
  return j;
}

inline void write_sweep_csv(const std::filesystem::path& path, const AlphaSweepReport& rep) {
  std::vector<std::string> header{"alpha"};
  for (const auto& col : rep.columns) header.push_back(col.name);
  const bool ctrl = rep.kind == "control";
  if (ctrl) {
    header.push_back("iterations");
    header.push_back("converged");
  }
  header.push_back("error");
  CsvWriter csv(path.string(), header);
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    std::vector<std::string> row{CsvWriter::cell(rep.alphas[i])};
    for (const auto& col : rep.columns) row.push_back(CsvWriter::cell(col.values[i]));
    if (ctrl) {
      row.push_back(CsvWriter::cell(rep.iterations[i]));
      row.push_back(CsvWriter::cell(rep.converged[i]));
    }
    row.push_back(CsvWriter::cell(rep.row_errors[i]));
    csv.row(row);
  }
}

inline int run_sweep(const RunConfig& c, const Problem& pb, const std::filesystem::path& out, Logger& log,
                     std::ostream& os) {
  std::vector<AlphaSweepReport> reports;
  const Control u(pb.control, pb.params.bounds);
  const bool all = c.sweep_kind == "all";
  if (all || c.sweep_kind == "state")
    reports.push_back(state_alpha_sweep(pb.params, pb.grid, pb.tmesh, u, c.sweep_alphas, pb.state));
  if (all || c.sweep_kind == "adjoint")
    reports.push_back(adjoint_alpha_sweep(pb.params, pb.grid, pb.tmesh, u, c.sweep_alphas, pb.state, pb.adjoint));
  if (all || c.sweep_kind == "control") {
    ContinuationOptions co;
    co.optimize = pb.optimize;
    co.plain_control_gap = c.sweep_plain_control_gap;
    reports.push_back(control_alpha_continuation(pb.params, pb.grid, pb.tmesh, c.sweep_alphas, co));
  }
  json j = {{"subcommand", "alpha-sweep"}};
  bool ok = true;
  for (const auto& rep : reports) {
    write_sweep_csv(out / ("sweep_" + rep.kind + ".csv"), rep);
    j[rep.kind] = sweep_json(rep);
    ok = ok && rep.all_pass();
    for (const auto& col : rep.columns) {
      os << rep.kind << '.' << col.name << " slope " << format_double(col.slope) << ' ' << to_string(col.status)
         << (col.asserted ? "" : " (not asserted)") << '\n';
    }
    for (std::size_t i = 0; i < rep.row_errors.size(); ++i)
      if (!rep.row_errors[i].empty())
        log.warn(rep.kind + " row alpha=" + format_double(rep.alphas[i]) + ": " + rep.row_errors[i]);
  }
  write_json(out / "summary.json", j);
  if (!ok) {
    log.warn("alpha-sweep: at least one gap column failed its monotonicity check");
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

inline int run_gradcheck(const RunConfig& c, const Problem& pb, const std::filesystem::path& out, Logger& log,
                         std::ostream& os) {
  const GradientCheckReport rep = gradient_check(pb.params, pb.grid, pb.tmesh, pb.control, c.gradcheck_directions,
                                                 c.gradcheck_epsilon, c.rng_seed, pb.state, pb.adjoint);
  {
    CsvWriter csv((out / "gradcheck.csv").string(), {"direction", "fd", "adjoint", "rel_error"});
    for (std::size_t i = 0; i < rep.fd.size(); ++i)
      csv.row({CsvWriter::cell(i), CsvWriter::cell(rep.fd[i]), CsvWriter::cell(rep.adjoint[i]),
               CsvWriter::cell(rep.rel_error[i])});
  }
  const bool pass = rep.aggregate_rel_error <= c.gradcheck_tol;
  json j = {{"subcommand", "gradcheck"},
            {"scheme", c.adjoint_scheme},
            {"directions", c.gradcheck_directions},
            {"epsilon", c.gradcheck_epsilon},
            {"aggregate_rel_error", rep.aggregate_rel_error},
            {"max_rel_error", rep.max_rel_error},
            {"tol", c.gradcheck_tol},
            {"pass", pass}};
  write_json(out / "summary.json", j);
  os << "aggregate relative gradient error " << format_double(rep.aggregate_rel_error) << '\n'
     << "max relative gradient error " << format_double(rep.max_rel_error) << '\n';
  log.info("gradcheck: aggregate relative error " + format_double(rep.aggregate_rel_error));
  return pass ? exit_code::ok : exit_code::not_converged;
}

}  // namespace detail

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"forward", "adjoint", "optimize", "alpha-sweep", "gradcheck"};
  return s;
}

/**
 * Runs one subcommand and maps failures to exit codes:
 * config 2, solver 3, non-convergence 4.  Writes manifest.cfg, summary.json
 * and the subcommand CSVs into output_dir.
 */
inline int run(const std::string& subcommand, const RunConfig& cfg, std::ostream& os = std::cout) {
  const std::filesystem::path out(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) {
    std::cerr << "cannot create output_dir " << out << ": " << ec.message() << '\n';
    return exit_code::config;
  }
  Logger log(parse_log_level(cfg.log_level), out / "run.log");
  try {
    if (std::find(subcommands().begin(), subcommands().end(), subcommand) == subcommands().end())
      throw ConfigError("unknown subcommand '" + subcommand + "'");
    {
      std::ofstream m(out / "manifest.cfg");
      m << "# tumor_ocp " << subcommand << "\n" << render_config(cfg);
    }
    log.info(subcommand + ": output in " + out.string());
    const Problem pb = build_problem(cfg);
    if (subcommand == "forward") return detail::run_forward(cfg, pb, out, log, os);
    if (subcommand == "adjoint") return detail::run_adjoint(cfg, pb, out, log, os);
    if (subcommand == "optimize") return detail::run_optimize(cfg, pb, out, log, os);
    if (subcommand == "alpha-sweep") return detail::run_sweep(cfg, pb, out, log, os);
    return detail::run_gradcheck(cfg, pb, out, log, os);
  } catch (const ConfigError& e) {
    log.error(std::string("config: ") + e.what());
    return exit_code::config;
  } catch (const StructuralError& e) {
    log.error(std::string("config: ") + e.what());
    return exit_code::config;
  } catch (const SolverError& e) {
    log.error(std::string("solver: ") + e.what());
    return exit_code::solver;
  } catch (const DivergenceError& e) {
    log.error(std::string("solver: ") + e.what());
    return exit_code::solver;
  } catch (const std::exception& e) {
    log.error(std::string("internal: ") + e.what());
    return exit_code::internal;
  }
}

}  // namespace tumor_ocp
