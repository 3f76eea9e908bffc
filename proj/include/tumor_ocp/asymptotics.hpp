#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "tumor_ocp/adjoint_solver.hpp"
#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/objective.hpp"
#include "tumor_ocp/optimizer.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

enum class ColumnStatus { pass, flag, fail };

inline std::string to_string(ColumnStatus s) {
  switch (s) {
    case ColumnStatus::pass: return "pass";
    case ColumnStatus::flag: return "flag";
    case ColumnStatus::fail: return "fail";
  }
  return "?";
}

/// One gap quantity over the α ladder.  `asserted` columns take part in pass/fail.
struct SweepColumn {
  std::string name;
  std::vector<double> values;
  double slope = std::numeric_limits<double>::quiet_NaN();
  ColumnStatus status = ColumnStatus::fail;
  bool asserted = true;
};

struct AlphaSweepReport {
  std::string kind;  ///< "state", "adjoint" or "control"
  std::vector<double> alphas;
  std::vector<SweepColumn> columns;
  std::vector<std::string> row_errors;  ///< empty string = row ok
  // control continuation only
  std::vector<int> iterations;
  std::vector<int> converged;
  double reference_cost = std::numeric_limits<double>::quiet_NaN();
  bool reference_converged = false;

  const SweepColumn& column(const std::string& name) const {
    for (const auto& c : columns)
      if (c.name == name) return c;
    throw StructuralError("no sweep column named " + name);
  }
  bool all_pass() const {
    return std::all_of(columns.begin(), columns.end(),
                       [](const SweepColumn& c) { return !c.asserted || c.status != ColumnStatus::fail; });
  }
};

inline void validate_alphas(const std::vector<double>& alphas) {
  if (alphas.empty()) throw ConfigError("alpha list must not be empty");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0 && alphas[i] <= 1.0)) throw ConfigError("alphas must lie in (0, 1]");
    if (i > 0 && !(alphas[i] < alphas[i - 1])) throw ConfigError("alphas must be strictly decreasing");
  }
}

/// Least-squares slope of log(value) against log(alpha) over the positive finite entries.
inline double fit_slope(const std::vector<double>& alphas, const std::vector<double>& values) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < alphas.size() && i < values.size(); ++i)
    if (std::isfinite(values[i]) && values[i] > 0.0) {
      x.push_back(std::log(alphas[i]));
      y.push_back(std::log(values[i]));
    }
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

/**
 * pass: nonincreasing along the (decreasing) α ladder.  flag: a single
 * increasing pair with an overall positive slope, or too few points for a
 * trend.  fail: anything else, including failed rows.
 */
inline ColumnStatus column_status(const std::vector<double>& values, double slope) {
  for (double v : values)
    if (!std::isfinite(v) || v < 0.0) return ColumnStatus::fail;
  if (values.size() < 2) return ColumnStatus::flag;
  int ups = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[i - 1]) ++ups;
  if (ups == 0) return ColumnStatus::pass;
  if (ups == 1 && std::isfinite(slope) && slope > 0.0) return ColumnStatus::flag;
  return ColumnStatus::fail;
}

inline void finish_columns(AlphaSweepReport& rep) {
  for (auto& c : rep.columns) {
    c.slope = fit_slope(rep.alphas, c.values);
    c.status = column_status(c.values, c.slope);
  }
}

/// Worker count: TUMOR_OCP_THREADS if set, else hardware concurrency, never above `jobs`.
inline unsigned sweep_threads(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TUMOR_OCP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, jobs)));
}

/// Runs job(i) for i < n on a small pool; each job writes only its own slot.
inline void run_rows(std::size_t n, const std::function<void(std::size_t)>& job) {
  const unsigned threads = sweep_threads(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

namespace detail {

inline AlphaSweepReport make_report(const std::string& kind, const std::vector<double>& alphas,
                                    const std::vector<std::string>& names) {
  AlphaSweepReport rep;
  rep.kind = kind;
  rep.alphas = alphas;
  rep.row_errors.assign(alphas.size(), "");
  for (const auto& n : names) {
    SweepColumn c;
    c.name = n;
    c.values.assign(alphas.size(), std::numeric_limits<double>::quiet_NaN());
    rep.columns.push_back(std::move(c));
  }
  return rep;
}

inline std::string error_text(const std::exception& e) { return e.what(); }

}  // namespace detail

/// State gaps against the α = 0 solution driven by the same control.
inline AlphaSweepReport state_alpha_sweep(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                          const Control& u, const std::vector<double>& alphas,
                                          const StateOptions& opts = {}) {
  validate_alphas(alphas);
  const StateTrajectory ref = solve_forward(params.with_alpha(0.0), grid, tmesh, u, opts);
  AlphaSweepReport rep =
      detail::make_report("state", alphas, {"phi_linf_l2", "phi_l2_h1", "sigma_l2_l2", "alpha_mu_l2_h1"});
  run_rows(alphas.size(), [&](std::size_t i) {
    try {
      const StateTrajectory st = solve_forward(params.with_alpha(alphas[i]), grid, tmesh, u, opts);
      const Trajectory dphi = st.phi - ref.phi;
      rep.columns[0].values[i] = norm_linf_l2(tmesh, dphi);
      rep.columns[1].values[i] = norm_l2_h1(tmesh, dphi);
      rep.columns[2].values[i] = norm_l2_l2(tmesh, st.sigma - ref.sigma);
      rep.columns[3].values[i] = norm_l2_h1(tmesh, alphas[i] * st.mu);
    } catch (const Error& e) {
      rep.row_errors[i] = detail::error_text(e);
    }
  });
  finish_columns(rep);
  return rep;
}

/// Adjoint gaps; each α uses the adjoint of its own state, the reference is the α = 0 pair.
inline AlphaSweepReport adjoint_alpha_sweep(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                            const Control& u, const std::vector<double>& alphas,
                                            const StateOptions& sopts = {}, const AdjointOptions& aopts = {}) {
  validate_alphas(alphas);
  const ModelParams p0 = params.with_alpha(0.0);
  const StateTrajectory ref_state = solve_forward(p0, grid, tmesh, u, sopts);
  const AdjointTrajectory ref = solve_adjoint(p0, grid, tmesh, ref_state, aopts);
  AlphaSweepReport rep = detail::make_report("adjoint", alphas, {"q_l2_l2", "r_l2_l2", "alpha_p_linf_l2"});
  run_rows(alphas.size(), [&](std::size_t i) {
    try {
      const ModelParams pa = params.with_alpha(alphas[i]);
      const StateTrajectory st = solve_forward(pa, grid, tmesh, u, sopts);
      const AdjointTrajectory adj = solve_adjoint(pa, grid, tmesh, st, aopts);
      rep.columns[0].values[i] = norm_l2_l2(tmesh, adj.q - ref.q);
      rep.columns[1].values[i] = norm_l2_l2(tmesh, adj.r - ref.r);
      rep.columns[2].values[i] = norm_linf_l2(tmesh, alphas[i] * adj.p);
    } catch (const Error& e) {
      rep.row_errors[i] = detail::error_text(e);
    }
  });
  finish_columns(rep);
  return rep;
}

struct ContinuationOptions {
  OptimizeOptions optimize;
  /// Also solve the plain relaxed problem per α and report its distance to ū (not asserted).
  bool plain_control_gap = false;
};

/**
 * Solves the limit problem once for ū, then the adapted relaxed problem with
 * u_ref = ū for every α, warm-started from ū.  Rows whose optimizer does not
 * converge are kept and marked through `converged`.
 */
inline AlphaSweepReport control_alpha_continuation(const ModelParams& params, const Grid& grid,
                                                   const TimeMesh& tmesh, const std::vector<double>& alphas,
                                                   const ContinuationOptions& opts = {}) {
  validate_alphas(alphas);
  const ModelParams p0 = params.with_alpha(0.0);
  const Control start = project_box(Trajectory(grid, static_cast<std::size_t>(tmesh.n_steps())), params.bounds);
  const OptimizeResult ref = optimize(p0, grid, tmesh, start, OptimizeMode{ProblemKind::cp, {}}, opts.optimize);
  const Trajectory& ubar = ref.control.values();

  std::vector<std::string> names{"control_l2q", "cost_gap"};
  if (opts.plain_control_gap) names.push_back("plain_control_gap");
  AlphaSweepReport rep = detail::make_report("control", alphas, names);
  if (opts.plain_control_gap) rep.columns[2].asserted = false;
  rep.reference_cost = ref.report.cost_history.back().total;
  rep.reference_converged = ref.report.converged;
  rep.iterations.assign(alphas.size(), 0);
  rep.converged.assign(alphas.size(), 0);

  run_rows(alphas.size(), [&](std::size_t i) {
    try {
      const ModelParams pa = params.with_alpha(alphas[i]);
      const OptimizeResult res =
          optimize(pa, grid, tmesh, ref.control, OptimizeMode{ProblemKind::cp_tilde, ubar}, opts.optimize);
      rep.iterations[i] = res.report.iterations;
      rep.converged[i] = res.report.converged ? 1 : 0;
      rep.columns[0].values[i] = norm_q(tmesh, res.control.values() - ubar);
      rep.columns[1].values[i] = std::abs(res.report.cost_history.back().total - rep.reference_cost);
      if (opts.plain_control_gap) {
        const OptimizeResult plain =
            optimize(pa, grid, tmesh, ref.control, OptimizeMode{ProblemKind::cp_alpha, {}}, opts.optimize);
        rep.columns[2].values[i] = norm_q(tmesh, plain.control.values() - ubar);
      }
    } catch (const Error& e) {
      rep.row_errors[i] = detail::error_text(e);
    }
  });
  finish_columns(rep);
  return rep;
}

}  // namespace tumor_ocp
