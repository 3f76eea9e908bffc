#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tumor_ocp/adjoint_solver.hpp"
#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/objective.hpp"
#include "tumor_ocp/params.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

/// Nodewise clamp onto [lower, upper].  Idempotent and non-expansive in L²(Q).
inline Control project_box(const Trajectory& u_raw, const Trajectory& lower, const Trajectory& upper) {
  u_raw.require_compatible(lower, "projection lower bound");
  u_raw.require_compatible(upper, "projection upper bound");
  Trajectory out(u_raw.grid(), u_raw.size());
  for (std::size_t k = 0; k < u_raw.size(); ++k) {
    if ((lower[k].array() > upper[k].array()).any()) throw ConfigError("projection bounds inverted (u_* > u^*)");
    out[k] = u_raw[k].cwiseMax(lower[k]).cwiseMin(upper[k]);
  }
  return Control(std::move(out), lower, upper);
}

inline Control project_box(const Trajectory& u_raw, const Box& box) {
  return project_box(u_raw, box.lower, box.upper);
}

/// The first n_steps slices of a nodal trajectory (the adjoint slices paired with the control).
inline Trajectory control_slices(const Trajectory& nodal) {
  if (nodal.size() < 1) throw StructuralError("empty trajectory");
  Trajectory out(nodal.grid(), nodal.size() - 1);
  for (std::size_t k = 0; k + 1 < nodal.size(); ++k) out[k] = nodal[k];
  return out;
}

/**
 * min over sampled admissible v of ∫_Q g (v - u).  The exact box minimizer
 * (v = u_* where g > 0, u^* where g < 0, u where g = 0) is always among the
 * samples; the extra samples are uniform in the box from a fixed seed.
 * A value ≥ -tol certifies discrete first-order stationarity.
 */
inline double vi_residual(const TimeMesh& tm, const Trajectory& gradient, const Control& u, int n_samples = 0,
                          std::uint64_t seed = 0) {
  require_piecewise(tm, gradient);
  gradient.require_compatible(u.values(), "gradient vs control");
  const auto& g = gradient.grid();
  double best = 0.0;
  for (std::size_t k = 0; k < gradient.size(); ++k) {
    const Vector& gk = gradient[k];
    const Vector& uk = u.values()[k];
    Vector dv(gk.size());
    for (Eigen::Index i = 0; i < gk.size(); ++i) {
      if (gk[i] > 0.0) dv[i] = u.lower()[k][i] - uk[i];
      else if (gk[i] < 0.0) dv[i] = u.upper()[k][i] - uk[i];
      else dv[i] = 0.0;
    }
    best += tm.tau() * inner(g, gk, dv);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < n_samples; ++s) {
    double val = 0.0;
    for (std::size_t k = 0; k < gradient.size(); ++k) {
      Vector dv(gradient[k].size());
      for (Eigen::Index i = 0; i < dv.size(); ++i) {
        const double lo = u.lower()[k][i], hi = u.upper()[k][i];
        dv[i] = lo + (hi - lo) * unit(rng) - u.values()[k][i];
      }
      val += tm.tau() * inner(g, gradient[k], dv);
    }
    best = std::min(best, val);
  }
  return best;
}

/// ‖u - P(-r/b0)‖_{L∞(Q)}; `r` has one slice per control slice.
inline double clamp_mismatch(const Trajectory& r, const Control& u, double b0) {
  if (!(b0 > 0.0)) throw ConfigError("clamp_mismatch requires b0 > 0");
  r.require_compatible(u.values(), "r vs control");
  double worst = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    const Vector target = (-r[k] / b0).cwiseMax(u.lower()[k]).cwiseMin(u.upper()[k]);
    worst = std::max(worst, (u.values()[k] - target).cwiseAbs().maxCoeff());
  }
  return worst;
}

enum class ProblemKind {
  cp,        ///< limit problem, alpha = 0
  cp_alpha,  ///< relaxed problem, alpha > 0
  cp_tilde   ///< adapted cost with reference control u_ref
};

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::cp: return "cp";
    case ProblemKind::cp_alpha: return "cp_alpha";
    default: return "cp_tilde";
  }
}

struct OptimizeMode {
  ProblemKind kind = ProblemKind::cp;
  std::optional<Trajectory> u_ref;
};

/// Barzilai-Borwein step rule: short = <s,y>/<y,y>, long = <s,s>/<s,y>.
enum class BBRule { short_step, long_step };

struct OptimizeOptions {
  int max_iters = 200;
  double vi_tol = 1e-6;
  double stag_tol = 1e-10;
  /// With b0 > 0, convergence also needs clamp_mismatch <= clamp_tol (1 + ‖u‖∞).
  double clamp_tol = 1e-5;
  double armijo_c1 = 1e-4;
  double bt_factor = 0.5;
  int max_backtracks = 60;
  BBRule bb_rule = BBRule::short_step;
  double initial_step = 1.0;
  double step_min = 1e-12;
  double step_max = 1e12;
  int vi_samples = 8;
  std::uint64_t seed = 0;
  StateOptions state;
  AdjointOptions adjoint;
};

struct OptimizeIteration {
  int iter = 0;
  CostBreakdown cost;
  double step = 0.0;
  double vi_residual = 0.0;
  double clamp_mismatch = 0.0;  ///< NaN when b0 = 0
  int backtracks = 0;
};

struct OptimizeReport {
  int iterations = 0;
  std::vector<CostBreakdown> cost_history;
  std::vector<double> step_sizes;
  std::vector<OptimizeIteration> log;
  double vi_residual = 0.0;
  double clamp_mismatch = std::numeric_limits<double>::quiet_NaN();
  double gradient_norm = 0.0;
  bool converged = false;
  std::string reason;
};

struct OptimizeResult {
  Control control;
  StateTrajectory state;
  AdjointTrajectory adjoint;
  Trajectory gradient;
  OptimizeReport report;
};

namespace detail {

/// Effective (r', b0') with g = r' + b0' u, so the clamp formula also covers the adapted cost.
inline double clamp_for(const ModelParams& params, const OptimizeMode& mode, const AdjointTrajectory& adj,
                        const Control& u) {
  const bool adapted = mode.kind == ProblemKind::cp_tilde;
  const double b0 = params.b[0] + (adapted ? 1.0 : 0.0);
  if (!(b0 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  Trajectory r = control_slices(adj.r);
  if (adapted) r -= *mode.u_ref;
  return clamp_mismatch(r, u, b0);
}

}  // namespace detail

/**
 * Projected gradient with Armijo backtracking on the reduced cost.  The
 * trial step comes from the Barzilai-Borwein quotient of the previous
 * iterate pair.  Stops once vi_residual ≥ -vi_tol (1 + ‖g‖) and the relative
 * cost decrease drops under stag_tol, or after max_iters iterations.
 */
inline OptimizeResult optimize(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh, const Control& u0,
                               const OptimizeMode& mode, const OptimizeOptions& opts = {}) {
  params.validate(grid, tmesh);
  if (mode.kind == ProblemKind::cp && params.alpha != 0.0) throw ConfigError("(CP) requires alpha = 0");
  if (mode.kind == ProblemKind::cp_alpha && !(params.alpha > 0.0)) throw ConfigError("(CP)_alpha requires alpha > 0");
  if (mode.kind == ProblemKind::cp_tilde) {
    if (!mode.u_ref) throw ConfigError("adapted problem requires opt.u_ref");
    require_piecewise(tmesh, *mode.u_ref);
  }
  if (u0.grid() != grid) throw StructuralError("initial control lives on a different grid");
  require_piecewise(tmesh, u0.values());
  if (!(opts.bt_factor > 0.0 && opts.bt_factor < 1.0)) throw ConfigError("opt.bt_factor must lie in (0, 1)");
  if (!(opts.armijo_c1 > 0.0 && opts.armijo_c1 < 1.0)) throw ConfigError("opt.armijo_c1 must lie in (0, 1)");
  if (opts.max_iters < 0) throw ConfigError("opt.max_iters must be >= 0");

  const bool adapted = mode.kind == ProblemKind::cp_tilde;
  const GradientMode gmode = adapted ? GradientMode::adapted : GradientMode::plain;
  const Trajectory* uref = adapted ? &*mode.u_ref : nullptr;

  auto eval_cost = [&](const StateTrajectory& st, const Trajectory& u) {
    return adapted ? adapted_cost(params, st, u, *uref) : cost(params, st, u);
  };

  Control u = u0;
  StateTrajectory state = solve_forward(params, grid, tmesh, u.values(), opts.state);
  CostBreakdown c = eval_cost(state, u.values());
  AdjointTrajectory adj = solve_adjoint(params, grid, tmesh, state, opts.adjoint);
  Trajectory g = reduced_gradient(params, adj, u.values(), gmode, uref);

  OptimizeReport rep;
  rep.cost_history.push_back(c);
  {
    OptimizeIteration it0;
    it0.cost = c;
    it0.vi_residual = vi_residual(tmesh, g, u, opts.vi_samples, opts.seed);
    it0.clamp_mismatch = detail::clamp_for(params, mode, adj, u);
    rep.log.push_back(it0);
  }

  auto clamp_ok = [&](double m) { return std::isnan(m) || m <= opts.clamp_tol * (1.0 + u.values().max_abs()); };

  double step = opts.initial_step;
  rep.reason = "max_iters reached";
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    bool accepted = false, stationary = false;
    int bt = 0;
    std::optional<Control> trial;
    std::optional<StateTrajectory> trial_state;
    CostBreakdown trial_cost;
    for (; bt <= opts.max_backtracks; ++bt) {
      Trajectory raw = u.values();
      raw.axpy(-step, g);
      Control cand = project_box(raw, u.lower(), u.upper());
      const Trajectory d = cand.values() - u.values();
      const double gd = inner_q(tmesh, g, d);
      if (d.max_abs() == 0.0) {
        stationary = true;
        break;
      }
      StateTrajectory st = solve_forward(params, grid, tmesh, cand.values(), opts.state);
      const CostBreakdown cc = eval_cost(st, cand.values());
      if (cc.total <= c.total + opts.armijo_c1 * gd) {
        trial.emplace(std::move(cand));
        trial_state.emplace(std::move(st));
        trial_cost = cc;
        accepted = true;
        break;
      }
      step *= opts.bt_factor;
    }
    if (stationary) {
      rep.converged = true;
      rep.reason = "projected step vanished (fixed point)";
      break;
    }
    if (!accepted) {
      // cost differences at roundoff level: accept as stationary if the VI holds
      rep.converged = rep.log.back().vi_residual >= -opts.vi_tol * (1.0 + norm_q(tmesh, g)) &&
                      clamp_ok(rep.log.back().clamp_mismatch);
      rep.reason = rep.converged ? "line search exhausted at stationary point" : "line search failed";
      break;
    }
    if (trial_cost.total > c.total) throw InternalError("accepted step increased the cost (Armijo contract)");

    AdjointTrajectory new_adj = solve_adjoint(params, grid, tmesh, *trial_state, opts.adjoint);
    Trajectory new_g = reduced_gradient(params, new_adj, trial->values(), gmode, uref);

    const Trajectory du = trial->values() - u.values();
    const Trajectory dg = new_g - g;
    const double sy = inner_q(tmesh, du, dg);
    const double ss = inner_q(tmesh, du, du);
    const double rel_dec = (c.total - trial_cost.total) / std::max(std::abs(c.total), 1e-300);

    rep.step_sizes.push_back(step);
    u = std::move(*trial);
    state = std::move(*trial_state);
    adj = std::move(new_adj);
    g = std::move(new_g);
    c = trial_cost;
    rep.cost_history.push_back(c);
    rep.iterations = iter;

    OptimizeIteration log;
    log.iter = iter;
    log.cost = c;
    log.step = step;
    log.backtracks = bt;
    log.vi_residual = vi_residual(tmesh, g, u, opts.vi_samples, opts.seed);
    log.clamp_mismatch = detail::clamp_for(params, mode, adj, u);
    rep.log.push_back(log);

    if (sy > 0.0) {
      const double bb = opts.bb_rule == BBRule::long_step ? ss / sy : sy / inner_q(tmesh, dg, dg);
      step = std::clamp(bb, opts.step_min, opts.step_max);
    } else {
      step = std::min(2.0 * step, opts.step_max);
    }

    const double gnorm = norm_q(tmesh, g);
    if (log.vi_residual >= -opts.vi_tol * (1.0 + gnorm) && rel_dec < opts.stag_tol && clamp_ok(log.clamp_mismatch)) {
      rep.converged = true;
      rep.reason = "stationary (vi_tol and stag_tol met)";
      break;
    }
  }

  rep.vi_residual = vi_residual(tmesh, g, u, opts.vi_samples, opts.seed);
  rep.clamp_mismatch = detail::clamp_for(params, mode, adj, u);
  rep.gradient_norm = norm_q(tmesh, g);
  if (rep.converged && !(rep.vi_residual >= -opts.vi_tol * (1.0 + rep.gradient_norm) && clamp_ok(rep.clamp_mismatch))) {
    rep.converged = false;
    rep.reason = "stationarity diagnostics above tolerance at exit";
  }
  return OptimizeResult{std::move(u), std::move(state), std::move(adj), std::move(g), std::move(rep)};
}

}  // namespace tumor_ocp
