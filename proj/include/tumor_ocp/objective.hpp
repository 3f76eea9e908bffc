#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tumor_ocp/adjoint_solver.hpp"
#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"
#include "tumor_ocp/params.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

/// Terms of the tracking cost; `adapted_term` is ½‖u - u_ref‖² and zero in plain mode.
struct CostBreakdown {
  double j_phiQ = 0.0;
  double j_phiT = 0.0;
  double j_sigmaQ = 0.0;
  double j_sigmaT = 0.0;
  double j_control = 0.0;
  double adapted_term = 0.0;
  double total = 0.0;
};

/**
 * Tracking cost of a state/control pair.  State terms use the trapezoidal
 * rule over the time nodes; the control term is exact for piecewise-constant
 * controls.
 */
inline CostBreakdown cost(const ModelParams& params, const StateTrajectory& state, const Trajectory& u) {
  const auto& tm = state.tmesh;
  const auto& g = state.grid;
  require_piecewise(tm, u);
  if (u.grid() != g) throw StructuralError("control and state live on different grids");
  state.phi.require_compatible(params.targets.phi_Q, "phi vs phi_Q");
  state.sigma.require_compatible(params.targets.sigma_Q, "sigma vs sigma_Q");
  require_on_grid(g, params.targets.phi_Omega, "phi_Omega");
  require_on_grid(g, params.targets.sigma_Omega, "sigma_Omega");

  const auto N = static_cast<std::size_t>(tm.n_steps());
  CostBreakdown c;
  double phi_q = 0.0, sigma_q = 0.0;
  for (std::size_t k = 0; k <= N; ++k) {
    const double wt = trapezoid_weight(tm, k);
    const Vector dp = state.phi[k] - params.targets.phi_Q[k];
    const Vector ds = state.sigma[k] - params.targets.sigma_Q[k];
    phi_q += wt * inner(g, dp, dp);
    sigma_q += wt * inner(g, ds, ds);
  }
  const Vector dpT = state.phi[N] - params.targets.phi_Omega;
  const Vector dsT = state.sigma[N] - params.targets.sigma_Omega;
  c.j_phiQ = 0.5 * params.b[1] * phi_q;
  c.j_phiT = 0.5 * params.b[2] * inner(g, dpT, dpT);
  c.j_sigmaQ = 0.5 * params.b[3] * sigma_q;
  c.j_sigmaT = 0.5 * params.b[4] * inner(g, dsT, dsT);
  c.j_control = 0.5 * params.b[0] * inner_q(tm, u, u);
  c.total = c.j_phiQ + c.j_phiT + c.j_sigmaQ + c.j_sigmaT + c.j_control;
  return c;
}

inline CostBreakdown cost(const ModelParams& params, const StateTrajectory& state, const Control& u) {
  return cost(params, state, u.values());
}

/// Cost plus ½‖u - u_ref‖²_{L²(Q)}.
inline CostBreakdown adapted_cost(const ModelParams& params, const StateTrajectory& state, const Trajectory& u,
                                  const Trajectory& u_ref) {
  CostBreakdown c = cost(params, state, u);
  const Trajectory d = u - u_ref;
  c.adapted_term = 0.5 * inner_q(state.tmesh, d, d);
  c.total += c.adapted_term;
  return c;
}

enum class GradientMode { plain, adapted };

/// Slicewise r + b0 u, plus (u - u_ref) in adapted mode.
inline Trajectory reduced_gradient(const ModelParams& params, const AdjointTrajectory& adjoint, const Trajectory& u,
                                   GradientMode mode = GradientMode::plain, const Trajectory* u_ref = nullptr) {
  require_piecewise(adjoint.tmesh, u);
  if (u.grid() != adjoint.grid) throw StructuralError("control and adjoint live on different grids");
  Trajectory g = params.b[0] * u;
  for (std::size_t k = 0; k < u.size(); ++k) g[k] += adjoint.r[k];
  if (mode == GradientMode::adapted) {
    if (!u_ref) throw ConfigError("adapted gradient requires a reference control");
    g += u;
    g -= *u_ref;
  }
  return g;
}

/// 𝒥_red(u) = 𝒥(S(u), u).
inline double reduced_cost(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh, const Trajectory& u,
                           const StateOptions& opts = {}) {
  return cost(params, solve_forward(params, grid, tmesh, u, opts), u).total;
}

struct GradientCheckReport {
  std::vector<double> fd;        ///< central differences
  std::vector<double> adjoint;   ///< <gradient, d>
  std::vector<double> rel_error; ///< per direction, |fd - adjoint| / |fd|
  double max_rel_error = 0.0;
  /// ‖fd - adjoint‖ / ‖fd‖ over the vector of directional derivatives.
  double aggregate_rel_error = 0.0;
  Trajectory gradient = Trajectory(Grid::line(1.0, 1), 0);
};

/**
 * Central finite differences of the reduced cost along random directions,
 * compared with the adjoint gradient.  Directions are uniform nodal noise,
 * zeroed where u is within `epsilon` of a bound so that u ± epsilon d stays
 * admissible, and scaled to unit L²(Q) norm.
 */
inline GradientCheckReport gradient_check(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                          const Trajectory& u, int n_directions, double epsilon,
                                          std::uint64_t seed = 0, const StateOptions& sopts = {},
                                          const AdjointOptions& aopts = {}) {
  if (n_directions < 1) throw ConfigError("gradient check needs at least one direction");
  if (!(epsilon > 0.0)) throw ConfigError("gradient check epsilon must be > 0");
  require_piecewise(tmesh, u);
  const StateTrajectory st = solve_forward(params, grid, tmesh, u, sopts);
  const AdjointTrajectory adj = solve_adjoint(params, grid, tmesh, st, aopts);

  GradientCheckReport rep;
  rep.gradient = reduced_gradient(params, adj, u);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double num = 0.0, den = 0.0;
  for (int j = 0; j < n_directions; ++j) {
    Trajectory d(grid, u.size());
    for (std::size_t k = 0; k < u.size(); ++k)
      for (Eigen::Index i = 0; i < grid.n_nodes(); ++i) {
        const double v = unif(rng);
        const bool room = u[k][i] - epsilon >= params.bounds.lower[k][i] && u[k][i] + epsilon <= params.bounds.upper[k][i];
        d[k][i] = room ? v : 0.0;
      }
    const double nd = norm_q(tmesh, d);
    if (!(nd > 0.0)) throw ConfigError("no admissible direction: control sits on its bounds everywhere");
    d *= 1.0 / nd;
    Trajectory up = u, um = u;
    up.axpy(epsilon, d);
    um.axpy(-epsilon, d);
    const double fd =
        (reduced_cost(params, grid, tmesh, up, sopts) - reduced_cost(params, grid, tmesh, um, sopts)) / (2.0 * epsilon);
    const double ad = inner_q(tmesh, rep.gradient, d);
    rep.fd.push_back(fd);
    rep.adjoint.push_back(ad);
    const double rel = std::abs(fd - ad) / std::max(std::abs(fd), 1e-300);
    rep.rel_error.push_back(rel);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    num += (fd - ad) * (fd - ad);
    den += fd * fd;
  }
  rep.aggregate_rel_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  return rep;
}

}  // namespace tumor_ocp
