#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"
#include "tumor_ocp/linear_solve.hpp"
#include "tumor_ocp/params.hpp"

namespace tumor_ocp {

enum class NewtonMode {
  semi_implicit,  ///< one linearization of F' about the previous slice
  full            ///< Newton iterations to newton_tol (fully implicit backward Euler)
};

struct StateOptions {
  LinearSolveOptions linear;
  NewtonMode newton = NewtonMode::semi_implicit;
  double newton_tol = 1e-10;
  int newton_max_iterations = 30;
};

struct StateSlice {
  Vector mu;
  Vector phi;
  Vector sigma;
};

/// Additive right-hand sides of the three equations at time t (manufactured solutions).
using Forcing = std::function<void(double t, Vector& f_mu, Vector& f_phi, Vector& f_sigma)>;

struct StateStepNorms {
  double time = 0.0;
  Norms mu, phi, sigma;
  double phi_lap_L2 = 0.0;
  double conservation = 0.0;
};

/// Diagnostics of one forward run; the bounds echo the uniform state estimate.
struct StateReport {
  std::vector<StateStepNorms> steps;
  double conservation_residual = 0.0;
  int linear_solves = 0;
  int newton_iterations = 0;
  double max_linear_residual = 0.0;
  double phi_linf_h1 = 0.0;
  double mu_l2_h1 = 0.0;
  double sigma_linf_l2 = 0.0;
  double sigma_l2_h1 = 0.0;
  double sqrt_alpha_mu_linf_l2 = 0.0;
};

/**
 * (μ, φ, σ) at the n_steps+1 time nodes.  For alpha = 0 the μ slice at t = 0
 * is the chemical-potential relation evaluated at t = 0 and enters nothing.
 */
struct StateTrajectory {
  Grid grid;
  TimeMesh tmesh;
  double alpha;
  NewtonMode newton;
  Trajectory mu;
  Trajectory phi;
  Trajectory sigma;
  StateReport report;
};

/**
 * Backward-Euler stepper for the coupled (μ, φ, σ) system.  One instance owns
 * its factorization workspace and may not be shared between threads.
 *
 * Unknowns (m, f, s) at the new level solve
 *   α(m-μ)/τ + (f-φ)/τ - Δm - P(s-m)                 = f_mu
 *   m - β(f-φ)/τ + Δf - F'(φ*) - F''(φ*)(f-φ*)        = f_phi
 *   (s-σ)/τ - Δs + P(s-m) - u                          = f_sigma
 * with φ* the linearization point (previous slice, or the Newton iterate).
 */
class StateSolver {
 public:
  StateSolver(const ModelParams& params, const Grid& grid, StateOptions opts = {})
      : params_(params),
        grid_(grid),
        opts_(opts),
        L_(neumann_laplacian_matrix(grid)),
        solver_(grid.n_nodes(), opts.linear) {
    params_.validate_scalars();
  }

  const Grid& grid() const noexcept { return grid_; }
  const ModelParams& params() const noexcept { return params_; }

  StateSlice step(const StateSlice& cur, const Vector& u, double tau, const Vector* f_mu = nullptr,
                  const Vector* f_phi = nullptr, const Vector* f_sigma = nullptr) {
    if (!(tau > 0.0)) throw StructuralError("time step must be positive");
    require_on_grid(grid_, cur.mu, "mu");
    require_on_grid(grid_, cur.phi, "phi");
    require_on_grid(grid_, cur.sigma, "sigma");
    require_on_grid(grid_, u, "control slice");
    const Eigen::Index n = grid_.n_nodes();
    const auto& pot = params_.potential;

    Vector lin = cur.phi;
    StateSlice next;
    const int max_it = opts_.newton == NewtonMode::full ? opts_.newton_max_iterations : 1;
    for (int it = 0; it < max_it; ++it) {
      Vector d2 = lin.unaryExpr([&](double r) { return pot.d2F(r); });
      Vector d1 = lin.unaryExpr([&](double r) { return pot.dF(r); });
      solver_.factorize(assemble(tau, d2));

      Vector rhs(3 * n);
      rhs.segment(0, n) = (params_.alpha / tau) * cur.mu + cur.phi / tau;
      rhs.segment(n, n) = -(params_.beta / tau) * cur.phi + d1 - d2.cwiseProduct(lin);
      rhs.segment(2 * n, n) = cur.sigma / tau + u;
      if (f_mu) rhs.segment(0, n) += *f_mu;
      if (f_phi) rhs.segment(n, n) += *f_phi;
      if (f_sigma) rhs.segment(2 * n, n) += *f_sigma;

      const Vector x = solver_.solve(rhs);
      ++linear_solves_;
      max_residual_ = std::max(max_residual_, solver_.last_residual());
      next.mu = x.segment(0, n);
      next.phi = x.segment(n, n);
      next.sigma = x.segment(2 * n, n);
      ++newton_iterations_;
      if (opts_.newton == NewtonMode::semi_implicit) break;
      const double change = (next.phi - lin).cwiseAbs().maxCoeff();
      lin = next.phi;
      if (change <= opts_.newton_tol) break;
      if (it + 1 == max_it) throw SolverError("Newton iteration did not converge", change);
    }
    if (!next.mu.allFinite() || !next.phi.allFinite() || !next.sigma.allFinite())
      throw DivergenceError("state step produced non-finite values");
    return next;
  }

  int linear_solves() const noexcept { return linear_solves_; }
  int newton_iterations() const noexcept { return newton_iterations_; }
  double max_residual() const noexcept { return max_residual_; }

 private:
  SparseMatrix assemble(double tau, const Vector& d2) const {
    const double a = params_.alpha, b = params_.beta, P = params_.P;
    BlockAssembler A(grid_.n_nodes());
    // row 0: (α/τ + P) m - L m + f/τ - P s
    A.add_diag(0, 0, a / tau + P);
    A.add_scaled(0, 0, L_, -1.0);
    A.add_diag(0, 1, 1.0 / tau);
    A.add_diag(0, 2, -P);
    // row 1: m - (β/τ) f + L f - F'' f
    A.add_diag(1, 0, 1.0);
    A.add_diag(1, 1, -b / tau);
    A.add_scaled(1, 1, L_, 1.0);
    A.add_diag(1, 1, d2, -1.0);
    // row 2: -P m + (1/τ + P) s - L s
    A.add_diag(2, 0, -P);
    A.add_diag(2, 2, 1.0 / tau + P);
    A.add_scaled(2, 2, L_, -1.0);
    return A.build();
  }

  ModelParams params_;
  Grid grid_;
  StateOptions opts_;
  SparseMatrix L_;
  LinearSolver solver_;
  int linear_solves_ = 0;
  int newton_iterations_ = 0;
  double max_residual_ = 0.0;
};

/// One backward-Euler step with a fresh solver instance.
inline StateSlice step_state(const ModelParams& params, const Grid& grid, double tau, const StateSlice& cur,
                             const Vector& u_slice, StateOptions opts = {}) {
  StateSolver s(params, grid, opts);
  return s.step(cur, u_slice, tau);
}

/// Discrete mass Σ_Ω(αμ + φ + σ) at slice k.
inline double conserved_mass(const Grid& g, double alpha, const Vector& mu, const Vector& phi, const Vector& sigma) {
  return (alpha != 0.0 ? alpha * integral(g, mu) : 0.0) + integral(g, phi) + integral(g, sigma);
}

/**
 * max_n |M_n - M_0 - τ Σ_{k<n} ∫u^k| / (1 + |M_0|) with M the conserved mass.
 * `u` holds one slice per time step.
 */
inline double conservation_residual(const StateTrajectory& traj, const Trajectory& u) {
  require_piecewise(traj.tmesh, u);
  if (u.grid() != traj.grid) throw StructuralError("control and state live on different grids");
  const auto& g = traj.grid;
  const double m0 = conserved_mass(g, traj.alpha, traj.mu[0], traj.phi[0], traj.sigma[0]);
  double supplied = 0.0, worst = 0.0;
  for (std::size_t n = 1; n < traj.phi.size(); ++n) {
    supplied += traj.tmesh.tau() * integral(g, u[n - 1]);
    const double mn = conserved_mass(g, traj.alpha, traj.mu[n], traj.phi[n], traj.sigma[n]);
    worst = std::max(worst, std::abs(mn - m0 - supplied));
  }
  return worst / (1.0 + std::abs(m0));
}

namespace detail {

inline StateStepNorms step_norms(const Grid& g, double t, const Vector& mu, const Vector& phi, const Vector& sigma,
                                 const SparseMatrix& L) {
  StateStepNorms s;
  s.time = t;
  s.mu = norms(g, mu);
  s.phi = norms(g, phi);
  s.sigma = norms(g, sigma);
  const Vector lap = L * phi;
  s.phi_lap_L2 = std::sqrt(inner(g, lap, lap));
  return s;
}

}  // namespace detail

/**
 * Iterates the stepper from the initial data.  `u` has n_steps slices; slice
 * k drives the step from t_k to t_{k+1}.
 */
inline StateTrajectory solve_forward(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                     const Trajectory& u, StateOptions opts = {}, const Forcing& forcing = {}) {
  params.validate_scalars();
  require_on_grid(grid, params.initial.mu0, "mu0");
  require_on_grid(grid, params.initial.phi0, "phi0");
  require_on_grid(grid, params.initial.sigma0, "sigma0");
  require_piecewise(tmesh, u);
  if (u.grid() != grid) throw StructuralError("control does not live on the solver grid");

  const auto n_slices = static_cast<std::size_t>(tmesh.n_steps()) + 1;
  StateTrajectory out{grid,
                      tmesh,
                      params.alpha,
                      opts.newton,
                      Trajectory(grid, n_slices),
                      Trajectory(grid, n_slices),
                      Trajectory(grid, n_slices),
                      {}};
  out.mu[0] = params.initial.mu0;
  out.phi[0] = params.initial.phi0;
  out.sigma[0] = params.initial.sigma0;

  StateSolver solver(params, grid, opts);
  const double tau = tmesh.tau();
  const Eigen::Index n = grid.n_nodes();
  Vector f_mu = Vector::Zero(n), f_phi = Vector::Zero(n), f_sigma = Vector::Zero(n);
  StateSlice cur{out.mu[0], out.phi[0], out.sigma[0]};
  for (int k = 0; k < tmesh.n_steps(); ++k) {
    try {
      if (forcing) {
        f_mu.setZero();
        f_phi.setZero();
        f_sigma.setZero();
        forcing(tmesh.time(k + 1), f_mu, f_phi, f_sigma);
        cur = solver.step(cur, u[k], tau, &f_mu, &f_phi, &f_sigma);
      } else {
        cur = solver.step(cur, u[k], tau);
      }
    } catch (const SolverError& e) {
      throw e.prefixed("forward step " + std::to_string(k + 1) + ": ");
    } catch (const DivergenceError& e) {
      throw DivergenceError("forward step " + std::to_string(k + 1) + ": " + e.what());
    }
    out.mu[k + 1] = cur.mu;
    out.phi[k + 1] = cur.phi;
    out.sigma[k + 1] = cur.sigma;
  }

  const SparseMatrix L = neumann_laplacian_matrix(grid);
  if (params.alpha == 0.0) {
    const Vector lap0 = L * out.phi[0];
    out.mu[0] = (params.beta / tau) * (out.phi[1] - out.phi[0]) - lap0 +
                out.phi[0].unaryExpr([&](double r) { return params.potential.dF(r); });
  }

  auto& rep = out.report;
  rep.linear_solves = solver.linear_solves();
  rep.newton_iterations = solver.newton_iterations();
  rep.max_linear_residual = solver.max_residual();
  const double m0 = conserved_mass(grid, params.alpha, out.mu[0], out.phi[0], out.sigma[0]);
  double supplied = 0.0;
  for (std::size_t k = 0; k < n_slices; ++k) {
    auto s = detail::step_norms(grid, tmesh.time(static_cast<int>(k)), out.mu[k], out.phi[k], out.sigma[k], L);
    if (k > 0) {
      supplied += tau * integral(grid, u[k - 1]);
      const double mk = conserved_mass(grid, params.alpha, out.mu[k], out.phi[k], out.sigma[k]);
      s.conservation = std::abs(mk - m0 - supplied) / (1.0 + std::abs(m0));
    }
    rep.conservation_residual = std::max(rep.conservation_residual, s.conservation);
    rep.phi_linf_h1 = std::max(rep.phi_linf_h1, s.phi.H1);
    rep.sigma_linf_l2 = std::max(rep.sigma_linf_l2, s.sigma.L2);
    rep.sqrt_alpha_mu_linf_l2 = std::max(rep.sqrt_alpha_mu_linf_l2, std::sqrt(params.alpha) * s.mu.L2);
    rep.steps.push_back(s);
  }
  rep.mu_l2_h1 = norm_l2_h1(tmesh, out.mu);
  rep.sigma_l2_h1 = norm_l2_h1(tmesh, out.sigma);
  return out;
}

inline StateTrajectory solve_forward(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                     const Control& u, StateOptions opts = {}) {
  return solve_forward(params, grid, tmesh, u.values(), opts);
}

}  // namespace tumor_ocp
