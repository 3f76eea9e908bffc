#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"
#include "tumor_ocp/linear_solve.hpp"
#include "tumor_ocp/params.hpp"
#include "tumor_ocp/state_solver.hpp"

namespace tumor_ocp {

/**
 * How the backward system is discretized in time.
 *
 * `consistent` is the exact transpose of the forward step: the reduced
 * gradient r + b0 u then equals the derivative of the discrete cost up to
 * solver round-off.  `backward_euler` discretizes the continuous adjoint
 * directly (coefficients and sources at the unknown's time level), which
 * differs from the discrete gradient by O(τ).
 */
enum class AdjointScheme { consistent, backward_euler };

inline std::string to_string(AdjointScheme s) {
  return s == AdjointScheme::consistent ? "consistent" : "backward_euler";
}

struct AdjointOptions {
  LinearSolveOptions linear;
  AdjointScheme scheme = AdjointScheme::consistent;
};

/// Right-hand data of the linear backward system; all slices at the n_steps+1 time nodes.
struct AdjointSources {
  Trajectory phi_src;    ///< b1 (φ - φ_Q)
  Trajectory sigma_src;  ///< b3 (σ - σ_Q)
  Vector w_T;            ///< b2 (φ(T) - φ_Ω)
  Vector r_T;            ///< b4 (σ(T) - σ_Ω)

  AdjointSources& operator+=(const AdjointSources& o) {
    phi_src += o.phi_src;
    sigma_src += o.sigma_src;
    w_T += o.w_T;
    r_T += o.r_T;
    return *this;
  }
  AdjointSources& operator*=(double s) {
    phi_src *= s;
    sigma_src *= s;
    w_T *= s;
    r_T *= s;
    return *this;
  }
};

struct TerminalConditions {
  Vector w_T;
  Vector r_T;
  /// Zero for alpha > 0; empty for alpha = 0 where p(T) follows from the elliptic relation.
  std::optional<Vector> p_T;
};

struct AdjointSlice {
  Vector w;
  Vector p;
  Vector r;
  Vector q;
};

struct AdjointStepNorms {
  double time = 0.0;
  Norms w, p, r, q;
};

/// Empirical counterparts of the α-uniform adjoint bound.
struct AdjointReport {
  std::vector<AdjointStepNorms> steps;
  int linear_solves = 0;
  double max_linear_residual = 0.0;
  double w_linf_l2 = 0.0;
  double w_l2_h1 = 0.0;
  double q_l2_h1 = 0.0;
  double sqrt_alpha_p_linf_h1 = 0.0;
  double alpha_dt_p_l2_l2 = 0.0;
  double p_l2_w = 0.0;  ///< ‖p‖ + ‖Δp‖ in L²(L²)
  double r_linf_l2 = 0.0;
  double r_l2_h1 = 0.0;
  double k2_total = 0.0;
};

/**
 * (q, p, r) and w = p - βq at the n_steps+1 time nodes.  Slice n_steps holds
 * the terminal data; slice k < n_steps pairs with the forward step k -> k+1,
 * so the reduced gradient on that step is r[k] + b0 u[k].
 */
struct AdjointTrajectory {
  Grid grid;
  TimeMesh tmesh;
  double alpha;
  double beta;
  AdjointScheme scheme;
  Trajectory q;
  Trajectory p;
  Trajectory r;
  Trajectory w;
  AdjointReport report;
};

inline void require_state_on(const StateTrajectory& s, const Grid& g, const TimeMesh& tm) {
  if (s.grid != g || s.tmesh != tm) throw StructuralError("state trajectory was computed on a different mesh");
}

inline TerminalConditions terminal_conditions(const ModelParams& params, const StateTrajectory& state) {
  const auto N = static_cast<std::size_t>(state.tmesh.n_steps());
  require_on_grid(state.grid, params.targets.phi_Omega, "phi_Omega");
  require_on_grid(state.grid, params.targets.sigma_Omega, "sigma_Omega");
  TerminalConditions tc;
  tc.w_T = params.b[2] * (state.phi[N] - params.targets.phi_Omega);
  tc.r_T = params.b[4] * (state.sigma[N] - params.targets.sigma_Omega);
  if (params.alpha > 0.0) tc.p_T = Vector::Zero(state.grid.n_nodes());
  return tc;
}

/// Sources b1(φ-φ_Q), b3(σ-σ_Q) and terminal data for the given state.
inline AdjointSources adjoint_sources(const ModelParams& params, const StateTrajectory& state) {
  state.phi.require_compatible(params.targets.phi_Q, "phi vs phi_Q");
  state.sigma.require_compatible(params.targets.sigma_Q, "sigma vs sigma_Q");
  auto tc = terminal_conditions(params, state);
  return AdjointSources{params.b[1] * (state.phi - params.targets.phi_Q),
                        params.b[3] * (state.sigma - params.targets.sigma_Q), std::move(tc.w_T),
                        std::move(tc.r_T)};
}

/**
 * One backward step in (w, p, r) with q = (p - w)/β:
 *   (w - w⁺)/τ + Δq - F'' q                = s_φ + extra
 *   (p - w)/β + α(p - p⁺)/τ - Δp + P(p - r) = 0
 *   (r - r⁺)/τ - Δr + P(r - p)              = s_σ
 * where ⁺ marks the later slice.
 */
class AdjointSolver {
 public:
  AdjointSolver(const ModelParams& params, const Grid& grid, AdjointOptions opts = {})
      : params_(params),
        grid_(grid),
        L_(neumann_laplacian_matrix(grid)),
        solver_(grid.n_nodes(), opts.linear),
        opts_(opts) {
    params_.validate_scalars();
  }

  AdjointSlice step(const AdjointSlice& next, double tau, const Vector& d2f, const Vector& src_phi,
                    const Vector& src_sigma, const Vector* extra = nullptr) {
    if (!(tau > 0.0)) throw StructuralError("time step must be positive");
    for (const Vector* v : {&next.w, &next.p, &next.r, &d2f, &src_phi, &src_sigma})
      require_on_grid(grid_, *v, "adjoint step input");
    const Eigen::Index n = grid_.n_nodes();
    const double a = params_.alpha, b = params_.beta, P = params_.P;

    BlockAssembler A(n);
    A.add_diag(0, 0, 1.0 / tau);
    A.add_scaled(0, 0, L_, -1.0 / b);
    A.add_diag(0, 0, d2f, 1.0 / b);
    A.add_scaled(0, 1, L_, 1.0 / b);
    A.add_diag(0, 1, d2f, -1.0 / b);
    A.add_diag(1, 0, -1.0 / b);
    A.add_diag(1, 1, 1.0 / b + a / tau + P);
    A.add_scaled(1, 1, L_, -1.0);
    A.add_diag(1, 2, -P);
    A.add_diag(2, 1, -P);
    A.add_diag(2, 2, 1.0 / tau + P);
    A.add_scaled(2, 2, L_, -1.0);
    solver_.factorize(A.build());

    Vector rhs(3 * n);
    rhs.segment(0, n) = src_phi + next.w / tau;
    if (extra) rhs.segment(0, n) += *extra;
    rhs.segment(n, n) = (a / tau) * next.p;
    rhs.segment(2 * n, n) = src_sigma + next.r / tau;
    const Vector x = solver_.solve(rhs);
    ++linear_solves_;
    max_residual_ = std::max(max_residual_, solver_.last_residual());

    AdjointSlice out;
    out.w = x.segment(0, n);
    out.p = x.segment(n, n);
    out.r = x.segment(2 * n, n);
    out.q = (out.p - out.w) / b;
    if (!out.w.allFinite() || !out.p.allFinite() || !out.r.allFinite())
      throw DivergenceError("adjoint step produced non-finite values");
    return out;
  }

  /// p at the final time for alpha = 0: (p - w)/β - Δp + P(p - r) = 0.
  Vector limit_terminal_p(const Vector& w_T, const Vector& r_T) const {
    const double b = params_.beta, P = params_.P;
    SparseMatrix A = -L_;
    for (Eigen::Index i = 0; i < A.rows(); ++i) A.coeffRef(i, i) += 1.0 / b + P;
    A.makeCompressed();
    Eigen::SparseLU<SparseMatrix> lu(A);
    if (lu.info() != Eigen::Success) throw SolverError("terminal elliptic factorization failed", INFINITY);
    Vector p = lu.solve(w_T / b + P * r_T);
    const double res = (A * p - (w_T / b + P * r_T)).cwiseAbs().maxCoeff();
    const double scale = inf_norm(A) * p.cwiseAbs().maxCoeff() + (w_T / b + P * r_T).cwiseAbs().maxCoeff();
    if (scale > 0.0 && res / scale > opts_.linear.lin_tol) throw SolverError("terminal elliptic solve", res / scale);
    return p;
  }

  int linear_solves() const noexcept { return linear_solves_; }
  double max_residual() const noexcept { return max_residual_; }

 private:
  ModelParams params_;
  Grid grid_;
  SparseMatrix L_;
  LinearSolver solver_;
  AdjointOptions opts_;
  int linear_solves_ = 0;
  double max_residual_ = 0.0;
};

/// One backward step with a fresh solver instance.
inline AdjointSlice step_adjoint_backward(const ModelParams& params, const Grid& grid, double tau,
                                          const AdjointSlice& next, const Vector& d2f, const Vector& src_phi,
                                          const Vector& src_sigma, AdjointOptions opts = {}) {
  AdjointSolver s(params, grid, opts);
  return s.step(next, tau, d2f, src_phi, src_sigma);
}

namespace detail {

inline void fill_adjoint_report(AdjointTrajectory& adj, const SparseMatrix& L) {
  const auto& g = adj.grid;
  const auto& tm = adj.tmesh;
  auto& rep = adj.report;
  rep.steps.clear();
  double dtp = 0.0, p_w = 0.0, lap_w = 0.0;
  for (std::size_t k = 0; k < adj.w.size(); ++k) {
    AdjointStepNorms s;
    s.time = tm.time(static_cast<int>(k));
    s.w = norms(g, adj.w[k]);
    s.p = norms(g, adj.p[k]);
    s.r = norms(g, adj.r[k]);
    s.q = norms(g, adj.q[k]);
    rep.w_linf_l2 = std::max(rep.w_linf_l2, s.w.L2);
    rep.r_linf_l2 = std::max(rep.r_linf_l2, s.r.L2);
    rep.sqrt_alpha_p_linf_h1 = std::max(rep.sqrt_alpha_p_linf_h1, std::sqrt(adj.alpha) * s.p.H1);
    const Vector lap = L * adj.p[k];
    p_w += trapezoid_weight(tm, k) * s.p.L2 * s.p.L2;
    lap_w += trapezoid_weight(tm, k) * inner(g, lap, lap);
    if (k + 1 < adj.w.size()) {
      const Vector d = (adj.p[k + 1] - adj.p[k]) / tm.tau();
      dtp += tm.tau() * inner(g, d, d);
    }
    rep.steps.push_back(s);
  }
  rep.w_l2_h1 = norm_l2_h1(tm, adj.w);
  rep.q_l2_h1 = norm_l2_h1(tm, adj.q);
  rep.r_l2_h1 = norm_l2_h1(tm, adj.r);
  rep.alpha_dt_p_l2_l2 = adj.alpha * std::sqrt(dtp);
  rep.p_l2_w = std::sqrt(p_w) + std::sqrt(lap_w);
  rep.k2_total = rep.w_linf_l2 + rep.w_l2_h1 + rep.q_l2_h1 + rep.sqrt_alpha_p_linf_h1 + rep.alpha_dt_p_l2_l2 +
                 rep.p_l2_w + rep.r_linf_l2 + rep.r_l2_h1;
}

}  // namespace detail

/**
 * Backward sweep of the linear adjoint system for arbitrary sources; the
 * map sources -> (w, p, r) is linear.  The state enters through F'' (and, in
 * the consistent scheme, F''' of the one-step linearization).
 */
inline AdjointTrajectory solve_adjoint_linear(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                              const StateTrajectory& state, const AdjointSources& src,
                                              AdjointOptions opts = {}) {
  params.validate_scalars();
  require_state_on(state, grid, tmesh);
  require_nodal(tmesh, src.phi_src);
  require_nodal(tmesh, src.sigma_src);
  require_on_grid(grid, src.w_T, "w_T");
  require_on_grid(grid, src.r_T, "r_T");

  const int N = tmesh.n_steps();
  const auto n_slices = static_cast<std::size_t>(N) + 1;
  const double tau = tmesh.tau();
  AdjointTrajectory adj{grid,
                        tmesh,
                        params.alpha,
                        params.beta,
                        opts.scheme,
                        Trajectory(grid, n_slices),
                        Trajectory(grid, n_slices),
                        Trajectory(grid, n_slices),
                        Trajectory(grid, n_slices),
                        {}};

  AdjointSolver solver(params, grid, opts);
  const auto& pot = params.potential;
  auto d2 = [&](const Vector& phi) { return Vector(phi.unaryExpr([&](double x) { return pot.d2F(x); })); };
  auto d3 = [&](const Vector& phi) { return Vector(phi.unaryExpr([&](double x) { return pot.d3F(x); })); };

  AdjointSlice cur;
  cur.w = src.w_T;
  cur.r = src.r_T;
  cur.p = params.alpha > 0.0 ? Vector(Vector::Zero(grid.n_nodes())) : solver.limit_terminal_p(src.w_T, src.r_T);
  cur.q = (cur.p - cur.w) / params.beta;
  adj.w[N] = cur.w;
  adj.p[N] = cur.p;
  adj.r[N] = cur.r;
  adj.q[N] = cur.q;

  // The terminal p only feeds the α(p - p⁺)/τ term, which vanishes for α = 0.
  for (int k = N - 1; k >= 0; --k) {
    const auto ks = static_cast<std::size_t>(k);
    try {
      if (opts.scheme == AdjointScheme::consistent) {
        const double weight = (k + 1 == N) ? 0.5 : 1.0;
        const Vector sp = weight * src.phi_src[ks + 1];
        const Vector ss = weight * src.sigma_src[ks + 1];
        if (state.newton == NewtonMode::full) {
          cur = solver.step(cur, tau, d2(state.phi[ks + 1]), sp, ss);
        } else if (k + 1 < N) {
          const Vector extra = d3(state.phi[ks + 1])
                                   .cwiseProduct(state.phi[ks + 2] - state.phi[ks + 1])
                                   .cwiseProduct(adj.q[ks + 1]);
          cur = solver.step(cur, tau, d2(state.phi[ks]), sp, ss, &extra);
        } else {
          cur = solver.step(cur, tau, d2(state.phi[ks]), sp, ss);
        }
      } else {
        cur = solver.step(cur, tau, d2(state.phi[ks]), src.phi_src[ks], src.sigma_src[ks]);
      }
    } catch (const SolverError& e) {
      throw e.prefixed("adjoint step " + std::to_string(k) + ": ");
    } catch (const DivergenceError& e) {
      throw DivergenceError("adjoint step " + std::to_string(k) + ": " + e.what());
    }
    adj.w[ks] = cur.w;
    adj.p[ks] = cur.p;
    adj.r[ks] = cur.r;
    adj.q[ks] = cur.q;
  }
  adj.report.linear_solves = solver.linear_solves();
  adj.report.max_linear_residual = solver.max_residual();
  detail::fill_adjoint_report(adj, neumann_laplacian_matrix(grid));
  return adj;
}

inline AdjointTrajectory solve_adjoint(const ModelParams& params, const Grid& grid, const TimeMesh& tmesh,
                                       const StateTrajectory& state, AdjointOptions opts = {}) {
  if (state.alpha != params.alpha) throw StructuralError("state was computed with a different alpha");
  return solve_adjoint_linear(params, grid, tmesh, state, adjoint_sources(params, state), opts);
}

}  // namespace tumor_ocp
