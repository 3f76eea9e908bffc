// Recover a control from targets generated by that control, then compare.
#include <cmath>
#include <cstdio>

#include "tumor_ocp/optimizer.hpp"

using namespace tumor_ocp;

int main() {
  const Grid g = Grid::line(1.0, 64);
  const TimeMesh tm(1.0, 100);
  ModelParams p = ModelParams::defaults(g, tm);
  p.beta = 0.5;
  p.b = {1e-3, 1.0, 1.0, 1.0, 1.0};
  for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
    const double x = g.coordinate(0, static_cast<int>(i));
    p.initial.phi0[i] = 0.3 * std::cos(M_PI * x);
    p.initial.sigma0[i] = 0.5 + 0.2 * std::cos(2.0 * M_PI * x);
  }
  Trajectory u_true(g, tm.n_steps());
  for (int k = 0; k < tm.n_steps(); ++k)
    for (Eigen::Index i = 0; i < g.n_nodes(); ++i)
      u_true[k][i] = 0.8 * std::cos(M_PI * g.coordinate(0, static_cast<int>(i))) *
                     std::sin(M_PI * (tm.time(k) + 0.5 * tm.tau()));

  const StateTrajectory data = solve_forward(p, g, tm, u_true);
  p.targets.phi_Q = data.phi;
  p.targets.sigma_Q = data.sigma;
  p.targets.phi_Omega = data.phi[tm.n_steps()];
  p.targets.sigma_Omega = data.sigma[tm.n_steps()];

  const Control u0 = project_box(Trajectory(g, tm.n_steps()), p.bounds);
  const OptimizeResult res = optimize(p, g, tm, u0, OptimizeMode{ProblemKind::cp, {}});
  std::printf("%s after %d iterations\n", res.report.reason.c_str(), res.report.iterations);
  std::printf("cost %.6e  vi %.3e  clamp %.3e\n", res.report.cost_history.back().total, res.report.vi_residual,
              res.report.clamp_mismatch);
  std::printf("|u - u_true| = %.4e  (|u_true| = %.4e)\n", norm_q(tm, res.control.values() - u_true),
              norm_q(tm, u_true));
}
