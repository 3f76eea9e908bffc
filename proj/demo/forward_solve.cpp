// Forward solve of the relaxed system on a 2D square, printing a few step norms.
#include <cmath>
#include <cstdio>

#include "tumor_ocp/state_solver.hpp"

using namespace tumor_ocp;

int main() {
  const Grid g = Grid::rectangle(1.0, 1.0, 32, 32);
  const TimeMesh tm(0.5, 50);
  ModelParams p = ModelParams::defaults(g, tm);
  p.alpha = 0.05;
  p.beta = 0.5;
  p.P = 2.0;
  for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
    const auto mi = g.multi_index(i);
    const double x = g.coordinate(0, mi[0]) - 0.5, y = g.coordinate(1, mi[1]) - 0.5;
    p.initial.phi0[i] = std::tanh((0.2 - std::sqrt(x * x + y * y)) / 0.05);
    p.initial.sigma0[i] = 1.0;
  }
  const Trajectory u(g, tm.n_steps(), 0.1);
  const StateTrajectory st = solve_forward(p, g, tm, u);
  for (std::size_t k = 0; k < st.report.steps.size(); k += 10) {
    const auto& s = st.report.steps[k];
    std::printf("t=%.3f  |phi|=%.6f  |sigma|=%.6f  |mu|=%.6f\n", s.time, s.phi.L2, s.sigma.L2, s.mu.L2);
  }
  std::printf("conservation residual %.3e\n", st.report.conservation_residual);
}
