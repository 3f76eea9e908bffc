// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tumor_ocp/experiment.hpp"

using namespace tumor_ocp;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kOperatorTol = 1e-12;
constexpr double kConservationTol = 1e-10;
constexpr double kMmsRatio = 1.5;
constexpr double kLinearityTol = 1e-10;
constexpr double kGradTol = 1e-2;
constexpr double kViTol = 1e-6;
constexpr double kClampTol = 1e-5;
constexpr double kSlopeMin = 0.9;
constexpr double kCostGapTol = 1e-4;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1D baseline, 65 nodes / 100 steps, relaxed system
const char* kBaseline = R"(alpha = 0.1
beta = 0.5
b0 = 1e-3
b1 = 1
b2 = 1
b3 = 1
b4 = 1
n_steps = 100
grid.cells = 64
initial.phi = cosine:0.3,0,1
initial.sigma = cosine:0.2,0.5,2
target.phi_Q = constant:0.2
target.sigma_Q = constant:0.4
target.phi_Omega = constant:-0.1
target.sigma_Omega = constant:0.6
control.u = cosine_t:0.3,0,1,3
adjoint.scheme = backward_euler
)";

// limit system with targets from u† = 0.8 sin(πt) cos(πx)
const char* kInverseCrime = R"(alpha = 0
beta = 0.5
b0 = 1e-3
b1 = 1
b2 = 1
b3 = 1
b4 = 1
n_steps = 100
grid.cells = 64
initial.phi = cosine:0.3,0,1
initial.sigma = cosine:0.2,0.5,2
target.generate_from_control = cosine_t:0.8,0,1,1
control.lower = -1
control.upper = 1
opt.max_iters = 200
)";

Outcome operator_suite() {
  const std::vector<Grid> grids{Grid::line(1.0, 32), Grid::line(3.0, 1000), Grid::rectangle(1.0, 2.0, 32, 32),
                                Grid::box(1.0, 1.0, 1.0, 32, 32, 32), Grid::box(2.0, 1.0, 0.5, 7, 12, 5)};
  double worst = 0.0;
  bool nsd = true;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (const auto& g : grids) {
    const SparseMatrix L = neumann_laplacian_matrix(g);
    const Vector& w = g.weights();
    double scale = 0.0;
    for (Eigen::Index j = 0; j < L.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(L, j); it; ++it) scale = std::max(scale, std::abs(it.value()));
    // W L symmetric
    const SparseMatrix WL = w.asDiagonal() * L;
    const SparseMatrix D = SparseMatrix(WL.transpose()) - WL;
    double sym = 0.0;
    for (Eigen::Index j = 0; j < D.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(D, j); it; ++it) sym = std::max(sym, std::abs(it.value()));
    double wscale = 0.0;
    for (Eigen::Index j = 0; j < WL.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(WL, j); it; ++it) wscale = std::max(wscale, std::abs(it.value()));
    worst = std::max(worst, sym / wscale);
    // zero row sums and constant kernel
    const Vector ones = Vector::Ones(g.n_nodes());
    worst = std::max(worst, (L * ones).cwiseAbs().maxCoeff() / scale);
    Vector Lc;
    neumann_laplacian_apply(g, Vector::Constant(g.n_nodes(), -2.5), Lc);
    worst = std::max(worst, Lc.cwiseAbs().maxCoeff() / (2.5 * scale));
    // negative semidefinite: nonpositive diagonal, nonnegative off-diagonal, zero row sums
    for (Eigen::Index j = 0; j < L.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(L, j); it; ++it)
        if ((it.row() == it.col() && it.value() > 0.0) || (it.row() != it.col() && it.value() < 0.0)) nsd = false;
    for (int s = 0; s < 5; ++s) {
      Vector a(g.n_nodes());
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = unif(rng);
      Vector La;
      neumann_laplacian_apply(g, a, La);
      if (inner(g, a, La) > 0.0) nsd = false;
    }
  }
  return {worst <= kOperatorTol && nsd,
          "max relative defect " + fmt("%.2e", worst) + ", semidefinite " + (nsd ? "yes" : "no") + ", largest grid 33^3"};
}

Outcome conservation() {
  const Grid g = Grid::rectangle(1.0, 1.0, 32, 32);
  const TimeMesh tm(1.0, 200);
  ModelParams p = ModelParams::defaults(g, tm);
  p.alpha = 0.1;
  p.beta = 0.5;
  p.P = 2.0;
  Trajectory u(g, 200);
  for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
    const auto mi = g.multi_index(i);
    const double x = g.coordinate(0, mi[0]), y = g.coordinate(1, mi[1]);
    p.initial.phi0[i] = 0.4 * std::cos(M_PI * x) * std::cos(2 * M_PI * y);
    p.initial.mu0[i] = 0.1 * std::cos(M_PI * y);
    p.initial.sigma0[i] = 0.5 + 0.3 * std::cos(M_PI * x);
    for (int k = 0; k < 200; ++k) u[k][i] = 0.5 * std::sin(3.0 * x + y + tm.time(k));
  }
  StateOptions so;
  so.linear.lin_tol = 1e-12;
  const StateTrajectory st = solve_forward(p, g, tm, u, so);
  const double res = conservation_residual(st, u);
  return {res <= kConservationTol, "conservation_residual " + fmt("%.2e", res) + " (2D 32x32, 200 steps)"};
}

/// 2D manufactured solution; returns the L∞(L²) error of φ.
double mms_error(int cells, int steps) {
  const double alpha = 0.1, beta = 0.5, P = 1.0, T = 0.5, k2 = 2.0 * M_PI * M_PI;
  const Grid g = Grid::rectangle(1.0, 1.0, cells, cells);
  const TimeMesh tm(T, steps);
  ModelParams p = ModelParams::defaults(g, tm);
  p.alpha = alpha;
  p.beta = beta;
  p.P = P;
  const Potential& F = p.potential;
  auto xy = [&](Eigen::Index i) {
    const auto mi = g.multi_index(i);
    return std::pair{g.coordinate(0, mi[0]), g.coordinate(1, mi[1])};
  };
  auto phi_ex = [](double x, double y, double t) { return 0.5 * std::cos(M_PI * x) * std::cos(M_PI * y) * std::exp(-t); };
  auto mu_ex = [&](double f) { return (k2 - beta) * f + F.dF(f); };
  for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
    const auto [x, y] = xy(i);
    const double f = phi_ex(x, y, 0.0);
    p.initial.phi0[i] = f;
    p.initial.mu0[i] = mu_ex(f);
    p.initial.sigma0[i] = 1.0 + 0.5 * f;
  }
  const Forcing forcing = [&](double t, Vector& fm, Vector&, Vector& fs) {
    for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
      const auto [x, y] = xy(i);
      const double f = phi_ex(x, y, t), f_t = -f;
      const double e = 0.5 * std::exp(-t);
      const double grad2 = M_PI * M_PI * e * e *
                           (std::pow(std::sin(M_PI * x) * std::cos(M_PI * y), 2) +
                            std::pow(std::cos(M_PI * x) * std::sin(M_PI * y), 2));
      const double lap_f = -k2 * f;
      const double m = mu_ex(f);
      const double m_t = (k2 - beta) * f_t + F.d2F(f) * f_t;
      const double lap_m = (k2 - beta) * lap_f + 3.0 * f * f * lap_f + 6.0 * f * grad2 - lap_f;
      const double s = 1.0 + 0.5 * f, s_t = 0.5 * f_t, lap_s = 0.5 * lap_f;
      fm[i] = alpha * m_t + f_t - lap_m - P * (s - m);
      fs[i] = s_t - lap_s + P * (s - m);
    }
  };
  const StateTrajectory st = solve_forward(p, g, tm, Trajectory(g, steps), {}, forcing);
  double err = 0.0;
  for (int k = 0; k <= steps; ++k) {
    Vector e(g.n_nodes());
    for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
      const auto [x, y] = xy(i);
      e[i] = st.phi[k][i] - phi_ex(x, y, tm.time(k));
    }
    err = std::max(err, norms(g, e).L2);
  }
  return err;
}

Outcome manufactured() {
  const double e0 = mms_error(8, 10), e1 = mms_error(16, 20), e2 = mms_error(32, 40);
  const double r1 = e0 / e1, r2 = e1 / e2;
  return {r1 >= kMmsRatio && r2 >= kMmsRatio, "2D errors " + fmt("%.3e", e0) + " " + fmt("%.3e", e1) + " " +
                                                  fmt("%.3e", e2) + ", ratios " + fmt("%.2f", r1) + " " +
                                                  fmt("%.2f", r2)};
}

Outcome adjoint_linearity() {
  const Problem pb = build_problem(parse_config_text(kBaseline));
  const auto& g = pb.grid;
  const auto& tm = pb.tmesh;
  const StateTrajectory st = solve_forward(pb.params, g, tm, pb.control, pb.state);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto rv = [&] {
    Vector v(g.n_nodes());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = unif(rng);
    return v;
  };
  auto rt = [&] {
    Trajectory t(g, static_cast<std::size_t>(tm.n_steps()) + 1);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = rv();
    return t;
  };
  double worst = 0.0;
  for (const AdjointScheme scheme : {AdjointScheme::consistent, AdjointScheme::backward_euler}) {
    AdjointOptions ao = pb.adjoint;
    ao.scheme = scheme;
    const AdjointSources a{rt(), rt(), rv(), rv()}, b{rt(), rt(), rv(), rv()};
    AdjointSources ab = a;
    ab += b;
    const auto ya = solve_adjoint_linear(pb.params, g, tm, st, a, ao);
    const auto yb = solve_adjoint_linear(pb.params, g, tm, st, b, ao);
    const auto yab = solve_adjoint_linear(pb.params, g, tm, st, ab, ao);
    for (auto field : {&AdjointTrajectory::q, &AdjointTrajectory::p, &AdjointTrajectory::r, &AdjointTrajectory::w}) {
      const Trajectory sum = ya.*field + yb.*field;
      worst = std::max(worst, norm_l2_l2(tm, yab.*field - sum) / norm_l2_l2(tm, sum));
    }
  }
  return {worst <= kLinearityTol, "max relative defect " + fmt("%.2e", worst) + " (65 nodes, 100 steps)"};
}

Outcome gradient_consistency() {
  RunConfig c = parse_config_text(kBaseline);
  const Problem p0 = build_problem(c);
  const GradientCheckReport r0 = gradient_check(p0.params, p0.grid, p0.tmesh, p0.control, 10, 1e-6, 0, p0.state, p0.adjoint);
  c.grid_cells = {128};
  c.n_steps = 200;
  const Problem p1 = build_problem(c);
  const GradientCheckReport r1 = gradient_check(p1.params, p1.grid, p1.tmesh, p1.control, 10, 1e-6, 0, p1.state, p1.adjoint);
  const GradientCheckReport rc =
      gradient_check(p0.params, p0.grid, p0.tmesh, p0.control, 10, 1e-6, 0, p0.state, AdjointOptions{});
  const bool pass = r0.aggregate_rel_error <= kGradTol && r1.aggregate_rel_error < r0.aggregate_rel_error;
  return {pass, "backward_euler error " + fmt("%.3e", r0.aggregate_rel_error) + " -> " +
                    fmt("%.3e", r1.aggregate_rel_error) + " after halving (per-direction max " +
                    fmt("%.2e", r0.max_rel_error) + " -> " + fmt("%.2e", r1.max_rel_error) + "), consistent " +
                    fmt("%.2e", rc.aggregate_rel_error)};
}

Outcome optimality() {
  const Problem pb = build_problem(parse_config_text(kInverseCrime));
  const Control u0(pb.control, pb.params.bounds);
  const OptimizeResult r = optimize(pb.params, pb.grid, pb.tmesh, u0, OptimizeMode{ProblemKind::cp, {}}, pb.optimize);
  const auto& rep = r.report;
  const double vi_bound = -kViTol * (1.0 + rep.gradient_norm);
  const double clamp_bound = kClampTol * (1.0 + r.control.values().max_abs());
  const bool pass = rep.iterations <= 200 && rep.vi_residual >= vi_bound && rep.clamp_mismatch <= clamp_bound;
  return {pass, std::to_string(rep.iterations) + " iterations, vi_residual " + fmt("%.2e", rep.vi_residual) +
                    " (>= " + fmt("%.2e", vi_bound) + "), clamp_mismatch " + fmt("%.4e", rep.clamp_mismatch) +
                    " (<= " + fmt("%.4e", clamp_bound) + "), J " + fmt("%.4e", rep.cost_history.back().total)};
}

std::string describe(const AlphaSweepReport& rep) {
  std::string s;
  for (const auto& c : rep.columns) s += c.name + " " + to_string(c.status) + " slope " + fmt("%.2f", c.slope) + "; ";
  return s;
}

bool all_columns_pass(const AlphaSweepReport& rep) {
  for (const auto& c : rep.columns)
    if (c.asserted && c.status != ColumnStatus::pass) return false;
  for (const auto& e : rep.row_errors)
    if (!e.empty()) return false;
  return true;
}

const std::vector<double> kAlphas{0.2, 0.1, 0.05, 0.025, 0.0125};

Outcome state_sweep() {
  RunConfig c = parse_config_text(kInverseCrime);
  c.control_u = c.target_generate_from_control;
  const Problem pb = build_problem(c);
  const AlphaSweepReport rep =
      state_alpha_sweep(pb.params, pb.grid, pb.tmesh, Control(pb.control, pb.params.bounds), kAlphas, pb.state);
  const double slope = rep.column("alpha_mu_l2_h1").slope;
  return {all_columns_pass(rep) && slope >= kSlopeMin, describe(rep)};
}

Outcome adjoint_sweep() {
  RunConfig c = parse_config_text(kInverseCrime);
  c.control_u = c.target_generate_from_control;
  const Problem pb = build_problem(c);
  const AlphaSweepReport rep = adjoint_alpha_sweep(pb.params, pb.grid, pb.tmesh, Control(pb.control, pb.params.bounds),
                                                   kAlphas, pb.state, pb.adjoint);
  const double slope = rep.column("alpha_p_linf_l2").slope;
  return {all_columns_pass(rep) && slope >= kSlopeMin, describe(rep)};
}

Outcome continuation() {
  const Problem pb = build_problem(parse_config_text(kInverseCrime));
  ContinuationOptions co;
  co.optimize = pb.optimize;
  const AlphaSweepReport rep = control_alpha_continuation(pb.params, pb.grid, pb.tmesh, kAlphas, co);
  const double gap = rep.column("cost_gap").values.back();
  const double bound = kCostGapTol * (1.0 + rep.reference_cost);
  int converged = 0;
  for (int v : rep.converged) converged += v;
  return {all_columns_pass(rep) && gap <= bound,
          describe(rep) + "final cost gap " + fmt("%.2e", gap) + " (<= " + fmt("%.2e", bound) + "), rows converged " +
              std::to_string(converged) + "/" + std::to_string(rep.converged.size())};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path d = fs::temp_directory_path() / ("tumor_ocp_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  std::ofstream(d / "small.cfg") << R"(alpha = 0.1
beta = 0.5
b0 = 1e-2
b1 = 1
b2 = 1
b3 = 1
b4 = 1
n_steps = 20
grid.cells = 16
initial.phi = cosine:0.3,0,1
initial.sigma = cosine:0.2,0.5,2
target.phi_Q = constant:0.2
target.sigma_Q = constant:0.4
control.u = cosine_t:0.3,0,1,1
opt.max_iters = 15
sweep.alphas = 0.2, 0.1, 0.05
gradcheck.directions = 4
)";
  int files = 0;
  std::string bad;
  for (const auto& sub : subcommands()) {
    std::vector<fs::path> outs;
    for (int run = 0; run < 2; ++run) {
      const fs::path out = d / (sub + std::to_string(run));
      // the second run uses a different worker count
      const std::string cmd = std::string("TUMOR_OCP_THREADS=") + (run == 0 ? "1" : "3") + " " + TUMOR_OCP_CLI + " " +
                              sub + " -c " + (d / "small.cfg").string() + " -o " + out.string() + " > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      const int rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      if (rc != exit_code::ok && rc != exit_code::not_converged) bad += sub + " exit " + std::to_string(rc) + "; ";
      outs.push_back(out);
    }
    for (const auto& entry : fs::directory_iterator(outs[0])) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = outs[1] / entry.path().filename();
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) bad += sub + "/" + entry.path().filename().string() + " differs; ";
    }
  }
  fs::remove_all(d);
  return {bad.empty() && files >= 5, std::to_string(files) + " CSV files compared byte by byte" + (bad.empty() ? "" : ": " + bad)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "operator suite", 5.0, operator_suite},
      {2, "conservation identity", 10.0, conservation},
      {3, "manufactured-solution convergence", 60.0, manufactured},
      {4, "adjoint linearity", 5.0, adjoint_linearity},
      {5, "gradient consistency", 120.0, gradient_consistency},
      {6, "optimality certificate", 600.0, optimality},
      {7, "state alpha-sweep", 120.0, state_sweep},
      {8, "adjoint alpha-sweep", 120.0, adjoint_sweep},
      {9, "control alpha-continuation", 1200.0, continuation},
      {10, "determinism", 600.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double t = seconds_since(t0);
    const bool in_time = t < c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("[%s] %2d %s: %s [%.1f s / %.0f s budget]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), t,
                c.budget_s);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
