#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "tumor_ocp/experiment.hpp"

using namespace tumor_ocp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tumor_ocp_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TUMOR_OCP_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmall = R"(alpha = 0.1
beta = 0.5
b0 = 0.01
b1 = 1
b2 = 1
n_steps = 10
grid.cells = 8

[initial]
phi = cosine:0.3,0,1
sigma = cosine:0.2,0.5,2

[target]
phi_Q = constant:0.2
phi_Omega = constant:-0.1

[control]
u = cosine_t:0.3,0,1,1

[opt]
max_iters = 5

[sweep]
alphas = 0.2, 0.1

[gradcheck]
directions = 3
)";

std::string expect_config_error(const std::string& text) {
  try {
    parse_config_text(text, "t.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return "";
}

}  // namespace

TEST(Config, DefaultsAndSections) {
  const RunConfig c = parse_config_text("alpha = 0.2 # trailing\n[grid]\ndim = 2\ncells = 4, 6\nextent = 1, 2\n");
  EXPECT_EQ(c.alpha, 0.2);
  EXPECT_EQ(c.grid_dim, 2);
  EXPECT_EQ(c.grid_cells, std::vector<int>({4, 6}));
  EXPECT_EQ(c.beta, 1.0);
  EXPECT_EQ(c.n_steps, 100);
  EXPECT_TRUE(c.given.count("grid.cells"));
  const Problem pb = build_problem(c);
  EXPECT_EQ(pb.grid.n_nodes(), 5 * 7);
  EXPECT_DOUBLE_EQ(pb.grid.extent(1), 2.0);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(expect_config_error("alpha = 0.1\nbogus = 3\n").find("t.cfg:2: unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(expect_config_error("alpha = 1\nalpha = 2\n").find("t.cfg:2: duplicate key 'alpha'"), std::string::npos);
  EXPECT_NE(expect_config_error("\n\nbeta = x\n").find("t.cfg:3:"), std::string::npos);
  EXPECT_NE(expect_config_error("[grid\n").find("t.cfg:1: unterminated"), std::string::npos);
  EXPECT_NE(expect_config_error("alpha\n").find("expected 'key = value'"), std::string::npos);
}

TEST(Config, AssumptionMessages) {
  EXPECT_NE(expect_config_error("beta = 0\n").find("(ab)"), std::string::npos);
  EXPECT_NE(expect_config_error("beta = -1\n").find("(ab)"), std::string::npos);
  EXPECT_NE(expect_config_error("P = 0\n").find("(P)"), std::string::npos);
  EXPECT_NE(expect_config_error("[control]\nlower = 1\nupper = 0\n").find("(targets)"), std::string::npos);
  EXPECT_NE(expect_config_error("b0 = 0\n").find("(constants)"), std::string::npos);
  expect_config_error("alpha = 0.1\n[opt]\nmode = cp\n");
  expect_config_error("[sweep]\nalphas = 0.1, 0.2\n");
  expect_config_error("[target]\nphi_Q = constant:1\ngenerate_from_control = constant:0\n");
}

TEST(Config, RenderRoundTrip) {
  const RunConfig c = parse_config_text(kSmall);
  const std::string text = render_config(c);
  const RunConfig back = parse_config_text(text);
  EXPECT_EQ(render_config(back), text);
  EXPECT_EQ(back.b, c.b);
  EXPECT_EQ(back.sweep_alphas, c.sweep_alphas);
  EXPECT_EQ(back.control_u, c.control_u);
}

TEST(Config, FieldSpecifiers) {
  const Grid g = Grid::line(2.0, 4);
  const Vector c = eval_field("f", "cosine:0.5,1,1", g, ".");
  for (int i = 0; i <= 4; ++i) EXPECT_NEAR(c[i], 1.0 + 0.5 * std::cos(M_PI * g.coordinate(0, i) / 2.0), 1e-15);
  EXPECT_EQ(eval_field("f", "constant:-2", g, ".").maxCoeff(), -2.0);
  EXPECT_THROW(eval_field("f", "wavy:1", g, "."), ConfigError);
  EXPECT_THROW(eval_field("f", "cosine:1", g, "."), ConfigError);
  const TimeMesh tm(1.0, 4);
  const Trajectory ct = eval_spacetime("u", "cosine_t:1,0,1,0", g, tm, ".", true);
  ASSERT_EQ(ct.size(), 4u);
  EXPECT_NEAR(ct[0][0], std::sin(M_PI * 0.125), 1e-15);
  EXPECT_EQ(eval_spacetime("q", "constant:1", g, tm, ".", false).size(), 5u);
}

TEST(Config, SnapshotRoundTripAndFileFields) {
  const fs::path d = scratch_dir("snap");
  const Grid g = Grid::rectangle(1.0, 2.0, 3, 2);
  Vector v(g.n_nodes());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 1.0 / 3.0;
  {
    std::ofstream os(d / "f.snap");
    write_snapshot(os, g, "phi", 0.25, v);
    write_snapshot(os, g, "phi", 0.5, 2.0 * v);
  }
  const auto recs = read_snapshots((d / "f.snap").string());
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].values, v);
  EXPECT_EQ(recs[1].time, 0.5);
  EXPECT_EQ(recs[0].variable, "phi");
  EXPECT_TRUE(recs[0].grid == g);

  {
    std::ofstream os(d / "one.snap");
    write_snapshot(os, g, "phi", 0.0, v);
  }
  EXPECT_EQ(eval_field("initial.phi", "file:one.snap", g, d.string()), v);
  EXPECT_THROW(eval_field("initial.phi", "file:one.snap", Grid::line(1.0, 3), d.string()), Error);
  // one record broadcasts over time, two records do not match four slices
  EXPECT_EQ(eval_spacetime("u", "file:one.snap", g, TimeMesh(1.0, 4), d.string(), true)[3], v);
  EXPECT_THROW(eval_spacetime("u", "file:f.snap", g, TimeMesh(1.0, 4), d.string(), true), Error);
  EXPECT_THROW(read_snapshots((d / "missing.snap").string()), ConfigError);
  write_file(d / "bad.snap", "# tumor_ocp snapshot\ndim 1\ncells 2\nextent 1\nvariable x\ntime 0\nvalues 3\n1\n2\n");
  EXPECT_THROW(read_snapshots((d / "bad.snap").string()), Error);
  fs::remove_all(d);
}

TEST(Run, ExitCodes) {
  const fs::path d = scratch_dir("run");
  std::ostringstream sink;
  RunConfig c = parse_config_text(kSmall);
  c.output_dir = (d / "fwd").string();
  EXPECT_EQ(run("forward", c, sink), exit_code::ok);
  EXPECT_TRUE(fs::exists(d / "fwd" / "forward_steps.csv"));
  EXPECT_TRUE(fs::exists(d / "fwd" / "summary.json"));
  EXPECT_TRUE(fs::exists(d / "fwd" / "manifest.cfg"));

  c.output_dir = (d / "opt").string();
  c.opt_max_iters = 0;
  EXPECT_EQ(run("optimize", c, sink), exit_code::not_converged);
  EXPECT_TRUE(fs::exists(d / "opt" / "iterations.csv"));

  c.output_dir = (d / "bad").string();
  EXPECT_EQ(run("backward", c, sink), exit_code::config);

  c.lin_tol = 1e-40;
  EXPECT_EQ(run("forward", c, sink), exit_code::solver);

  c = parse_config_text(kSmall);
  c.output_dir = (d / "box").string();
  c.control_u = "constant:5";
  EXPECT_EQ(run("forward", c, sink), exit_code::config);
  fs::remove_all(d);
}

TEST(Cli, ExitCodesAndDeterminism) {
  const fs::path d = scratch_dir("cli");
  write_file(d / "small.cfg", kSmall);
  write_file(d / "broken.cfg", "alpha = 0.1\nnope = 1\n");
  const std::string cfg = (d / "small.cfg").string();
  EXPECT_EQ(run_cli("forward -c " + cfg + " -o " + (d / "a").string()), 0);
  EXPECT_EQ(run_cli("forward -c " + cfg + " -o " + (d / "b").string()), 0);
  EXPECT_EQ(slurp(d / "a" / "forward_steps.csv"), slurp(d / "b" / "forward_steps.csv"));
  EXPECT_EQ(run_cli("gradcheck -c " + cfg + " -o " + (d / "g").string()), 0);
  EXPECT_EQ(run_cli("forward -c " + (d / "broken.cfg").string()), 2);
  EXPECT_EQ(run_cli("forward -c " + (d / "missing.cfg").string()), 2);
  EXPECT_EQ(run_cli("frobnicate -c " + cfg), 2);
  EXPECT_EQ(run_cli("forward -c " + cfg + " --log-level loud -o " + (d / "c").string()), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  fs::remove_all(d);
}
