#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgmpc/config.hpp"

#ifndef CGMPC_DEFAULT_CONFIG
#define CGMPC_DEFAULT_CONFIG "configs/default.cfg"
#endif
#ifndef CGMPC_CLI_BINARY
#define CGMPC_CLI_BINARY ""
#endif

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::string default_text() { return read_file(CGMPC_DEFAULT_CONFIG); }

int run_cli(const std::string& args) {
  std::string cmd = std::string(CGMPC_CLI_BINARY) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string temp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

// drop the trailing walltime_s column from every CSV line
std::string strip_walltime(const std::string& csv) {
  std::istringstream is(csv);
  std::string line, out;
  while (std::getline(is, line)) {
    auto pos = line.rfind(',');
    out += line.substr(0, pos);
    out += '\n';
  }
  return out;
}

}  // namespace

TEST(ParseConfig, DefaultConfigRoundTrips) {
  auto rc = cgmpc::parse_config(CGMPC_DEFAULT_CONFIG);
  EXPECT_EQ(rc.spec.N, 3);
  EXPECT_EQ(rc.spec.model.A(0, 1), 0.3);
  EXPECT_EQ(rc.spec.model.B(1, 0), 0.01);
  EXPECT_EQ(rc.x0(0), 0.194);
  EXPECT_EQ(rc.x0(1), 0.0);
  EXPECT_EQ(rc.steps, 130);
  EXPECT_EQ(rc.bundle.beta_w, 200.0);
  EXPECT_EQ(rc.bundle.pi2, 0.000001);
  ASSERT_EQ(rc.schedule.segments.size(), 2u);
  EXPECT_EQ(rc.schedule.segments[0].first, 0);
  EXPECT_EQ(rc.schedule.segments[0].second(0), 0.2744);
  EXPECT_EQ(rc.schedule.segments[1].first, 25);
  EXPECT_EQ(rc.schedule.segments[1].second(0), 0.2814);
  // P synthesized, derived constants filled, eps_lower positive
  EXPECT_GT(rc.spec.P.rows(), 0);
  EXPECT_NEAR(rc.bundle.zeta1, 0.6, 1e-12);
  EXPECT_GT(rc.bundle.eps_lower, 0.0);
  EXPECT_EQ(rc.bundle.lambda_lower, rc.bundle.eps_lower);
}

TEST(ParseConfig, StructuralErrors) {
  EXPECT_THROW(cgmpc::parse_config_text("plant.A = [[1,0],[0,1]]"), cgmpc::ConfigError);  // missing keys
  auto text = default_text();
  EXPECT_THROW(cgmpc::parse_config_text(text + "\nplant.A = [[1]]\n"), cgmpc::ConfigError);  // duplicate
  EXPECT_THROW(cgmpc::parse_config_text(text + "\nextra = [1, [2\n"), cgmpc::ConfigError);  // unclosed
  EXPECT_THROW(cgmpc::parse_config_text(text + "\nno_equals_sign\n"), cgmpc::ConfigError);
}

TEST(ParseConfig, ValueErrors) {
  auto base = default_text();
  auto replace = [&](const std::string& key, const std::string& line) {
    std::istringstream is(base);
    std::string out, l;
    while (std::getline(is, l)) {
      if (l.rfind(key, 0) == 0) out += line + "\n";
      else out += l + "\n";
    }
    return out;
  };
  EXPECT_THROW(cgmpc::parse_config_text(replace("sim.steps", "sim.steps = 0")), cgmpc::ConfigError);
  EXPECT_THROW(cgmpc::parse_config_text(replace("constants.beta_chi", "constants.beta_chi = 0.5")),
               cgmpc::ConfigError);
  EXPECT_THROW(cgmpc::parse_config_text(replace("admm.gamma", "admm.gamma = 1.5")), cgmpc::ConfigError);
  EXPECT_THROW(cgmpc::parse_config_text(replace("ocp.Q", "ocp.Q = [[1, 0], [0, -1]]")),
               cgmpc::ConfigError);
  EXPECT_THROW(
      cgmpc::parse_config_text(replace("reference.segments", "reference.segments = [(0, 0.9)]")),
      cgmpc::ConfigError);  // outside [v_min, v_max]
  EXPECT_THROW(cgmpc::parse_config_text(replace("plant.A", "plant.A = [[1, oops], [0, 1]]")),
               cgmpc::ConfigError);
}

TEST(ParseConfig, LenientModeKeepsBadConstantsForReporting) {
  auto base = default_text();
  std::istringstream is(base);
  std::string out, l;
  while (std::getline(is, l)) {
    if (l.rfind("constants.pi1", 0) == 0) out += "constants.pi1 = 1.5\n";
    else out += l + "\n";
  }
  EXPECT_THROW(cgmpc::parse_config_text(out), cgmpc::ConfigError);
  auto rc = cgmpc::parse_config_text(out, /*lenient=*/true);
  EXPECT_LT(rc.bundle.alpha2, 0.0);
}

TEST(Cli, ExitCodes) {
  ASSERT_STRNE(CGMPC_CLI_BINARY, "");
  EXPECT_EQ(run_cli("simulate --config /nonexistent.cfg"), 2);
  EXPECT_EQ(run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG + " --steps 0"), 2);
  EXPECT_EQ(run_cli(std::string("estimate --config ") + CGMPC_DEFAULT_CONFIG + " --samples 0"), 2);
  EXPECT_EQ(run_cli("bogus-subcommand"), 2);
  EXPECT_EQ(run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG + " --case nope"), 2);
  EXPECT_EQ(run_cli(std::string("verify --config ") + CGMPC_DEFAULT_CONFIG), 0);
}

TEST(Cli, VerifyReportsAssumptionFailureWithExitOne) {
  auto rewrite = [&](const std::string& key, const std::string& line) {
    std::istringstream is(default_text());
    std::string out, l;
    while (std::getline(is, l)) {
      if (l.rfind(key, 0) == 0) out += line + "\n";
      else out += l + "\n";
    }
    return out;
  };
  std::string path = (std::filesystem::temp_directory_path() / "cgmpc_badcfg.cfg").string();

  std::ofstream(path) << rewrite("constants.pi1", "constants.pi1 = 1.5");
  EXPECT_EQ(run_cli("verify --config " + path), 1);  // A6 fails

  std::ofstream(path) << rewrite("ocp.Q", "ocp.Q = [[1, 0], [0, -1]]");
  EXPECT_EQ(run_cli("verify --config " + path), 1);  // A3 precondition fails

  std::remove(path.c_str());
}

TEST(Cli, LoggingEnvironmentSmoke) {
  std::string dir = temp_dir("cgmpc_cli_log");
  std::string cmd = std::string("CGMPC_LOG=info ") + CGMPC_CLI_BINARY + " simulate --config " +
                    CGMPC_DEFAULT_CONFIG + " --case a1 --steps 3 --output " + dir +
                    " >/dev/null 2>" + dir + "/err.txt";
  ASSERT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
  auto err = read_file(dir + "/err.txt");
  EXPECT_NE(err.find("t=0"), std::string::npos);
  EXPECT_NE(err.find("branch="), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Cli, SimulateSingleCaseWritesCsv) {
  std::string dir = temp_dir("cgmpc_cli_a1");
  int code = run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG +
                     " --case a1 --steps 6 --output " + dir);
  EXPECT_EQ(code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir + "/case_a1.csv"));
  auto log = cgmpc::parse_csv(dir + "/case_a1.csv");
  EXPECT_EQ(log.size(), 6u);
  std::filesystem::remove_all(dir);
}

TEST(Cli, CaseAllWritesThreeCsvsAndSummary) {
  std::string dir = temp_dir("cgmpc_cli_all");
  int code = run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG +
                     " --case all --steps 40 --output " + dir);
  EXPECT_EQ(code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir + "/case_a1.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/case_exact_desired.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/case_exact_governed.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/summary.txt"));
  auto summary = read_file(dir + "/summary.txt");
  EXPECT_NE(summary.find("a1.mean_iterations"), std::string::npos);
  EXPECT_NE(summary.find("exact_governed.total_iterations"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Cli, DeterministicOutputsModuloWalltime) {
  std::string d1 = temp_dir("cgmpc_det1"), d2 = temp_dir("cgmpc_det2");
  ASSERT_EQ(run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG +
                    " --case a1 --steps 10 --output " + d1),
            0);
  ASSERT_EQ(run_cli(std::string("simulate --config ") + CGMPC_DEFAULT_CONFIG +
                    " --case a1 --steps 10 --output " + d2),
            0);
  EXPECT_EQ(strip_walltime(read_file(d1 + "/case_a1.csv")),
            strip_walltime(read_file(d2 + "/case_a1.csv")));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}
