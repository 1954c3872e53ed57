#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "cgmpc/config.hpp"
#include "cgmpc/constants.hpp"
#include "cgmpc/governor.hpp"
#include "cgmpc/sim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssumption = 1;
constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

enum class LogLevel { Off, Info, Trace };

LogLevel log_level() {
  const char* env = std::getenv("CGMPC_LOG");
  if (!env) return LogLevel::Off;
  std::string s(env);
  if (s == "trace") return LogLevel::Trace;
  if (s == "info") return LogLevel::Info;
  return LogLevel::Off;
}

void print_step(const cgmpc::StepRecord& r) {
  std::cerr << "t=" << r.t << " x=(";
  for (Eigen::Index i = 0; i < r.x.size(); ++i) std::cerr << (i ? "," : "") << r.x(i);
  std::cerr << ") vhat=" << r.vhat.transpose() << " kappa=" << r.kappa << " sigma=" << r.sigma
            << " iters=" << r.iterations << " branch=" << r.branch << "\n";
}

int run_simulate(const std::string& config_path, const std::string& case_name, long steps_override,
                 const std::string& outdir) {
  cgmpc::RunConfig rc;
  try {
    rc = cgmpc::parse_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  }
  if (steps_override > 0) rc.steps = steps_override;

  std::filesystem::create_directories(outdir);
  const LogLevel lvl = log_level();
  std::function<void(long, double, double)> tracer = [](long j, double r, double dr) {
    std::cerr << "  j=" << j << " r=" << r << " D^r=" << dr << "\n";
  };

  auto run_case = [&](cgmpc::SimCase which,
                      const std::vector<Eigen::VectorXd>& trace) -> std::vector<cgmpc::StepRecord> {
    cgmpc::Scenario sc = cgmpc::build_scenario(rc, which);
    sc.vhat_trace = trace;
    if (lvl == LogLevel::Trace) sc.solver_trace = &tracer;
    auto log = cgmpc::run_closed_loop(sc);
    if (lvl != LogLevel::Off)
      for (const auto& r : log) print_step(r);
    return log;
  };

  try {
    namespace fs = std::filesystem;
    if (case_name == "a1") {
      cgmpc::emit_csv(run_case(cgmpc::SimCase::A1, {}), (fs::path(outdir) / "case_a1.csv").string());
    } else if (case_name == "exact-desired") {
      cgmpc::emit_csv(run_case(cgmpc::SimCase::ExactDesired, {}),
                      (fs::path(outdir) / "case_exact_desired.csv").string());
    } else if (case_name == "exact-governed") {
      auto a1 = run_case(cgmpc::SimCase::A1, {});
      std::vector<Eigen::VectorXd> trace;
      for (const auto& r : a1) trace.push_back(r.vhat);
      cgmpc::emit_csv(run_case(cgmpc::SimCase::ExactGoverned, trace),
                      (fs::path(outdir) / "case_exact_governed.csv").string());
    } else if (case_name == "all") {
      auto a1 = run_case(cgmpc::SimCase::A1, {});
      std::vector<Eigen::VectorXd> trace;
      for (const auto& r : a1) trace.push_back(r.vhat);
      auto c2 = run_case(cgmpc::SimCase::ExactDesired, {});
      auto c3 = run_case(cgmpc::SimCase::ExactGoverned, trace);
      cgmpc::emit_csv(a1, (fs::path(outdir) / "case_a1.csv").string());
      cgmpc::emit_csv(c2, (fs::path(outdir) / "case_exact_desired.csv").string());
      cgmpc::emit_csv(c3, (fs::path(outdir) / "case_exact_governed.csv").string());
      cgmpc::CaseSummary summary = cgmpc::compare_cases(a1, c2, c3);
      std::ofstream os(fs::path(outdir) / "summary.txt");
      os << summary.to_text();
      std::cout << summary.to_text();
    } else {
      std::cerr << "unknown case '" << case_name << "'\n";
      return kExitValidation;
    }
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

int run_verify(const std::string& config_path) {
  cgmpc::RunConfig rc;
  try {
    rc = cgmpc::parse_config(config_path, /*lenient=*/true);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  }
  cgmpc::LqrSolution lqr;
  lqr.P = rc.spec.P;
  try {
    lqr.K = cgmpc::riccati_solve(rc.spec.model, rc.spec.Q, rc.spec.R).K;
  } catch (const std::exception&) {
    lqr.K = Eigen::MatrixXd::Zero(rc.spec.nu(), rc.spec.nx());
  }
  cgmpc::SteadyStateBasis basis = cgmpc::steady_state_basis(rc.spec.model);
  cgmpc::AssumptionReport rep =
      cgmpc::verify_assumptions(rc.spec, basis, lqr, rc.bundle, rc.v_lo, rc.v_hi);
  std::cout << rep.to_text();
  const auto& b = rc.bundle;
  std::cout << "derived constants:\n"
            << "  alpha1 = " << b.alpha1 << "\n  zeta1  = " << b.zeta1 << "\n  alpha2 = " << b.alpha2
            << "\n  zeta2  = " << b.zeta2 << "\n  d      = " << b.d
            << "\n  eps_lower = " << b.eps_lower << "\n";
  return rep.all_pass() ? kExitOk : kExitAssumption;
}

int run_estimate(const std::string& config_path, int samples, std::uint64_t seed) {
  if (samples < 1) {
    std::cerr << "validation error: --samples must be >= 1\n";
    return kExitValidation;
  }
  cgmpc::RunConfig rc;
  try {
    rc = cgmpc::parse_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    cgmpc::SteadyStateBasis basis = cgmpc::steady_state_basis(rc.spec.model);
    cgmpc::CondensedQp qp = cgmpc::condense(rc.spec, basis);
    cgmpc::EstimateOptions opts;
    opts.samples = samples;
    opts.seed = seed;
    cgmpc::LipschitzEstimate est =
        cgmpc::estimate_lipschitz(rc.spec, basis, qp, rc.v_lo, rc.v_hi, rc.bundle, opts);
    std::cout << "sampled estimates over " << est.pairs_used << " pairs (safety factor 1.5):\n"
              << "  beta_chi = " << est.beta_chi << "   (configured " << rc.bundle.beta_chi << ")\n"
              << "  phi      = " << est.phi << "   (configured " << rc.bundle.phi << ")\n"
              << "  beta_w   = " << est.beta_w << "   (configured " << rc.bundle.beta_w << ")\n"
              << "  gamma    = " << est.gamma << "   (configured " << rc.bundle.gamma << ")\n";
  } catch (const std::exception& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Suboptimal linear-quadratic MPC with an ADMM optimizer and a computation governor"};
  app.require_subcommand(1);

  std::string config_path, case_name = "all", outdir = ".";
  long steps = 0;
  int samples = 500;
  std::uint64_t seed = 1;

  auto* sim = app.add_subcommand("simulate", "run closed-loop cases and write CSV logs");
  sim->add_option("--config", config_path, "config file")->required();
  sim->add_option("--case", case_name, "a1|exact-desired|exact-governed|all");
  sim->add_option("--steps", steps, "override sim.steps");
  sim->add_option("--output", outdir, "output directory");

  auto* ver = app.add_subcommand("verify", "check assumptions and print derived constants");
  ver->add_option("--config", config_path, "config file")->required();

  auto* est = app.add_subcommand("estimate", "sample-based Lipschitz/rate estimates");
  est->add_option("--config", config_path, "config file")->required();
  est->add_option("--samples", samples, "number of sampled pairs");
  est->add_option("--seed", seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (sim->parsed()) {
    if (steps < 0) {
      std::cerr << "validation error: --steps must be positive\n";
      return kExitValidation;
    }
    if (sim->count("--steps") && steps == 0) {
      std::cerr << "validation error: --steps must be positive\n";
      return kExitValidation;
    }
    return run_simulate(config_path, case_name, steps, outdir);
  }
  if (ver->parsed()) return run_verify(config_path);
  if (est->parsed()) return run_estimate(config_path, samples, seed);
  return kExitValidation;
}
