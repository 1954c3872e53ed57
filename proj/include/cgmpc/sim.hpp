#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgmpc/admm.hpp"
#include "cgmpc/constants.hpp"
#include "cgmpc/governor.hpp"
#include "cgmpc/ocp.hpp"

namespace cgmpc {

enum class SimCase { A1, ExactDesired, ExactGoverned };

/// Piecewise-constant desired reference: (start step, value) segments.
struct ReferenceSchedule {
  std::vector<std::pair<long, Eigen::VectorXd>> segments;

  Eigen::VectorXd at(long t) const {
    if (segments.empty()) throw std::invalid_argument("ReferenceSchedule: empty");
    Eigen::VectorXd v = segments.front().second;
    for (const auto& [start, val] : segments)
      if (t >= start) v = val;
    return v;
  }
};

struct Scenario {
  OcpSpec spec;
  ConstantsBundle bundle;
  Eigen::VectorXd x0;
  ReferenceSchedule schedule;
  long steps = 130;
  SimCase which = SimCase::A1;
  std::vector<Eigen::VectorXd> vhat_trace;  // consumed by ExactGoverned
  long max_iterations = 2000000;
  const std::function<void(long, double, double)>* solver_trace = nullptr;
};

struct StepRecord {
  long t = 0;
  Eigen::VectorXd x, u, v, vhat;
  double kappa = 0.0, sigma = 0.0, lambda = 0.0;
  long iterations = 0;
  double residual = 0.0, d_r_bound = 0.0;
  double psi_hat = 0.0, psi_check = 0.0, p_level = 0.0;
  std::string branch;
  double walltime_s = 0.0;
  // certificate extras (not part of the CSV schema)
  Eigen::VectorXd eta;
  double D_bound = 0.0;
  double growth_lhs = 0.0, growth_rhs = 0.0;
  bool q1 = false, q2 = false, q3 = false;
  bool accepted = false;
  double sigma_headroom = 0.0, sigma_margin = 0.0;
};

namespace detail {

inline Eigen::VectorXd initial_vhat(const SteadyStateBasis& basis, const Eigen::VectorXd& x0,
                                    const Eigen::VectorXd& v0) {
  // the reference that makes x0 an equilibrium, when one exists
  Eigen::VectorXd v = basis.Gx.completeOrthogonalDecomposition().solve(x0);
  if ((basis.Gx * v - x0).norm() <= 1e-9) return v;
  return v0;
}

}  // namespace detail

/// Closed-loop plant-optimizer-governor run. Case A1 executes the full
/// governor tick and Sigma-criterion solver each step; the exact cases solve
/// to the fixed exact-mode thresholds with Sigma = 0 and a prescribed
/// reference trace.
inline std::vector<StepRecord> run_closed_loop(const Scenario& sc) {
  validate(sc.spec);
  if (sc.steps < 1) throw std::invalid_argument("run_closed_loop: steps must be >= 1");
  const SteadyStateBasis basis = steady_state_basis(sc.spec.model);
  const LqrSolution lqr = riccati_solve(sc.spec.model, sc.spec.Q, sc.spec.R);
  const CondensedQp qp = condense(sc.spec, basis);
  const Eigen::Index nx = sc.spec.nx(), nv = basis.nv();

  ConstantsBundle b = sc.bundle;
  if (sc.which == SimCase::ExactGoverned && static_cast<long>(sc.vhat_trace.size()) < sc.steps)
    throw std::invalid_argument("run_closed_loop: ExactGoverned needs a vhat trace covering all steps");

  const bool exact = sc.which != SimCase::A1;
  GovernorState gs;
  gs.vhat = detail::initial_vhat(basis, sc.x0, sc.schedule.at(0));
  gs.kappa = 0.0;
  gs.sigma = exact ? 0.0 : b.omega * b.sigma_lower;
  gs.lambda = b.lambda_bar;

  // scenario invariant: x0 feasible with the initial tightening margin
  HeadroomResult head0 = tightening_headroom(qp, sc.x0, b.sigma_bar);
  if (!head0.feasible || head0.sigma < gs.sigma)
    throw std::runtime_error("run_closed_loop: x0 outside the feasible set of the initial problem");

  TightenedQp tqp = tighten(qp, gs.sigma);
  KktFactor factor = factorize(tqp, b.rho);
  OptimizerState opt = OptimizerState::zero(tqp.ny());

  Eigen::VectorXd x = sc.x0;
  std::vector<StepRecord> log;
  log.reserve(sc.steps);
  std::string next_branch = "init";

  for (long t = 0; t < sc.steps; ++t) {
    auto tic = std::chrono::steady_clock::now();
    if (exact) gs.vhat = sc.which == SimCase::ExactDesired ? sc.schedule.at(t) : sc.vhat_trace[t];

    // warm-started solve under the current tightening
    tqp.sigma = gs.sigma;
    tqp.lo = qp.b_lo.array() + gs.sigma;
    tqp.hi = qp.b_hi.array() - gs.sigma;
    if (((tqp.hi - tqp.lo).array() < 0).any())
      throw std::runtime_error("run_closed_loop: tightened set empty at t = " + std::to_string(t));
    Eigen::VectorXd theta(nx + nv);
    theta << x, gs.vhat;
    AdmmOptions ao;
    ao.gamma = b.gamma;
    ao.exact = exact;
    ao.max_iterations = sc.max_iterations;
    ao.trace = sc.solver_trace;
    AdmmInfo info = run_admm(opt, factor, tqp, theta, ao);
    Solution sol = extract_solution(opt, tqp);
    auto [xv, uv] = equilibrium_pair(basis, gs.vhat);
    const double psi_hat = suboptimal_value(sc.spec, x, sol.eta, xv, uv).second;

    StepRecord rec;
    rec.t = t;
    rec.x = x;
    rec.u = sol.u;
    rec.eta = sol.eta;
    rec.v = sc.schedule.at(t);
    rec.vhat = gs.vhat;
    rec.kappa = gs.kappa;
    rec.sigma = gs.sigma;
    rec.lambda = gs.lambda;
    rec.iterations = info.iterations;
    rec.residual = info.residual;
    rec.d_r_bound = info.Dr;
    rec.D_bound = info.D;
    rec.psi_hat = psi_hat;
    rec.psi_check = gs.psi_check;
    rec.p_level = gs.p;
    rec.branch = next_branch;

    Eigen::VectorXd x_next = sc.spec.model.A * x + sc.spec.model.B * sol.u;

    if (!exact) {
      TickInputs in;
      in.x_t = x;
      in.x_next = x_next;
      in.v_next = sc.schedule.at(t + 1);
      in.D_prev = info.D;
      in.psi_hat = psi_hat;
      TickResult tick = governor_tick(gs, in, sc.spec, qp, basis, lqr, b);
      gs = tick.next;
      next_branch = tick.cert.branch;
      rec.growth_lhs = tick.cert.growth.lhs;
      rec.growth_rhs = tick.cert.growth.rhs;
      rec.q1 = tick.cert.q.q1;
      rec.q2 = tick.cert.q.q2;
      rec.q3 = tick.cert.q.q3;
      rec.accepted = tick.cert.accepted;
      rec.sigma_headroom = tick.cert.sigma_headroom;
      rec.sigma_margin = tick.cert.sigma_margin;
    } else {
      next_branch = "exact";
    }

    rec.walltime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    log.push_back(std::move(rec));
    x = x_next;
  }
  return log;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("fmt_double: conversion failed");
  return std::string(buf, p);
}

inline std::string join_components(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += fmt_double(v(i));
  }
  return s;
}

}  // namespace detail

/// CSV schema: t, x_1..x_nx, u_1..u_nu, v, v_hat, kappa, sigma, lambda,
/// iterations, residual, d_r_bound, psi_hat, psi_check, p_level, branch,
/// walltime_s. Floats are written in round-trip precision; multi-component
/// references are ';'-joined inside their column.
inline void emit_csv(const std::vector<StepRecord>& records, const std::string& path) {
  if (records.empty()) throw std::invalid_argument("emit_csv: no records");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("emit_csv: cannot open " + path);
  const Eigen::Index nx = records.front().x.size(), nu = records.front().u.size();
  os << "t";
  for (Eigen::Index i = 1; i <= nx; ++i) os << ",x_" << i;
  for (Eigen::Index i = 1; i <= nu; ++i) os << ",u_" << i;
  os << ",v,v_hat,kappa,sigma,lambda,iterations,residual,d_r_bound,psi_hat,psi_check,p_level,branch,walltime_s\n";
  for (const auto& r : records) {
    os << r.t;
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << detail::fmt_double(r.x(i));
    for (Eigen::Index i = 0; i < nu; ++i) os << ',' << detail::fmt_double(r.u(i));
    os << ',' << detail::join_components(r.v) << ',' << detail::join_components(r.vhat) << ','
       << detail::fmt_double(r.kappa) << ',' << detail::fmt_double(r.sigma) << ','
       << detail::fmt_double(r.lambda) << ',' << r.iterations << ',' << detail::fmt_double(r.residual)
       << ',' << detail::fmt_double(r.d_r_bound) << ',' << detail::fmt_double(r.psi_hat) << ','
       << detail::fmt_double(r.psi_check) << ',' << detail::fmt_double(r.p_level) << ',' << r.branch
       << ',' << detail::fmt_double(r.walltime_s) << '\n';
  }
  if (!os) throw std::runtime_error("emit_csv: write failure on " + path);
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("parse_double: bad field '" + s + "'");
  return v;
}

inline Eigen::VectorXd parse_components(const std::string& s) {
  auto parts = split(s, ';');
  Eigen::VectorXd v(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) v(i) = parse_double(parts[i]);
  return v;
}

}  // namespace detail

/// Inverse of emit_csv over the schema columns (certificate extras are not
/// round-tripped).
inline std::vector<StepRecord> parse_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("parse_csv: cannot open " + path);
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("parse_csv: empty file");
  auto cols = detail::split(header, ',');
  Eigen::Index nx = 0, nu = 0;
  for (const auto& c : cols) {
    if (c.rfind("x_", 0) == 0) ++nx;
    if (c.rfind("u_", 0) == 0) ++nu;
  }
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (static_cast<Eigen::Index>(f.size()) != 1 + nx + nu + 13)
      throw std::runtime_error("parse_csv: wrong field count");
    StepRecord r;
    size_t k = 0;
    r.t = std::stol(f[k++]);
    r.x.resize(nx);
    for (Eigen::Index i = 0; i < nx; ++i) r.x(i) = detail::parse_double(f[k++]);
    r.u.resize(nu);
    for (Eigen::Index i = 0; i < nu; ++i) r.u(i) = detail::parse_double(f[k++]);
    r.v = detail::parse_components(f[k++]);
    r.vhat = detail::parse_components(f[k++]);
    r.kappa = detail::parse_double(f[k++]);
    r.sigma = detail::parse_double(f[k++]);
    r.lambda = detail::parse_double(f[k++]);
    r.iterations = std::stol(f[k++]);
    r.residual = detail::parse_double(f[k++]);
    r.d_r_bound = detail::parse_double(f[k++]);
    r.psi_hat = detail::parse_double(f[k++]);
    r.psi_check = detail::parse_double(f[k++]);
    r.p_level = detail::parse_double(f[k++]);
    r.branch = f[k++];
    r.walltime_s = detail::parse_double(f[k++]);
    out.push_back(std::move(r));
  }
  return out;
}

struct CaseStats {
  double mean_iterations = 0.0;
  long total_iterations = 0;
  long max_iterations = 0;
  long convergence_step = -1;  // first t with ||vhat - v|| <= 1e-9
  double total_walltime_s = 0.0;
};

struct CaseSummary {
  CaseStats a1, exact_desired, exact_governed;

  std::string to_text() const {
    auto block = [](const char* name, const CaseStats& s) {
      std::ostringstream os;
      os << name << ".mean_iterations = " << s.mean_iterations << "\n"
         << name << ".total_iterations = " << s.total_iterations << "\n"
         << name << ".max_iterations = " << s.max_iterations << "\n"
         << name << ".convergence_step = " << s.convergence_step << "\n"
         << name << ".total_walltime_s = " << s.total_walltime_s << "\n";
      return os.str();
    };
    return block("a1", a1) + block("exact_desired", exact_desired) +
           block("exact_governed", exact_governed);
  }
};

inline CaseStats case_stats(const std::vector<StepRecord>& log) {
  CaseStats s;
  for (const auto& r : log) {
    s.total_iterations += r.iterations;
    s.max_iterations = std::max(s.max_iterations, r.iterations);
    s.total_walltime_s += r.walltime_s;
    if (s.convergence_step < 0 && (r.vhat - r.v).norm() <= 1e-9) s.convergence_step = r.t;
  }
  s.mean_iterations = static_cast<double>(s.total_iterations) / static_cast<double>(log.size());
  return s;
}

inline CaseSummary compare_cases(const std::vector<StepRecord>& a1,
                                 const std::vector<StepRecord>& exact_desired,
                                 const std::vector<StepRecord>& exact_governed) {
  if (a1.size() != exact_desired.size() || a1.size() != exact_governed.size())
    throw std::invalid_argument("compare_cases: log length mismatch");
  return {case_stats(a1), case_stats(exact_desired), case_stats(exact_governed)};
}

}  // namespace cgmpc
