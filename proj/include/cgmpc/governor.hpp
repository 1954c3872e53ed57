#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cgmpc/constants.hpp"
#include "cgmpc/lp.hpp"
#include "cgmpc/ocp.hpp"
#include "cgmpc/plant.hpp"

namespace cgmpc {

/// Reference-governor state carried across time steps.
struct GovernorState {
  Eigen::VectorXd vhat;   // modified reference
  double kappa = 0.0;     // step parameter in [0,1]; 0 encodes "no modification"
  double sigma = 0.0;     // constraint tightening
  double lambda = 0.0;    // suboptimality budget
  double p = 0.0;         // terminal level (F-sublevel) of the active certificate
  double psi_check = 0.0; // ROA radius sqrt(d p)
};

struct QFlags {
  bool q1 = false, q2 = false, q3 = false;
};

/// Smallest admissible reference modification:
///   eps_lower = (omega Sigma_lower / beta_chi) (zeta1 / (alpha1 sqrt(d)) - zeta1).
inline double epsilon_lower(const ConstantsBundle& b) {
  if (b.alpha1 * std::sqrt(b.d) >= 1.0)
    throw std::invalid_argument("epsilon_lower: alpha1*sqrt(d) >= 1 (Assumption 6 violated)");
  double e = (b.omega * b.sigma_lower / b.beta_chi) * (b.zeta1 / (b.alpha1 * std::sqrt(b.d)) - b.zeta1);
  if (e <= 0.0) throw std::invalid_argument("epsilon_lower: nonpositive result");
  return e;
}

/// Reference update vhat_t = kappa (v_t - vhat_{t-1}) + vhat_{t-1}.
inline Eigen::VectorXd reference_step(const Eigen::VectorXd& vhat_prev, const Eigen::VectorXd& v,
                                      double kappa) {
  if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("reference_step: kappa outside [0,1]");
  return vhat_prev + kappa * (v - vhat_prev);
}

/// Tightening update: the terminal-set LP optimum when a modification was accepted,
/// otherwise the decay pi1 Sigma + pi2 ||theta_{t+1} - theta_t||. Clamped to
/// [0, sigma_bar].
inline double sigma_update(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_prev,
                           double sigma_prev, double kappa, double sigma_from_lp,
                           const ConstantsBundle& b) {
  double s = kappa > 0.0 ? sigma_from_lp
                         : b.pi1 * sigma_prev + b.pi2 * (theta - theta_prev).norm();
  return std::min(std::max(s, 0.0), b.sigma_bar);
}

/// Terminal-set LP over (Sigma, x_radius),
///   max Sigma  s.t.  Sigma <= Sigma''; Sigma >= 0;
///                    Sigma + svmax(K) x_radius <= b''_u;  Sigma + x_radius <= b''_x;
///                    (zeta1/alpha1) Sigma <= sqrt(d lambda_min(P)) x_radius;
///                    sqrt(d lambda_min(P)) x_radius <= (alpha2/zeta2) Sigma.
/// Then p = lambda_min(P) x_radius^2 and psi_check = sqrt(d p).
struct TerminalSetResult {
  bool ok = false;
  double sigma = 0.0;
  double x_radius = 0.0;
  double p = 0.0;
  double psi_check = 0.0;
};

inline TerminalSetResult terminal_set_lp(double sigma_cap, const Eigen::VectorXd& vhat_next,
                                     const OcpSpec& spec, const SteadyStateBasis& basis,
                                     const LqrSolution& lqr, const ConstantsBundle& b) {
  auto [xv, uv] = equilibrium_pair(basis, vhat_next);
  Eigen::VectorXd cx = spec.C * xv, du = spec.D * uv;
  double bx = std::numeric_limits<double>::infinity(), bu = bx;
  for (Eigen::Index i = 0; i < cx.size(); ++i)
    bx = std::min({bx, spec.x_hi(i) - cx(i), cx(i) - spec.x_lo(i)});
  for (Eigen::Index i = 0; i < du.size(); ++i)
    bu = std::min({bu, spec.u_hi(i) - du(i), du(i) - spec.u_lo(i)});
  const double lmin_P =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().minCoeff();
  const double sq = std::sqrt(b.d * lmin_P);
  const double svK = Eigen::JacobiSVD<Eigen::MatrixXd>(lqr.K).singularValues().maxCoeff();

  LinearProgram lp;
  lp.c.resize(2);
  lp.c << 1.0, 0.0;
  lp.A.resize(6, 2);
  lp.b.resize(6);
  lp.A << 1.0, 0.0,
         -1.0, 0.0,
          1.0, svK,
          1.0, 1.0,
          b.zeta1 / b.alpha1, -sq,
          -b.alpha2 / b.zeta2, sq;
  lp.b << sigma_cap, 0.0, bu, bx, 0.0, 0.0;
  LpResult r = solve_lp(lp);
  TerminalSetResult out;
  if (r.status != LpStatus::Optimal || r.x(0) <= 0.0) return out;
  out.ok = true;
  out.sigma = r.x(0);
  out.x_radius = r.x(1);
  out.p = lmin_P * out.x_radius * out.x_radius;
  out.psi_check = std::sqrt(b.d * out.p);
  return out;
}

/// Elementwise distances from the proposed equilibrium to the bounds shrunk
/// by sigma_lower, combined with the state-based headroom.
inline double reference_margin_bound(double sigma_headroom, const Eigen::VectorXd& vhat_next,
                                 const OcpSpec& spec, const SteadyStateBasis& basis,
                                 const ConstantsBundle& b) {
  auto [xv, uv] = equilibrium_pair(basis, vhat_next);
  Eigen::VectorXd cx = spec.C * xv, du = spec.D * uv;
  double sx = std::numeric_limits<double>::infinity(), su = sx;
  for (Eigen::Index i = 0; i < cx.size(); ++i)
    sx = std::min({sx, spec.x_hi(i) - b.sigma_lower - cx(i), cx(i) - (spec.x_lo(i) + b.sigma_lower)});
  for (Eigen::Index i = 0; i < du.size(); ++i)
    su = std::min({su, spec.u_hi(i) - b.sigma_lower - du(i), du(i) - (spec.u_lo(i) + b.sigma_lower)});
  return std::min({sigma_headroom, sx, su});
}

/// Value-growth check: accept iff psi_hat + beta_chi ||dvhat|| + zeta1 Sigma_t <= sqrt(d p_next).
struct GrowthCheck {
  bool accept = false;
  double lhs = 0.0;
  double rhs = 0.0;
};

inline GrowthCheck value_growth_check(double psi_hat, double sigma_t, const Eigen::VectorXd& vhat_next,
                                      const Eigen::VectorXd& vhat, double p_next,
                                      const ConstantsBundle& b) {
  GrowthCheck c;
  c.lhs = psi_hat + b.beta_chi * (vhat_next - vhat).norm() + b.zeta1 * sigma_t;
  c.rhs = std::sqrt(b.d * p_next);
  c.accept = c.lhs <= c.rhs;
  return c;
}

/// Admissibility qualifications evaluated with eps = eps_lower.
inline QFlags q_checks(double psi_hat, double sigma_t, double p, double sigma_next,
                       const LqrSolution& lqr, const ConstantsBundle& b) {
  QFlags q;
  const double e = b.eps_lower;
  q.q1 = psi_hat <= std::min(b.beta_chi * e, (std::sqrt(b.d) - 1.0) * b.beta_chi * e);
  q.q2 = sigma_t < b.sigma_lower;
  const double lmin_P =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().minCoeff();
  const double svK = Eigen::JacobiSVD<Eigen::MatrixXd>(lqr.K).singularValues().maxCoeff();
  q.q3 = std::sqrt(p / lmin_P) <= b.sigma_lower - sigma_next &&
         std::sqrt(svK * p / lmin_P) <= b.sigma_lower - sigma_next;
  return q;
}

/// Inputs the tick needs from the last solve and the plant.
struct TickInputs {
  Eigen::VectorXd x_t;       // state the last solve used
  Eigen::VectorXd x_next;    // measured successor state
  Eigen::VectorXd v_next;    // desired reference at t+1
  double D_prev = 0.0;       // D({w_j|t}) at the last termination
  double psi_hat = 0.0;      // psi_hat^{Sigma_t}(x_t, vhat_t)
};

/// Everything the logging layer wants from one tick.
struct StepCertificate {
  std::string branch;  // accept | quiet | min-step | headroom | budget | step-too-small | terminal | growth
  double lambda_next = 0.0;
  double kappa_max = 0.0;
  double sigma_headroom = 0.0;
  double sigma_margin = 0.0;
  TerminalSetResult terminal;
  GrowthCheck growth;
  QFlags q;
  bool accepted = false;
};

struct TickResult {
  GovernorState next;
  StepCertificate cert;
};

/// One governor tick selecting (vhat, kappa, Sigma, Lambda) for time t+1:
/// headroom LP at the measured state, budget-based step selection,
/// terminal-set construction, and the value-growth check. Every early exit
/// sets kappa = 0, keeps vhat, and falls back to the decay update for Sigma;
/// the caller then runs the solver.
inline TickResult governor_tick(const GovernorState& st, const TickInputs& in, const OcpSpec& spec,
                                const CondensedQp& qp, const SteadyStateBasis& basis,
                                const LqrSolution& lqr, const ConstantsBundle& b) {
  TickResult out;
  GovernorState& nx = out.next;
  StepCertificate& cert = out.cert;
  nx = st;
  nx.kappa = 0.0;

  const double dx = (in.x_next - in.x_t).norm();
  const double sqD = std::sqrt(std::max(in.D_prev, 0.0));
  const double lam_lo = b.lambda_lower > 0.0 ? b.lambda_lower : b.eps_lower;

  HeadroomResult head = tightening_headroom(qp, in.x_next, b.sigma_bar);
  cert.sigma_headroom = head.sigma;

  // budget update: decay while unmodified, reset once a step was taken
  nx.lambda = st.kappa == 0.0 ? std::max(lam_lo, b.budget_decay * st.lambda) : b.lambda_bar;
  cert.lambda_next = nx.lambda;

  auto fall_back = [&](const std::string& branch) {
    cert.branch = branch;
    nx.kappa = 0.0;
    Eigen::VectorXd th(in.x_next.size() + st.vhat.size()), thp(th.size());
    th << in.x_next, st.vhat;
    thp << in.x_t, st.vhat;
    nx.sigma = sigma_update(th, thp, st.sigma, 0.0, 0.0, b);
  };

  if (!head.feasible) {
    fall_back("headroom");
    return out;
  }

  const Eigen::VectorXd dv = in.v_next - st.vhat;
  const double ndv = dv.norm();
  cert.q = q_checks(in.psi_hat, st.sigma, st.p, st.sigma, lqr, b);

  if (ndv <= 1e-15) {
    // nothing to modify; the budget gate still applies, and Sigma decays
    if (sqD + b.beta_w * dx > nx.lambda) {
      fall_back("budget");
    } else {
      fall_back("quiet");
      nx.kappa = 1.0;
      cert.kappa_max = 1.0;
    }
    return out;
  }

  Eigen::VectorXd vhat_next = st.vhat;
  bool via_min_step = false;
  if (nx.lambda == lam_lo && cert.q.q1 && cert.q.q2) {
    // floored budget with the qualifications met: take the minimum admissible step
    nx.kappa = std::min(1.0, b.eps_lower / ndv);
    vhat_next = reference_step(st.vhat, in.v_next, nx.kappa);
    via_min_step = true;
    cert.kappa_max = nx.kappa;
  } else if (sqD + b.beta_w * dx > nx.lambda) {
    fall_back("budget");
    return out;
  } else {
    // closed form of the largest kappa satisfying the budget identity
    const double room = (nx.lambda - sqD) / b.beta_w;
    const double t2 = room * room - dx * dx;
    const double kmax = t2 > 0.0 ? std::sqrt(t2) / ndv : 0.0;
    cert.kappa_max = kmax;
    nx.kappa = std::min(1.0, kmax);
    vhat_next = reference_step(st.vhat, in.v_next, nx.kappa);
    if (nx.kappa < b.eps_lower / ndv) {
      // modification below the admissible minimum (covers kappa = 0 as well)
      fall_back("step-too-small");
      return out;
    }
  }

  cert.sigma_margin = reference_margin_bound(head.sigma, vhat_next, spec, basis, b);

  cert.terminal = terminal_set_lp(cert.sigma_margin, vhat_next, spec, basis, lqr, b);
  if (!cert.terminal.ok) {
    fall_back("terminal");
    return out;
  }

  cert.growth = value_growth_check(in.psi_hat, st.sigma, vhat_next, st.vhat, cert.terminal.p, b);
  if (!cert.growth.accept) {
    fall_back("growth");
    return out;
  }

  cert.branch = via_min_step ? "min-step" : "accept";
  cert.accepted = true;
  nx.vhat = vhat_next;
  nx.sigma = std::min(cert.terminal.sigma, b.sigma_bar);
  nx.p = cert.terminal.p;
  nx.psi_check = cert.terminal.psi_check;
  cert.q.q3 = q_checks(in.psi_hat, st.sigma, cert.terminal.p, nx.sigma, lqr, b).q3;
  return out;
}

}  // namespace cgmpc
