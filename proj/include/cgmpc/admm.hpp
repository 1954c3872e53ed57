#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "cgmpc/ocp.hpp"

namespace cgmpc {

/// Diagonal metric T = diag(1 on the z block, 1/rho^2 on the mu block).
struct TMetric {
  double rho = 1.0;

  double norm_sq(const Eigen::VectorXd& z, const Eigen::VectorXd& mu) const {
    return z.squaredNorm() + mu.squaredNorm() / (rho * rho);
  }
  double lambda_max() const { return std::max(1.0, 1.0 / (rho * rho)); }
};

/// Blocks of the inverse KKT matrix of the augmented y-subproblem
///   min 1/2 y'Hbar y + y'Wbar theta + rho/2 ||y - z + mu/rho||^2  s.t.  Mbar y = L theta.
/// For any rhs (r, c), y = E11 r + E12 c solves (Hbar + rho I) y + Mbar' lam = r, Mbar y = c.
struct KktFactor {
  Eigen::MatrixXd E11, E12;
  Eigen::MatrixXd theta_gain;  // -E11 Wbar + E12 L
  double rho = 1.0;
};

inline KktFactor factorize(const TightenedQp& tqp, double rho) {
  if (rho <= 0.0) throw std::invalid_argument("factorize: rho must be positive");
  const Eigen::Index n = tqp.ny(), m = tqp.n_slack();
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = tqp.Hbar + rho * Eigen::MatrixXd::Identity(n, n);
  kkt.topRightCorner(n, m) = tqp.Mbar.transpose();
  kkt.bottomLeftCorner(m, n) = tqp.Mbar;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible())
    throw std::runtime_error("factorize: singular KKT matrix (Assumption 4 violated or Mbar rank deficient)");
  Eigen::MatrixXd E = lu.inverse();
  KktFactor f;
  f.E11 = E.topLeftCorner(n, n);
  f.E12 = E.topRightCorner(n, m);
  f.theta_gain = -f.E11 * tqp.Wbar + f.E12 * tqp.base.L;
  f.rho = rho;
  return f;
}

/// ADMM iterates. w_j = (z_j, mu_j); two previous w are kept for the bound D.
struct OptimizerState {
  Eigen::VectorXd y, z, mu;
  Eigen::VectorXd z_m1, mu_m1, z_m2, mu_m2;
  long j = 0;
  int history = 0;

  static OptimizerState zero(Eigen::Index ny) {
    OptimizerState s;
    s.y = s.z = s.mu = Eigen::VectorXd::Zero(ny);
    s.z_m1 = s.mu_m1 = s.z_m2 = s.mu_m2 = Eigen::VectorXd::Zero(ny);
    return s;
  }
  /// Warm start from a previous solve: keeps (z, mu), drops iterate history.
  void warm_start_from(const OptimizerState& prev) {
    z = prev.z;
    mu = prev.mu;
    y = prev.y;
    j = 0;
    history = 0;
  }
};

/// One update of Eqs. y -> z -> mu. The box acts on the slack block only; the
/// eta block of the projection argument passes through unchanged.
inline void admm_step(OptimizerState& s, const KktFactor& f, const TightenedQp& tqp,
                      const Eigen::VectorXd& theta) {
  s.z_m2.swap(s.z_m1);
  s.mu_m2.swap(s.mu_m1);
  s.z_m1 = s.z;
  s.mu_m1 = s.mu;
  const double rho = f.rho;
  s.y.noalias() = f.E11 * (rho * s.z - s.mu);
  s.y.noalias() += f.theta_gain * theta;
  s.z = s.y + s.mu / rho;
  const Eigen::Index m = tqp.n_slack();
  s.z.tail(m) = s.z.tail(m).cwiseMax(tqp.lo).cwiseMin(tqp.hi);
  s.mu.noalias() += rho * (s.y - s.z);
  ++s.j;
  if (s.history < 2) ++s.history;
}

/// Primal error residual r_j = ||y_j - z_j||.
inline double residual(const OptimizerState& s) { return (s.y - s.z).norm(); }

/// Distance-to-optimum bound from the q-linear rate gamma:
///   D = (1/gamma - 1)^{-2} ||w_j - w_{j-2}||_T^2,  D^r = lambda_max(T) D.
/// Both are +inf until two full iterates exist.
inline std::pair<double, double> subopt_bound(const OptimizerState& s, double gamma, double rho) {
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("subopt_bound: gamma must be in (0,1)");
  const double inf = std::numeric_limits<double>::infinity();
  if (s.history < 2) return {inf, inf};
  TMetric T{rho};
  const double diff = T.norm_sq(s.z - s.z_m2, s.mu - s.mu_m2);
  const double c = 1.0 / gamma - 1.0;
  const double D = diff / (c * c);
  return {D, T.lambda_max() * D};
}

struct AdmmOptions {
  double gamma = 0.999;
  long max_iterations = 1000000;
  bool exact = false;          // Cases 2/3: fixed thresholds instead of Sigma^2
  double exact_residual = 1e-9;
  double exact_dr = 1e-18;
  const std::function<void(long, double, double)>* trace = nullptr;  // (j, r, D^r)
};

struct AdmmInfo {
  long iterations = 0;
  double residual = 0.0;
  double D = 0.0;
  double Dr = 0.0;
};

/// Termination loop: iterate while Sigma^2 < D^r or Sigma^2 < r^2, i.e.
/// exit once both D^r <= Sigma^2 and r^2 <= Sigma^2 (at least two iterations,
/// since D^r is +inf before w_{j-2} exists). Throws when the iteration cap is hit.
inline AdmmInfo run_admm(OptimizerState& s, const KktFactor& f, const TightenedQp& tqp,
                         const Eigen::VectorXd& theta, const AdmmOptions& opts = {}) {
  const double r_thresh2 = opts.exact ? opts.exact_residual * opts.exact_residual
                                      : tqp.sigma * tqp.sigma;
  const double dr_thresh = opts.exact ? opts.exact_dr : tqp.sigma * tqp.sigma;
  s.j = 0;
  s.history = 0;
  while (true) {
    admm_step(s, f, tqp, theta);
    const double r = residual(s);
    auto [D, Dr] = subopt_bound(s, opts.gamma, f.rho);
    if (opts.trace && *opts.trace) (*opts.trace)(s.j, r, Dr);
    if (s.j >= 2 && Dr <= dr_thresh && r * r <= r_thresh2) return {s.j, r, D, Dr};
    if (s.j >= opts.max_iterations)
      throw std::runtime_error("run_admm: iteration cap " + std::to_string(opts.max_iterations) +
                               " exceeded (r = " + std::to_string(r) + ", D^r = " + std::to_string(Dr) +
                               "); infeasible problem or gamma too optimistic");
  }
}

struct Solution {
  Eigen::VectorXd eta;
  Eigen::VectorXd u;
};

/// eta_hat = S_eta z; u_hat is its first input block. The eta blocks of y and z
/// agree within the residual, so either extraction yields the same sequence.
inline Solution extract_solution(const OptimizerState& s, const TightenedQp& tqp) {
  Eigen::VectorXd eta = s.z.head(tqp.n_eta());
  if ((s.y.head(tqp.n_eta()) - eta).norm() > residual(s) + 1e-12)
    throw std::runtime_error("extract_solution: eta blocks of y and z inconsistent");
  return {eta, eta.head(tqp.base.nu)};
}

}  // namespace cgmpc
