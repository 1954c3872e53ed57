#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "cgmpc/plant.hpp"

namespace cgmpc {

/// Finite-horizon tracking OCP data: weights, horizon and the box constraints
/// x_lo <= C x <= x_hi (stages 1..N), u_lo <= D u <= u_hi (stages 0..N-1).
struct OcpSpec {
  PlantModel model;
  int N = 1;
  Eigen::MatrixXd Q, R, P;
  Eigen::MatrixXd C, D;
  Eigen::VectorXd x_lo, x_hi, u_lo, u_hi;

  Eigen::Index nx() const { return model.nx(); }
  Eigen::Index nu() const { return model.nu(); }
  Eigen::Index qx() const { return C.rows(); }
  Eigen::Index qu() const { return D.rows(); }
  Eigen::Index nc() const { return qx() + qu(); }
};

inline void validate(const OcpSpec& s) {
  if (s.N < 1) throw std::invalid_argument("OcpSpec: N must be >= 1");
  if (s.C.cols() != s.nx() || s.D.cols() != s.nu()) throw std::invalid_argument("OcpSpec: C/D column mismatch");
  if (s.x_lo.size() != s.qx() || s.x_hi.size() != s.qx() || s.u_lo.size() != s.qu() || s.u_hi.size() != s.qu())
    throw std::invalid_argument("OcpSpec: bound dimensions mismatch");
  if (((s.x_hi - s.x_lo).array() <= 0).any() || ((s.u_hi - s.u_lo).array() <= 0).any())
    throw std::invalid_argument("OcpSpec: bounds must satisfy lower < upper");
  if ((s.x_lo.array() >= 0).any() || (s.x_hi.array() <= 0).any() || (s.u_lo.array() >= 0).any() ||
      (s.u_hi.array() <= 0).any())
    throw std::invalid_argument("OcpSpec: origin must be strictly inside the constraint set");
  if (!detail::is_positive_definite(s.Q) || !detail::is_positive_definite(s.R) ||
      !detail::is_positive_definite(s.P))
    throw std::invalid_argument("OcpSpec: Q, R, P must be positive definite");
}

/// Condensed QP  min_eta 1/2 eta'H eta + eta'W theta  s.t.  b_lo <= M eta - L theta <= b_hi,
/// theta = (x_t, v). Row order: input rows k = 0..N-1, then state rows k = 1..N.
/// The objective relates to the OCP cost by cost(eta, theta) = eta'H eta + 2 eta'W theta + c(theta).
struct CondensedQp {
  int N = 0;
  Eigen::Index nx = 0, nu = 0, nv = 0;
  Eigen::MatrixXd H, W, M, L;
  Eigen::VectorXd b_lo, b_hi;

  Eigen::Index rows() const { return M.rows(); }
  Eigen::Index n_eta() const { return H.rows(); }
};

inline CondensedQp condense(const OcpSpec& spec, const SteadyStateBasis& basis) {
  validate(spec);
  const Eigen::Index nx = spec.nx(), nu = spec.nu(), nv = basis.nv();
  const int N = spec.N;

  // state rollout xi = Gx_roll x + Gu_roll eta, rows k = 0..N
  Eigen::MatrixXd Gx_roll = Eigen::MatrixXd::Zero((N + 1) * nx, nx);
  Eigen::MatrixXd Gu_roll = Eigen::MatrixXd::Zero((N + 1) * nx, N * nu);
  Gx_roll.topRows(nx).setIdentity();
  for (int k = 1; k <= N; ++k) {
    Gx_roll.middleRows(k * nx, nx) = spec.model.A * Gx_roll.middleRows((k - 1) * nx, nx);
    Gu_roll.middleRows(k * nx, nx) = spec.model.A * Gu_roll.middleRows((k - 1) * nx, nx);
    Gu_roll.block(k * nx, (k - 1) * nu, nx, nu) = spec.model.B;
  }

  Eigen::MatrixXd Qbar = Eigen::MatrixXd::Zero((N + 1) * nx, (N + 1) * nx);
  for (int k = 0; k < N; ++k) Qbar.block(k * nx, k * nx, nx, nx) = spec.Q;
  Qbar.bottomRightCorner(nx, nx) = spec.P;
  Eigen::MatrixXd Rbar = Eigen::MatrixXd::Zero(N * nu, N * nu);
  for (int k = 0; k < N; ++k) Rbar.block(k * nu, k * nu, nu, nu) = spec.R;

  Eigen::MatrixXd XG((N + 1) * nx, nv), UG(N * nu, nv);
  for (int k = 0; k <= N; ++k) XG.middleRows(k * nx, nx) = basis.Gx;
  for (int k = 0; k < N; ++k) UG.middleRows(k * nu, nu) = basis.Gu;

  CondensedQp qp;
  qp.N = N;
  qp.nx = nx;
  qp.nu = nu;
  qp.nv = nv;
  qp.H = Gu_roll.transpose() * Qbar * Gu_roll + Rbar;
  qp.W.resize(N * nu, nx + nv);
  qp.W.leftCols(nx) = Gu_roll.transpose() * Qbar * Gx_roll;
  qp.W.rightCols(nv) = -(Gu_roll.transpose() * Qbar * XG + Rbar * UG);

  const Eigen::Index qu = spec.qu(), qx = spec.qx();
  const Eigen::Index m = N * (qu + qx);
  qp.M = Eigen::MatrixXd::Zero(m, N * nu);
  qp.L = Eigen::MatrixXd::Zero(m, nx + nv);
  for (int k = 0; k < N; ++k) qp.M.block(k * qu, k * nu, qu, nu) = spec.D;
  for (int k = 1; k <= N; ++k) {
    qp.M.middleRows(N * qu + (k - 1) * qx, qx) = spec.C * Gu_roll.middleRows(k * nx, nx);
    qp.L.block(N * qu + (k - 1) * qx, 0, qx, nx) = -spec.C * Gx_roll.middleRows(k * nx, nx);
  }
  qp.b_lo.resize(m);
  qp.b_hi.resize(m);
  for (int k = 0; k < N; ++k) {
    qp.b_lo.segment(k * qu, qu) = spec.u_lo;
    qp.b_hi.segment(k * qu, qu) = spec.u_hi;
  }
  for (int k = 0; k < N; ++k) {
    qp.b_lo.segment(N * qu + k * qx, qx) = spec.x_lo;
    qp.b_hi.segment(N * qu + k * qx, qx) = spec.x_hi;
  }
  return qp;
}

/// Slack/equality reformulation of the condensed QP with uniform tightening Sigma:
///   min 1/2 y'Hbar y + y'Wbar theta   s.t.  Mbar y = L theta,
///   b_lo + Sigma 1 <= s <= b_hi - Sigma 1,  y = (eta, s).
struct TightenedQp {
  CondensedQp base;
  double sigma = 0.0;
  Eigen::MatrixXd Hbar, Wbar, Mbar;
  Eigen::VectorXd lo, hi;

  Eigen::Index ny() const { return Hbar.rows(); }
  Eigen::Index n_eta() const { return base.n_eta(); }
  Eigen::Index n_slack() const { return base.rows(); }
  /// S_eta y
  auto eta_of(const Eigen::VectorXd& y) const { return y.head(n_eta()); }
  /// S_s y
  auto slack_of(const Eigen::VectorXd& y) const { return y.tail(n_slack()); }
};

/// Minimum eigenvalue of Hbar restricted to null(Mbar) (Assumption 4 quantity).
inline double reduced_hessian_min_eig(const Eigen::MatrixXd& Hbar, const Eigen::MatrixXd& Mbar) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Mbar, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double smax = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-12 * std::max(1.0, smax)) ++rank;
  Eigen::MatrixXd Nn = svd.matrixV().rightCols(Mbar.cols() - rank);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Nn.transpose() * Hbar * Nn);
  return es.eigenvalues().minCoeff();
}

inline TightenedQp tighten(const CondensedQp& qp, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("tighten: sigma must be >= 0");
  TightenedQp t;
  t.base = qp;
  t.sigma = sigma;
  const Eigen::Index n = qp.n_eta(), m = qp.rows();
  t.Hbar = Eigen::MatrixXd::Zero(n + m, n + m);
  t.Hbar.topLeftCorner(n, n) = qp.H;
  t.Wbar = Eigen::MatrixXd::Zero(n + m, qp.W.cols());
  t.Wbar.topRows(n) = qp.W;
  t.Mbar.resize(m, n + m);
  t.Mbar << qp.M, -Eigen::MatrixXd::Identity(m, m);
  t.lo = qp.b_lo.array() + sigma;
  t.hi = qp.b_hi.array() - sigma;
  if (((t.hi - t.lo).array() < 0).any())
    throw std::invalid_argument("tighten: tightened set empty (sigma exceeds the admissible range)");
  if (reduced_hessian_min_eig(t.Hbar, t.Mbar) <= 0.0)
    throw std::runtime_error("tighten: Hbar not positive definite on null(Mbar)");
  return t;
}

/// Forward rollout of eta from x_t; xi has N+1 state blocks with xi_0 = x_t.
inline Eigen::VectorXd reconstruct_states(const OcpSpec& spec, const Eigen::VectorXd& x_t,
                                          const Eigen::VectorXd& eta) {
  const Eigen::Index nx = spec.nx(), nu = spec.nu();
  if (eta.size() != spec.N * nu) throw std::invalid_argument("reconstruct_states: eta length mismatch");
  Eigen::VectorXd xi((spec.N + 1) * nx);
  xi.head(nx) = x_t;
  for (int k = 0; k < spec.N; ++k)
    xi.segment((k + 1) * nx, nx) =
        spec.model.A * xi.segment(k * nx, nx) + spec.model.B * eta.segment(k * nu, nu);
  return xi;
}

/// Block weights realizing the cost norm (Q repeated N times, P once, R repeated N times).
struct CostWeightNorm {
  Eigen::MatrixXd Q, R, P;
  int N = 1;

  /// Weighted squared norm of chi_tilde = (eta_tilde, xi_tilde); equals the OCP stage cost.
  double squared(const Eigen::VectorXd& eta_tilde, const Eigen::VectorXd& xi_tilde) const {
    const Eigen::Index nx = Q.rows(), nu = R.rows();
    double acc = 0.0;
    for (int k = 0; k < N; ++k) {
      auto xt = xi_tilde.segment(k * nx, nx);
      auto ut = eta_tilde.segment(k * nu, nu);
      acc += xt.dot(Q * xt) + ut.dot(R * ut);
    }
    auto xN = xi_tilde.tail(nx);
    return acc + xN.dot(P * xN);
  }
};

/// Suboptimal value of eta_hat at (x_t, equilibrium (x_v, u_v)): states are
/// reconstructed by exact rollout, equilibrium offsets subtracted, and the
/// cost evaluated by formula. Returns (V_hat, psi_hat = sqrt(V_hat)).
inline std::pair<double, double> suboptimal_value(const OcpSpec& spec, const Eigen::VectorXd& x_t,
                                                  const Eigen::VectorXd& eta,
                                                  const Eigen::VectorXd& x_v,
                                                  const Eigen::VectorXd& u_v) {
  const Eigen::Index nx = spec.nx(), nu = spec.nu();
  Eigen::VectorXd xi = reconstruct_states(spec, x_t, eta);
  Eigen::VectorXd xi_t = xi, eta_t = eta;
  for (int k = 0; k <= spec.N; ++k) xi_t.segment(k * nx, nx) -= x_v;
  for (int k = 0; k < spec.N; ++k) eta_t.segment(k * nu, nu) -= u_v;
  CostWeightNorm w{spec.Q, spec.R, spec.P, spec.N};
  double V = w.squared(eta_t, xi_t);
  if (V < 0.0) V = 0.0;
  return {V, std::sqrt(V)};
}

}  // namespace cgmpc
