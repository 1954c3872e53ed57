#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cgmpc/admm.hpp"
#include "oracles.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct PointMassProblem {
  cgmpc::OcpSpec spec;
  cgmpc::SteadyStateBasis basis;
  cgmpc::CondensedQp qp;
};

PointMassProblem point_mass_problem() {
  MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.3, 0.01, 1.0;
  B << 0.0, 0.01;
  cgmpc::PlantModel plant(A, B);
  auto lqr = cgmpc::riccati_solve(plant, MatrixXd::Identity(2, 2), 0.001 * MatrixXd::Ones(1, 1));
  VectorXd x_hi(2), u_hi(1);
  x_hi << 0.2, 0.002;
  u_hi << 1.0;
  cgmpc::OcpSpec spec{plant, 3, MatrixXd::Identity(2, 2), 0.001 * MatrixXd::Ones(1, 1), lqr.P,
                      MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1), -x_hi, x_hi, -u_hi, u_hi};
  auto basis = cgmpc::steady_state_basis(plant);
  auto qp = cgmpc::condense(spec, basis);
  return {spec, basis, qp};
}

// map the oracle primal/multipliers to the splitting fixed point (z*, mu*)
void oracle_fixed_point(const cgmpc::CondensedQp& qp, const oracle::QpSolution& sol,
                        const VectorXd& theta, VectorXd& zstar, VectorXd& mustar) {
  VectorXd s = qp.M * sol.eta - qp.L * theta;
  zstar.resize(qp.n_eta() + qp.rows());
  zstar << sol.eta, s;
  mustar = VectorXd::Zero(zstar.size());
  mustar.tail(qp.rows()) = sol.multipliers;
}

VectorXd make_theta(const VectorXd& x, const VectorXd& v) {
  VectorXd th(x.size() + v.size());
  th << x, v;
  return th;
}

}  // namespace

TEST(Factorize, TwoVariableBlocksMatchDirectInverse) {
  // Hbar = I2, Mbar = [1 -1], rho = 1: KKT is 3x3 and invertible
  cgmpc::TightenedQp t;
  t.base.N = 1;
  t.base.nx = 1;
  t.base.nu = 1;
  t.base.nv = 1;
  t.base.H = MatrixXd::Identity(1, 1);
  t.base.W = MatrixXd::Zero(1, 2);
  t.base.M = MatrixXd::Ones(1, 1);
  t.base.L = MatrixXd::Zero(1, 2);
  t.base.b_lo = -VectorXd::Ones(1);
  t.base.b_hi = VectorXd::Ones(1);
  t.sigma = 0.0;
  t.Hbar = MatrixXd::Identity(2, 2);
  t.Wbar = MatrixXd::Zero(2, 2);
  t.Mbar.resize(1, 2);
  t.Mbar << 1.0, -1.0;
  t.lo = t.base.b_lo;
  t.hi = t.base.b_hi;

  auto f = cgmpc::factorize(t, 1.0);
  MatrixXd kkt(3, 3);
  kkt << 2, 0, 1, 0, 2, -1, 1, -1, 0;
  MatrixXd inv = kkt.inverse();
  EXPECT_LT((f.E11 - inv.topLeftCorner(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.E12 - inv.topRightCorner(2, 1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Factorize, KktIdentityOnRandomRhs) {
  auto [spec, basis, qp] = point_mass_problem();
  auto tqp = cgmpc::tighten(qp, 1e-4);
  auto f = cgmpc::factorize(tqp, 0.3);
  std::mt19937_64 rng(9);
  const Eigen::Index n = tqp.ny(), m = tqp.n_slack();
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd r(n), c(m);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = oracle::uniform(rng, -1, 1);
    for (Eigen::Index i = 0; i < m; ++i) c(i) = oracle::uniform(rng, -1, 1);
    VectorXd y = f.E11 * r + f.E12 * c;
    EXPECT_LT((tqp.Mbar * y - c).cwiseAbs().maxCoeff(), 1e-10);
    // (Hbar + rho I) y - r lies in range(Mbar'), i.e. some lambda closes the stationarity row
    VectorXd resid = (tqp.Hbar + 0.3 * MatrixXd::Identity(n, n)) * y - r;
    VectorXd lam = tqp.Mbar.transpose().colPivHouseholderQr().solve(-resid);
    EXPECT_LT((resid + tqp.Mbar.transpose() * lam).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Factorize, SingularKktThrows) {
  cgmpc::TightenedQp t;
  t.base.N = 1;
  t.base.nx = 1;
  t.base.nu = 1;
  t.base.nv = 1;
  t.base.H = MatrixXd::Zero(1, 1);
  t.base.W = MatrixXd::Zero(1, 2);
  t.base.M = MatrixXd::Ones(2, 1);
  t.base.L = MatrixXd::Zero(2, 2);
  t.base.b_lo = -VectorXd::Ones(2);
  t.base.b_hi = VectorXd::Ones(2);
  t.sigma = 0.0;
  t.Hbar = MatrixXd::Zero(3, 3);
  t.Mbar.resize(2, 3);
  t.Mbar << 1, -1, 0, 1, -1, 0;  // rank deficient rows
  t.Wbar = MatrixXd::Zero(3, 2);
  t.lo = t.base.b_lo;
  t.hi = t.base.b_hi;
  EXPECT_THROW(cgmpc::factorize(t, 0.5), std::runtime_error);
}

TEST(AdmmStep, OracleFixedPointIsStationary) {
  auto [spec, basis, qp] = point_mass_problem();
  const double sigma = 2e-4;
  auto tqp = cgmpc::tighten(qp, sigma);
  auto f = cgmpc::factorize(tqp, 0.3);
  VectorXd x(2), v(1);
  x << 0.17, 0.001;
  v << 0.25;
  VectorXd th = make_theta(x, v);
  auto sol = oracle::active_set_qp(qp.H, qp.W, qp.M, qp.L, tqp.lo, tqp.hi, th);
  ASSERT_TRUE(sol.has_value());
  VectorXd zstar, mustar;
  oracle_fixed_point(qp, *sol, th, zstar, mustar);

  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  st.z = zstar;
  st.mu = mustar;
  cgmpc::admm_step(st, f, tqp, th);
  EXPECT_LT((st.z - zstar).norm(), 1e-12);
  EXPECT_LT((st.mu - mustar).norm(), 1e-12);
}

TEST(AdmmStep, FirstStepFromZeroIsThetaGain) {
  auto [spec, basis, qp] = point_mass_problem();
  auto tqp = cgmpc::tighten(qp, 0.0);
  auto f = cgmpc::factorize(tqp, 0.3);
  VectorXd th = make_theta(VectorXd::Zero(2), VectorXd::Ones(1) * 0.1);
  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  cgmpc::admm_step(st, f, tqp, th);
  EXPECT_LT((st.y - f.theta_gain * th).norm(), 1e-14);
}

TEST(AdmmStep, UnconstrainedConvergesToEqualityMinimizer) {
  // point-mass plant with unit weights (well-conditioned Hessian) and inactive box
  MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.3, 0.01, 1.0;
  B << 0.0, 0.01;
  cgmpc::PlantModel plant(A, B);
  auto lqr = cgmpc::riccati_solve(plant, MatrixXd::Identity(2, 2), MatrixXd::Ones(1, 1));
  VectorXd big_x = VectorXd::Constant(2, 1e6), big_u = VectorXd::Constant(1, 1e6);
  cgmpc::OcpSpec spec{plant, 3, MatrixXd::Identity(2, 2), MatrixXd::Ones(1, 1), lqr.P,
                      MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1), -big_x, big_x, -big_u, big_u};
  auto basis = cgmpc::steady_state_basis(plant);
  auto qp = cgmpc::condense(spec, basis);
  auto tqp = cgmpc::tighten(qp, 0.0);
  auto f = cgmpc::factorize(tqp, 1.0);
  VectorXd x(2), v(1);
  x << 0.1, 0.001;
  v << 0.2;
  VectorXd th = make_theta(x, v);
  // KKT of the equality-constrained problem (no active box rows)
  const Eigen::Index n = tqp.ny(), m = tqp.n_slack();
  MatrixXd kkt = MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = tqp.Hbar;
  kkt.topRightCorner(n, m) = tqp.Mbar.transpose();
  kkt.bottomLeftCorner(m, n) = tqp.Mbar;
  VectorXd rhs(n + m);
  rhs.head(n) = -tqp.Wbar * th;
  rhs.tail(m) = tqp.base.L * th;
  VectorXd ystar = kkt.fullPivLu().solve(rhs).head(n);

  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  for (int j = 0; j < 400; ++j) cgmpc::admm_step(st, f, tqp, th);
  EXPECT_LT((st.y - ystar).norm(), 1e-8);
}

TEST(Residual, HandValues) {
  auto st = cgmpc::OptimizerState::zero(4);
  EXPECT_EQ(cgmpc::residual(st), 0.0);
  st.y << 3, 4, 0, 0;
  st.z.setZero();
  EXPECT_NEAR(cgmpc::residual(st), 5.0, 1e-15);
}

TEST(SuboptBound, HandValuesAndInfinityBeforeHistory) {
  auto st = cgmpc::OptimizerState::zero(2);
  auto [d0, dr0] = cgmpc::subopt_bound(st, 0.5, 1.0);
  EXPECT_TRUE(std::isinf(d0));
  EXPECT_TRUE(std::isinf(dr0));

  st.history = 2;
  st.z << 2.0, 0.0;  // ||w_j - w_{j-2}||_T^2 = 4 with the zero history
  auto [D, Dr] = cgmpc::subopt_bound(st, 0.5, 1.0);
  EXPECT_NEAR(D, 4.0, 1e-15);  // (1/gamma - 1)^{-2} = 1 at gamma = 0.5
  EXPECT_NEAR(Dr, 4.0, 1e-15);

  st.z.setZero();
  auto [Dz, Drz] = cgmpc::subopt_bound(st, 0.5, 1.0);
  EXPECT_EQ(Dz, 0.0);
  EXPECT_EQ(Drz, 0.0);
}

TEST(SuboptBound, DominatesTrueErrorAlongFullSolve) {
  auto [spec, basis, qp] = point_mass_problem();
  const double sigma = 2e-4, rho = 0.3, gamma = 0.999;
  auto tqp = cgmpc::tighten(qp, sigma);
  auto f = cgmpc::factorize(tqp, rho);
  VectorXd x(2), v(1);
  x << 0.17, 0.001;
  v << 0.25;
  VectorXd th = make_theta(x, v);
  auto sol = oracle::active_set_qp(qp.H, qp.W, qp.M, qp.L, tqp.lo, tqp.hi, th);
  ASSERT_TRUE(sol.has_value());
  VectorXd zstar, mustar;
  oracle_fixed_point(qp, *sol, th, zstar, mustar);

  cgmpc::TMetric T{rho};
  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  long checked = 0;
  for (long j = 1; j <= 60000; ++j) {
    cgmpc::admm_step(st, f, tqp, th);
    double err = T.norm_sq(st.z - zstar, st.mu - mustar);
    if (j >= 2) {
      auto [D, Dr] = cgmpc::subopt_bound(st, gamma, rho);
      ASSERT_GE(D, err - 1e-15) << "at iteration " << j;
      ++checked;
    }
    if (err < 1e-24) break;
  }
  EXPECT_GT(checked, 1000);
}

TEST(RunAdmm, WarmOptimalTerminatesAtMinimumIterations) {
  auto [spec, basis, qp] = point_mass_problem();
  const double sigma = 2e-4;
  auto tqp = cgmpc::tighten(qp, sigma);
  auto f = cgmpc::factorize(tqp, 0.3);
  VectorXd x(2), v(1);
  x << 0.17, 0.001;
  v << 0.25;
  VectorXd th = make_theta(x, v);
  auto sol = oracle::active_set_qp(qp.H, qp.W, qp.M, qp.L, tqp.lo, tqp.hi, th);
  ASSERT_TRUE(sol.has_value());
  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  oracle_fixed_point(qp, *sol, th, st.z, st.mu);
  auto info = cgmpc::run_admm(st, f, tqp, th, {});
  EXPECT_EQ(info.iterations, 2);
  EXPECT_LE(info.Dr, sigma * sigma);
  EXPECT_LE(info.residual, sigma);
}

TEST(RunAdmm, ExitSatisfiesPrimalSafetyAndCertificate) {
  auto [spec, basis, qp] = point_mass_problem();
  const double sigma = 2e-4, rho = 0.3;
  auto tqp = cgmpc::tighten(qp, sigma);
  auto f = cgmpc::factorize(tqp, rho);
  VectorXd x(2), v(1);
  x << 0.19, -0.001;
  v << 0.27;
  VectorXd th = make_theta(x, v);
  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  auto info = cgmpc::run_admm(st, f, tqp, th, {});
  EXPECT_LE(info.residual, sigma);
  EXPECT_LE(info.Dr, sigma * sigma);

  // residual below Sigma implies the untightened constraints hold for eta_hat
  auto out = cgmpc::extract_solution(st, tqp);
  VectorXd g = qp.M * out.eta - qp.L * th;
  EXPECT_TRUE(((g - qp.b_hi).array() <= 1e-9).all());
  EXPECT_TRUE(((qp.b_lo - g).array() <= 1e-9).all());

  // suboptimality certificate against the oracle optimum
  auto sol = oracle::active_set_qp(qp.H, qp.W, qp.M, qp.L, tqp.lo, tqp.hi, th);
  ASSERT_TRUE(sol.has_value());
  VectorXd zstar, mustar;
  oracle_fixed_point(qp, *sol, th, zstar, mustar);
  cgmpc::TMetric T{rho};
  double werr = T.norm_sq(st.z - zstar, st.mu - mustar);
  double uerr = (out.u - sol->eta.head(1)).squaredNorm();
  EXPECT_GE(T.lambda_max() * werr, uerr - 1e-18);
  EXPECT_GE(info.D, werr - 1e-15);
}

TEST(RunAdmm, ExactModeMatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(21);
  for (int inst = 0; inst < 5; ++inst) {
    auto spec = oracle::random_instance(rng);
    auto basis = cgmpc::steady_state_basis(spec.model);
    auto qp = cgmpc::condense(spec, basis);
    auto tqp = cgmpc::tighten(qp, 0.0);
    auto f = cgmpc::factorize(tqp, 1.0);
    VectorXd x(spec.nx()), v = VectorXd::Zero(basis.nv());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = oracle::uniform(rng, -0.3, 0.3);
    VectorXd th = make_theta(x, v);
    auto sol = oracle::active_set_qp(qp.H, qp.W, qp.M, qp.L, qp.b_lo, qp.b_hi, th);
    ASSERT_TRUE(sol.has_value());
    auto st = cgmpc::OptimizerState::zero(tqp.ny());
    cgmpc::AdmmOptions opts;
    opts.exact = true;
    auto info = cgmpc::run_admm(st, f, tqp, th, opts);
    (void)info;
    EXPECT_LT((st.z.head(qp.n_eta()) - sol->eta).norm(), 1e-6);
  }
}

TEST(RunAdmm, IterationCapThrowsWithDiagnostics) {
  auto [spec, basis, qp] = point_mass_problem();
  auto tqp = cgmpc::tighten(qp, 1e-9);
  auto f = cgmpc::factorize(tqp, 0.3);
  VectorXd th = make_theta((VectorXd(2) << 0.19, 0.001).finished(), VectorXd::Zero(1));
  auto st = cgmpc::OptimizerState::zero(tqp.ny());
  cgmpc::AdmmOptions opts;
  opts.max_iterations = 5;
  EXPECT_THROW(cgmpc::run_admm(st, f, tqp, th, opts), std::runtime_error);
}

TEST(Projection, SlackClampIsIdempotent) {
  auto [spec, basis, qp] = point_mass_problem();
  auto tqp = cgmpc::tighten(qp, 1e-4);
  std::mt19937_64 rng(13);
  for (int i = 0; i < 50; ++i) {
    VectorXd s(tqp.n_slack());
    for (Eigen::Index k = 0; k < s.size(); ++k) s(k) = oracle::uniform(rng, -0.5, 0.5);
    VectorXd once = s.cwiseMax(tqp.lo).cwiseMin(tqp.hi);
    VectorXd twice = once.cwiseMax(tqp.lo).cwiseMin(tqp.hi);
    EXPECT_EQ(once, twice);
  }
}

TEST(TMetric, NormAndLambdaMax) {
  cgmpc::TMetric T{0.5};
  VectorXd z(2), mu(2);
  z << 1, 1;
  mu << 1, 0;
  EXPECT_NEAR(T.norm_sq(z, mu), 2.0 + 4.0, 1e-15);
  EXPECT_NEAR(T.lambda_max(), 4.0, 1e-15);
  EXPECT_NEAR(cgmpc::TMetric{2.0}.lambda_max(), 1.0, 1e-15);
}
