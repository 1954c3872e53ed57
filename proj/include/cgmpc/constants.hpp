#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgmpc/admm.hpp"
#include "cgmpc/lp.hpp"
#include "cgmpc/ocp.hpp"
#include "cgmpc/plant.hpp"

namespace cgmpc {

/// All scalar tuning and derived constants used by the solver and governor.
struct ConstantsBundle {
  // optimizer
  double gamma = 0.999;  // q-linear rate in (0,1)
  double rho = 0.3;      // ADMM step size
  // Lipschitz constants
  double phi = 1.0;
  double beta_chi = 3.0;  // must be > 1
  double beta_w = 200.0;
  // tightening recursion
  double pi1 = 0.99;
  double pi2 = 1e-6;
  // derived recursion constants
  double alpha1 = 0.0, zeta1 = 0.0, alpha2 = 0.0, zeta2 = 0.0, d = 0.0;
  // governor tuning
  double sigma_lower = 1e-4;  // underline Sigma
  double sigma_bar = 0.1;     // bar Sigma
  double omega = 1.0 / 300.0;
  double lambda_bar = 90.0;
  double lambda_lower = 0.0;  // underline Lambda; 0 means "use eps_lower"
  double budget_decay = 0.4;  // multiplicative decay of the budget
  double eps_lower = 0.0;     // underline epsilon
};

/// alpha1, zeta1, alpha2, zeta2 and the decay ratio d from the problem data.
/// Pure function of its inputs; throws on configuration errors.
inline void derived_constants(const OcpSpec& spec, const LqrSolution& lqr, ConstantsBundle& b) {
  const double lmin_Q = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(spec.Q).eigenvalues().minCoeff();
  const double lmin_P = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().minCoeff();
  const double lmax_P = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().maxCoeff();
  const double lmin_R = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(spec.R).eigenvalues().minCoeff();
  const double sv_B = Eigen::JacobiSVD<Eigen::MatrixXd>(spec.model.B).singularValues().maxCoeff();
  const Eigen::MatrixXd AmI = spec.model.A - Eigen::MatrixXd::Identity(spec.nx(), spec.nx());
  const double sv_AmI = Eigen::JacobiSVD<Eigen::MatrixXd>(AmI).singularValues().maxCoeff();

  if (b.beta_chi * b.beta_chi <= lmin_Q)
    throw std::invalid_argument("derived_constants: beta_chi^2 must exceed lambda_min(Q)");
  b.alpha1 = 1.0 - std::sqrt(1.0 - lmin_Q / (b.beta_chi * b.beta_chi));
  b.zeta1 = std::sqrt(sv_B) * b.beta_chi * (b.phi + 1.0);
  b.alpha2 = 1.0 - (b.pi1 + b.pi2 * sv_B * (b.phi + 1.0));
  if (b.alpha2 <= 0.0) throw std::invalid_argument("derived_constants: alpha2 <= 0 (pi1 too large)");
  const double lmin_Hchi = std::min({lmin_Q, lmin_P, lmin_R});
  b.zeta2 = b.pi2 * (sv_AmI + sv_B) / std::sqrt(lmin_Hchi);
  b.d = spec.N * lmin_Q / lmax_P + 1.0;
}

/// Headroom LP: largest uniform tightening admissible at state x,
///   max Sigma'  s.t.  Sigma' <= sigma_bar,  Sigma' >= 0,
///                     Sigma' 1 + M eta <= L(x,0) + b_hi,
///                     Sigma' 1 - M eta <= -L(x,0) - b_lo.
/// Reference-independent (the v block of L is zero). Infeasible means the
/// untightened problem has no feasible eta at x.
struct HeadroomResult {
  bool feasible = false;
  double sigma = 0.0;
};

inline HeadroomResult tightening_headroom(const CondensedQp& qp, const Eigen::VectorXd& x,
                                          double sigma_bar) {
  const Eigen::Index m = qp.rows(), n = qp.n_eta();
  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(qp.nx + qp.nv);
  theta0.head(qp.nx) = x;
  Eigen::VectorXd Lth = qp.L * theta0;
  LinearProgram lp;
  lp.c = Eigen::VectorXd::Zero(1 + n);
  lp.c(0) = 1.0;
  lp.A = Eigen::MatrixXd::Zero(2 + 2 * m, 1 + n);
  lp.b = Eigen::VectorXd::Zero(2 + 2 * m);
  lp.A(0, 0) = 1.0;
  lp.b(0) = sigma_bar;
  lp.A(1, 0) = -1.0;
  lp.b(1) = 0.0;
  lp.A.block(2, 0, m, 1).setOnes();
  lp.A.block(2, 1, m, n) = qp.M;
  lp.b.segment(2, m) = Lth + qp.b_hi;
  lp.A.block(2 + m, 0, m, 1).setOnes();
  lp.A.block(2 + m, 1, m, n) = -qp.M;
  lp.b.segment(2 + m, m) = -Lth - qp.b_lo;
  LpResult r = solve_lp(lp, /*lexicographic_refine=*/false);
  if (r.status != LpStatus::Optimal) return {false, 0.0};
  return {true, std::max(0.0, r.x(0))};
}

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

struct EstimateOptions {
  int samples = 500;
  std::uint64_t seed = 1;
  double safety_factor = 1.5;
  int rate_solves = 8;  // solves re-run for the gamma estimate
  long max_iterations = 2000000;
};

struct LipschitzEstimate {
  double beta_chi = 0.0;
  double phi = 0.0;
  double beta_w = 0.0;
  double gamma = 0.0;
  int pairs_used = 0;
};

/// Empirical maxima of the Lipschitz ratios over sampled parameter pairs,
/// inflated by the safety factor (gamma is reported uninflated). Sampling is
/// uniform over the state box and the reference interval, rejecting states
/// without tightening headroom. Deterministic under a fixed seed.
inline LipschitzEstimate estimate_lipschitz(const OcpSpec& spec, const SteadyStateBasis& basis,
                                            const CondensedQp& qp, const Eigen::VectorXd& v_lo,
                                            const Eigen::VectorXd& v_hi, const ConstantsBundle& bundle,
                                            const EstimateOptions& opts = {}) {
  if (opts.samples < 1) throw std::invalid_argument("estimate_lipschitz: samples must be >= 1");
  std::mt19937_64 rng(opts.seed);
  const Eigen::Index nx = spec.nx(), nv = basis.nv();

  // per-coordinate state box (Assumption 7 rows each touch one coordinate)
  Eigen::VectorXd xlo = Eigen::VectorXd::Constant(nx, -1.0), xhi = Eigen::VectorXd::Constant(nx, 1.0);
  for (Eigen::Index r = 0; r < spec.qx(); ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (spec.C(r, c) != 0.0) {
        double a = spec.x_lo(r) / spec.C(r, c), bb = spec.x_hi(r) / spec.C(r, c);
        xlo(c) = std::min(a, bb);
        xhi(c) = std::max(a, bb);
      }
    }
  }

  auto sample_state = [&]() -> Eigen::VectorXd {
    for (int tries = 0; tries < 1000; ++tries) {
      Eigen::VectorXd x(nx);
      for (Eigen::Index i = 0; i < nx; ++i)
        x(i) = xlo(i) + (xhi(i) - xlo(i)) * detail::uniform01(rng);
      auto h = tightening_headroom(qp, x, bundle.sigma_bar);
      if (h.feasible && h.sigma > 0.0) return x;
    }
    throw std::runtime_error("estimate_lipschitz: insufficient feasible samples");
  };
  auto sample_ref = [&]() -> Eigen::VectorXd {
    Eigen::VectorXd v(nv);
    for (Eigen::Index i = 0; i < nv; ++i)
      v(i) = v_lo(i) + (v_hi(i) - v_lo(i)) * detail::uniform01(rng);
    return v;
  };

  auto exact_solve = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& v, double sigma,
                         OptimizerState& out) {
    TightenedQp tqp = tighten(qp, sigma);
    KktFactor f = factorize(tqp, bundle.rho);
    out = OptimizerState::zero(tqp.ny());
    Eigen::VectorXd theta(nx + nv);
    theta << x, v;
    AdmmOptions ao;
    ao.gamma = bundle.gamma;
    ao.exact = true;
    ao.max_iterations = opts.max_iterations;
    run_admm(out, f, tqp, theta, ao);
  };

  LipschitzEstimate est;
  TMetric T{bundle.rho};
  for (int s = 0; s < opts.samples; ++s) {
    Eigen::VectorXd xa = sample_state(), xb = sample_state();
    Eigen::VectorXd va = sample_ref(), vb = sample_ref();
    Eigen::VectorXd tha(nx + nv), thb(nx + nv);
    tha << xa, va;
    thb << xb, vb;
    double dth = (tha - thb).norm();
    if (dth < 1e-12) continue;

    OptimizerState wa, wb;
    exact_solve(xa, va, 0.0, wa);
    exact_solve(xb, vb, 0.0, wb);
    auto [xva, uva] = equilibrium_pair(basis, va);
    auto [xvb, uvb] = equilibrium_pair(basis, vb);
    double psia = suboptimal_value(spec, xa, wa.z.head(qp.n_eta()), xva, uva).second;
    double psib = suboptimal_value(spec, xb, wb.z.head(qp.n_eta()), xvb, uvb).second;
    est.beta_chi = std::max(est.beta_chi, std::abs(psia - psib) / dth);
    est.beta_w = std::max(est.beta_w, std::sqrt(T.norm_sq(wa.z - wb.z, wa.mu - wb.mu)) / dth);

    // Sigma offsets well above the solve tolerance, or the ratio is pure noise
    auto ha = tightening_headroom(qp, xa, bundle.sigma_bar);
    double sig_b = ha.sigma * (0.2 + 0.3 * detail::uniform01(rng));
    if (sig_b > 1e-7) {
      OptimizerState ws;
      exact_solve(xa, va, sig_b, ws);
      double du = (wa.z.head(spec.nu()) - ws.z.head(spec.nu())).norm();
      est.phi = std::max(est.phi, du / sig_b);
    }
    ++est.pairs_used;
  }
  est.beta_chi *= opts.safety_factor;
  est.beta_w *= opts.safety_factor;
  est.phi *= opts.safety_factor;

  // rate estimate: re-run a few solves against their converged state
  std::mt19937_64 rng2(opts.seed + 17);
  TightenedQp tqp0 = tighten(qp, 0.0);
  KktFactor f0 = factorize(tqp0, bundle.rho);
  for (int s = 0; s < opts.rate_solves; ++s) {
    Eigen::VectorXd x(nx);
    for (int tries = 0;; ++tries) {
      for (Eigen::Index i = 0; i < nx; ++i)
        x(i) = xlo(i) + (xhi(i) - xlo(i)) * detail::uniform01(rng2);
      auto h = tightening_headroom(qp, x, bundle.sigma_bar);
      if (h.feasible && h.sigma > 0.0) break;
      if (tries > 1000) throw std::runtime_error("estimate_lipschitz: insufficient feasible samples");
    }
    Eigen::VectorXd v(nv);
    for (Eigen::Index i = 0; i < nv; ++i)
      v(i) = v_lo(i) + (v_hi(i) - v_lo(i)) * detail::uniform01(rng2);
    OptimizerState wstar;
    exact_solve(x, v, 0.0, wstar);
    Eigen::VectorXd theta(nx + nv);
    theta << x, v;
    // refine the reference point to the floating-point floor so the ratios near
    // the 1e-8 cutoff are not dominated by its own error
    const long jstar = wstar.j;
    for (long extra = 0; extra < 5000; ++extra) {
      Eigen::VectorXd zp = wstar.z, mp = wstar.mu;
      admm_step(wstar, f0, tqp0, theta);
      if (std::sqrt(T.norm_sq(wstar.z - zp, wstar.mu - mp)) <= 1e-15) break;
    }
    OptimizerState s2 = OptimizerState::zero(tqp0.ny());
    double prev = std::sqrt(T.norm_sq(s2.z - wstar.z, s2.mu - wstar.mu));
    for (long j = 0; j < jstar; ++j) {
      admm_step(s2, f0, tqp0, theta);
      double cur = std::sqrt(T.norm_sq(s2.z - wstar.z, s2.mu - wstar.mu));
      if (prev > 1e-8 && cur > 0.0) est.gamma = std::max(est.gamma, cur / prev);
      prev = cur;
      if (cur <= 1e-10) break;
    }
  }
  return est;
}

struct AssumptionReport {
  struct Item {
    std::string id;
    bool pass = false;
    std::string witness;
  };
  std::vector<Item> items;

  bool all_pass() const {
    for (const auto& it : items)
      if (!it.pass) return false;
    return true;
  }
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& it : items)
      os << (it.pass ? "[pass] " : "[FAIL] ") << it.id << ": " << it.witness << "\n";
    return os.str();
  }
};

/// Per-assumption pass/fail with witnesses (report only, never throws).
inline AssumptionReport verify_assumptions(const OcpSpec& spec, const SteadyStateBasis& basis,
                                           const LqrSolution& lqr, const ConstantsBundle& b,
                                           const Eigen::VectorXd& v_lo, const Eigen::VectorXd& v_hi) {
  AssumptionReport rep;
  std::ostringstream os;
  auto add = [&rep](const std::string& id, bool pass, const std::string& w) {
    rep.items.push_back({id, pass, w});
  };

  // A1: compact set with origin interior; equilibria interior over V
  auto interior_margin = [&](const Eigen::VectorXd& v, double shrink) {
    auto [xv, uv] = equilibrium_pair(basis, v);
    Eigen::VectorXd cx = spec.C * xv, du = spec.D * uv;
    double m = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cx.size(); ++i)
      m = std::min({m, spec.x_hi(i) - shrink - cx(i), cx(i) - (spec.x_lo(i) + shrink)});
    for (Eigen::Index i = 0; i < du.size(); ++i)
      m = std::min({m, spec.u_hi(i) - shrink - du(i), du(i) - (spec.u_lo(i) + shrink)});
    return m;
  };
  auto vertex_min_margin = [&](double shrink) {
    const Eigen::Index nv = basis.nv();
    double worst = std::numeric_limits<double>::infinity();
    const long combos = 1L << std::min<Eigen::Index>(nv, 16);
    for (long mask = 0; mask < combos; ++mask) {
      Eigen::VectorXd v(nv);
      for (Eigen::Index i = 0; i < nv; ++i) v(i) = (mask >> i) & 1 ? v_hi(i) : v_lo(i);
      worst = std::min(worst, interior_margin(v, shrink));
    }
    return worst;
  };
  const bool finite = spec.x_lo.allFinite() && spec.x_hi.allFinite() && spec.u_lo.allFinite() &&
                      spec.u_hi.allFinite();
  const bool origin_in = (spec.x_lo.array() < 0).all() && (spec.x_hi.array() > 0).all() &&
                         (spec.u_lo.array() < 0).all() && (spec.u_hi.array() > 0).all();
  double m1 = vertex_min_margin(0.0);
  os.str("");
  os << "min interior margin over V vertices = " << m1;
  add("A1 (compactness, interiority)", finite && origin_in && m1 > 0.0, os.str());

  // A2: stabilizability, via the synthesized gain
  double sr = detail::spectral_radius(spec.model.A - spec.model.B * lqr.K);
  os.str("");
  os << "spectral radius(A - BK) = " << sr;
  add("A2 (stabilizability)", sr < 1.0, os.str());

  // A3: Riccati fixed point and positive definiteness
  Eigen::MatrixXd K = lqr.K;
  double res = (lqr.P - (spec.Q + spec.model.A.transpose() * lqr.P * spec.model.A -
                         (spec.model.A.transpose() * lqr.P * spec.model.B) * K))
                   .cwiseAbs()
                   .maxCoeff();
  bool pd = detail::is_positive_definite(lqr.P) && detail::is_positive_definite(spec.Q) &&
            detail::is_positive_definite(spec.R);
  os.str("");
  os << "riccati residual = " << res;
  add("A3 (Riccati weights)", pd && res <= 1e-10, os.str());

  // A4: reduced Hessian positive definite
  double eig = 0.0;
  bool a4 = false;
  try {
    TightenedQp t = tighten(condense(spec, basis), 0.0);
    eig = reduced_hessian_min_eig(t.Hbar, t.Mbar);
    a4 = eig > 0.0;
  } catch (const std::exception&) {
    a4 = false;
  }
  os.str("");
  os << "min eig of reduced Hessian = " << eig;
  add("A4 (reduced Hessian)", a4, os.str());

  // A5: Sigma_lower-interiority over V
  double m5 = vertex_min_margin(b.sigma_lower);
  os.str("");
  os << "min margin at sigma_lower over V vertices = " << m5;
  add("A5 (reference margin)", m5 > 0.0, os.str());

  // A6: constant inequalities
  bool a6 = b.alpha1 < 1.0 && b.alpha2 > 0.0 && b.alpha2 < 1.0 &&
            b.zeta2 / b.alpha2 < b.alpha1 / b.zeta1 && b.alpha1 * std::sqrt(b.d) < 1.0;
  os.str("");
  os << "alpha1 = " << b.alpha1 << ", alpha2 = " << b.alpha2 << ", zeta2/alpha2 = " << b.zeta2 / b.alpha2
     << ", alpha1/zeta1 = " << b.alpha1 / b.zeta1 << ", alpha1*sqrt(d) = " << b.alpha1 * std::sqrt(b.d);
  add("A6 (recursion constants)", a6, os.str());

  // A7: hyper-rectangle constraint sets (one nonzero per row of C and D)
  auto one_nonzero_rows = [](const Eigen::MatrixXd& M) {
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      int nz = 0;
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        if (M(r, c) != 0.0) ++nz;
      if (nz != 1) return false;
    }
    return true;
  };
  bool a7 = one_nonzero_rows(spec.C) && one_nonzero_rows(spec.D);
  add("A7 (hyper-rectangles)", a7, a7 ? "C and D rows each touch one coordinate" : "non-box constraint rows");
  return rep;
}

}  // namespace cgmpc
