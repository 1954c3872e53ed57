#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <stdexcept>
#include <string>
#include <utility>

namespace cgmpc {

/// Discrete LTI plant x_{t+1} = A x_t + B u_t.
struct PlantModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }

  PlantModel() = default;
  PlantModel(Eigen::MatrixXd A_, Eigen::MatrixXd B_) : A(std::move(A_)), B(std::move(B_)) {
    if (A.rows() != A.cols()) throw std::invalid_argument("PlantModel: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("PlantModel: B row count must match A");
  }
};

/// Terminal weight P and gain K from the discrete Riccati fixed point
/// P = Q + A'PA - (A'PB)K,  K = (R + B'PB)^{-1} B'PA.
struct LqrSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
};

struct RiccatiOptions {
  double tolerance = 1e-12;
  long max_iterations = 100000;
};

namespace detail {

inline bool is_positive_definite(const Eigen::MatrixXd& S) {
  if (S.rows() != S.cols()) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  return es.eigenvalues().minCoeff() > 0.0;
}

inline double spectral_radius(const Eigen::MatrixXd& M) {
  return Eigen::EigenSolver<Eigen::MatrixXd>(M, false).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Fixed-point iteration of the Riccati recursion from P0 = Q. Throws if the
/// iteration does not settle (unstabilizable pair or ill conditioning), if the
/// residual check fails, or if A - BK is not Schur stable.
inline LqrSolution riccati_solve(const PlantModel& model, const Eigen::MatrixXd& Q,
                                 const Eigen::MatrixXd& R, const RiccatiOptions& opts = {}) {
  if (!detail::is_positive_definite(Q)) throw std::invalid_argument("riccati_solve: Q must be positive definite");
  if (!detail::is_positive_definite(R)) throw std::invalid_argument("riccati_solve: R must be positive definite");
  const Eigen::MatrixXd& A = model.A;
  const Eigen::MatrixXd& B = model.B;
  Eigen::MatrixXd P = Q;
  bool converged = false;
  for (long it = 0; it < opts.max_iterations; ++it) {
    Eigen::MatrixXd K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    Eigen::MatrixXd Pn = Q + A.transpose() * P * A - (A.transpose() * P * B) * K;
    double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (diff < opts.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw std::runtime_error("riccati_solve: no convergence after iteration cap (is (A,B) stabilizable?)");
  P = 0.5 * (P + P.transpose());
  Eigen::MatrixXd K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
  double residual =
      (P - (Q + A.transpose() * P * A - (A.transpose() * P * B) * K)).cwiseAbs().maxCoeff();
  if (residual > 1e-10)
    throw std::runtime_error("riccati_solve: residual " + std::to_string(residual) + " exceeds 1e-10");
  if (!detail::is_positive_definite(P)) throw std::runtime_error("riccati_solve: P not positive definite");
  if (detail::spectral_radius(A - B * K) >= 1.0)
    throw std::runtime_error("riccati_solve: A - BK not Schur stable");
  return {P, K};
}

/// Orthonormal basis G = (G_x, G_u) of the null space of Z = [A-I  B].
/// Steady-state pairs are (x_v, u_v) = (G_x v, G_u v).
struct SteadyStateBasis {
  Eigen::MatrixXd G;
  Eigen::MatrixXd Gx;
  Eigen::MatrixXd Gu;

  Eigen::Index nv() const { return G.cols(); }
};

/// Rank-revealing null-space computation. Column signs are fixed so the first
/// entry of G_x (falling back to G_u) with magnitude above tolerance is
/// non-negative, making reference values reproducible.
inline SteadyStateBasis steady_state_basis(const PlantModel& model, double rank_tol = 1e-10) {
  const Eigen::Index nx = model.nx(), nu = model.nu();
  Eigen::MatrixXd Z(nx, nx + nu);
  Z << model.A - Eigen::MatrixXd::Identity(nx, nx), model.B;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double smax = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rank_tol * std::max(1.0, smax)) ++rank;
  const Eigen::Index nv = nx + nu - rank;
  if (nv == 0)
    throw std::runtime_error("steady_state_basis: Z has trivial null space (no equilibria besides origin)");
  Eigen::MatrixXd G = svd.matrixV().rightCols(nv);
  for (Eigen::Index c = 0; c < nv; ++c) {
    // sign keyed to the first nonzero entry of the column; G_x rows come first,
    // so this is the first nonzero of G_x whenever that block is nonzero
    for (Eigen::Index r = 0; r < nx + nu; ++r) {
      if (std::abs(G(r, c)) > rank_tol) {
        if (G(r, c) < 0.0) G.col(c) = -G.col(c);
        break;
      }
    }
  }
  return {G, G.topRows(nx), G.bottomRows(nu)};
}

/// (x_v, u_v) = (G_x v, G_u v); satisfies A x_v + B u_v = x_v.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> equilibrium_pair(const SteadyStateBasis& basis,
                                                                    const Eigen::VectorXd& v) {
  if (v.size() != basis.nv()) throw std::invalid_argument("equilibrium_pair: v dimension mismatch");
  return {basis.Gx * v, basis.Gu * v};
}

}  // namespace cgmpc
