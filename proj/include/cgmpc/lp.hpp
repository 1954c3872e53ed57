#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cgmpc {

/// maximize c'x subject to A x <= b, x free.
struct LinearProgram {
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
};

namespace detail {

constexpr double kLpPivotTol = 1e-11;
constexpr double kLpFeasTol = 1e-9;

// Canonical dense tableau simplex, maximization, Bland's rule.
class SimplexTableau {
 public:
  SimplexTableau(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    m_ = static_cast<int>(A.rows());
    n_struct_ = static_cast<int>(A.cols());
    // columns: structural | slack | artificial(for rows negated to keep rhs >= 0)
    std::vector<int> art_rows;
    for (int i = 0; i < m_; ++i)
      if (b(i) < 0.0) art_rows.push_back(i);
    n_art_ = static_cast<int>(art_rows.size());
    int cols = n_struct_ + m_ + n_art_;
    T_ = Eigen::MatrixXd::Zero(m_, cols);
    rhs_ = Eigen::VectorXd::Zero(m_);
    basis_.assign(m_, -1);
    int art = 0;
    for (int i = 0; i < m_; ++i) {
      double sgn = b(i) < 0.0 ? -1.0 : 1.0;
      T_.row(i).head(n_struct_) = sgn * A.row(i);
      T_(i, n_struct_ + i) = sgn;  // slack
      rhs_(i) = sgn * b(i);
      if (sgn < 0.0) {
        T_(i, n_struct_ + m_ + art) = 1.0;
        basis_[i] = n_struct_ + m_ + art;
        ++art;
      } else {
        basis_[i] = n_struct_ + i;
      }
    }
    first_art_ = n_struct_ + m_;
  }

  bool has_artificials() const { return n_art_ > 0; }

  /// Runs phase 1 (if needed) then phase 2 on `obj` over structural+slack
  /// columns. Returns Optimal/Infeasible/Unbounded.
  LpStatus solve(const Eigen::VectorXd& obj_struct) {
    if (n_art_ > 0) {
      Eigen::VectorXd obj1 = Eigen::VectorXd::Zero(T_.cols());
      obj1.tail(n_art_).setConstant(-1.0);
      LpStatus st = optimize(obj1, /*allow_artificial=*/true);
      if (st != LpStatus::Optimal) return LpStatus::Infeasible;
      double infeas = 0.0;
      for (int i = 0; i < m_; ++i)
        if (basis_[i] >= first_art_) infeas += rhs_(i);
      if (infeas > kLpFeasTol) return LpStatus::Infeasible;
      drive_out_artificials();
    }
    Eigen::VectorXd obj = Eigen::VectorXd::Zero(T_.cols());
    obj.head(n_struct_) = obj_struct;
    return optimize(obj, /*allow_artificial=*/false);
  }

  Eigen::VectorXd structural_solution() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_struct_);
    for (int i = 0; i < m_; ++i)
      if (basis_[i] < n_struct_) x(basis_[i]) = rhs_(i);
    return x;
  }

 private:
  LpStatus optimize(const Eigen::VectorXd& obj, bool allow_artificial) {
    const int cols = static_cast<int>(T_.cols());
    const long iter_cap = 50000L + 200L * cols;
    for (long it = 0; it < iter_cap; ++it) {
      // reduced cost c_j - z_j, entering = smallest improving index (Bland)
      int enter = -1;
      for (int j = 0; j < cols; ++j) {
        if (!allow_artificial && j >= first_art_) break;
        bool basic = false;
        for (int i = 0; i < m_; ++i)
          if (basis_[i] == j) { basic = true; break; }
        if (basic) continue;
        double z = 0.0;
        for (int i = 0; i < m_; ++i) z += obj(basis_[i]) * T_(i, j);
        if (obj(j) - z > 1e-9) { enter = j; break; }
      }
      if (enter < 0) return LpStatus::Optimal;
      int leave = -1;
      double best = 0.0;
      for (int i = 0; i < m_; ++i) {
        if (T_(i, enter) > kLpPivotTol) {
          double ratio = rhs_(i) / T_(i, enter);
          if (leave < 0 || ratio < best - 1e-12 ||
              (ratio < best + 1e-12 && basis_[i] < basis_[leave]))
            { leave = i; best = ratio; }
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      double piv = T_(leave, enter);
      T_.row(leave) /= piv;
      rhs_(leave) /= piv;
      for (int i = 0; i < m_; ++i) {
        if (i == leave) continue;
        double f = T_(i, enter);
        if (f != 0.0) {
          T_.row(i) -= f * T_.row(leave);
          rhs_(i) -= f * rhs_(leave);
        }
      }
      basis_[leave] = enter;
    }
    throw std::runtime_error("simplex: iteration cap exceeded");
  }

  void drive_out_artificials() {
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < first_art_) continue;
      int col = -1;
      for (int j = 0; j < first_art_; ++j)
        if (std::abs(T_(i, j)) > kLpPivotTol) { col = j; break; }
      if (col < 0) continue;  // redundant row; artificial stays basic at zero
      double piv = T_(i, col);
      T_.row(i) /= piv;
      rhs_(i) /= piv;
      for (int r = 0; r < m_; ++r) {
        if (r == i) continue;
        double f = T_(r, col);
        if (f != 0.0) {
          T_.row(r) -= f * T_.row(i);
          rhs_(r) -= f * rhs_(i);
        }
      }
      basis_[i] = col;
    }
  }

  Eigen::MatrixXd T_;
  Eigen::VectorXd rhs_;
  std::vector<int> basis_;
  int m_ = 0, n_struct_ = 0, n_art_ = 0, first_art_ = 0;
};

inline LpResult solve_lp_basic(const LinearProgram& lp) {
  const int n = static_cast<int>(lp.c.size());
  const int m = static_cast<int>(lp.A.rows());
  if (lp.A.cols() != n || lp.b.size() != m) throw std::invalid_argument("solve_lp: dimension mismatch");
  // free variables split as x = p - q
  Eigen::MatrixXd As(m, 2 * n);
  As << lp.A, -lp.A;
  Eigen::VectorXd cs(2 * n);
  cs << lp.c, -lp.c;
  SimplexTableau tab(As, lp.b);
  LpStatus st = tab.solve(cs);
  LpResult res;
  res.status = st;
  if (st == LpStatus::Optimal) {
    Eigen::VectorXd pq = tab.structural_solution();
    res.x = pq.head(n) - pq.tail(n);
    res.objective = lp.c.dot(res.x);
  }
  return res;
}

}  // namespace detail

/// Two-phase dense simplex with Bland's rule. Ties between optimal vertices
/// are broken by the lexicographically smallest solution: after the first
/// solve, each coordinate is minimized in turn over the optimal face.
inline LpResult solve_lp(const LinearProgram& lp, bool lexicographic_refine = true) {
  LpResult res = detail::solve_lp_basic(lp);
  if (res.status != LpStatus::Optimal || !lexicographic_refine) return res;
  const int n = static_cast<int>(lp.c.size());
  const int m = static_cast<int>(lp.A.rows());
  const double band = 1e-12 * std::max(1.0, std::abs(res.objective));
  Eigen::MatrixXd A2(m + 2 + 2 * n, n);
  Eigen::VectorXd b2(m + 2 + 2 * n);
  A2.topRows(m) = lp.A;
  b2.head(m) = lp.b;
  A2.row(m) = lp.c.transpose();
  b2(m) = res.objective + band;
  A2.row(m + 1) = -lp.c.transpose();
  b2(m + 1) = -res.objective + band;
  int extra = m + 2;
  Eigen::VectorXd x = res.x;
  for (int i = 0; i < n; ++i) {
    LinearProgram sub;
    sub.c = Eigen::VectorXd::Zero(n);
    sub.c(i) = -1.0;  // minimize x_i
    sub.A = A2.topRows(extra);
    sub.b = b2.head(extra);
    LpResult r = detail::solve_lp_basic(sub);
    if (r.status == LpStatus::Optimal) x(i) = r.x(i);
    A2.row(extra).setZero();
    A2(extra, i) = 1.0;
    b2(extra) = x(i) + band;
    A2.row(extra + 1).setZero();
    A2(extra + 1, i) = -1.0;
    b2(extra + 1) = -x(i) + band;
    extra += 2;
  }
  res.x = x;
  res.objective = lp.c.dot(x);
  return res;
}

}  // namespace cgmpc
