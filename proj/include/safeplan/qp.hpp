#pragma once

// Dense convex QP
//   minimize 0.5 x'Hx + q'x + constant   subject to  l <= Ax <= u
// solved by ADMM on the splitting z = Ax after Ruiz equilibration, followed
// by an active-set polish.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safeplan {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct QpProblem {
  struct RowBlock {
    std::string name;
    int begin = 0;
    int count = 0;
  };

  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear_term;
  double constant = 0.0;
  Eigen::MatrixXd constraint_matrix;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<RowBlock> blocks;

  int variables() const { return static_cast<int>(hessian.rows()); }
  int constraints() const { return static_cast<int>(constraint_matrix.rows()); }

  double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(hessian * x) + linear_term.dot(x) + constant;
  }

  /// Largest bound violation of A x.
  double infeasibility(const Eigen::VectorXd& x) const {
    if (constraints() == 0) return 0.0;
    const Eigen::VectorXd ax = constraint_matrix * x;
    return std::max({(lower - ax).maxCoeff(), (ax - upper).maxCoeff(), 0.0});
  }

  const RowBlock* block(const std::string& name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return &b;
    }
    return nullptr;
  }

  void validate() const {
    const auto n = hessian.rows();
    if (hessian.cols() != n || linear_term.size() != n) throw std::invalid_argument("QP: bad objective shape");
    if (constraint_matrix.cols() != n && constraint_matrix.rows() > 0) {
      throw std::invalid_argument("QP: constraint matrix column mismatch");
    }
    if (lower.size() != constraint_matrix.rows() || upper.size() != constraint_matrix.rows()) {
      throw std::invalid_argument("QP: bound length mismatch");
    }
    if (!(lower.array() <= upper.array()).all()) throw std::invalid_argument("QP: lower > upper");
  }
};

enum class QpStatus { kSolved, kInfeasible, kMaxIterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kSolved: return "solved";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct QpSettings {
  double tolerance = 1e-6;
  int max_iterations = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  double infeasibility_tolerance = 1e-5;
  int check_interval = 5;
  int adapt_interval = 25;
  int scaling_iterations = 25;
  bool polish = true;
};

struct QpResult {
  QpStatus status = QpStatus::kMaxIterations;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  int iterations = 0;
  double objective = kInf;
  double primal_residual = kInf;
  double dual_residual = kInf;
  bool polished = false;

  bool solved() const { return status == QpStatus::kSolved; }
};

namespace detail {

class AdmmWorkspace {
 public:
  AdmmWorkspace(const QpProblem& qp, const QpSettings& s) : qp_(qp), s_(s) {
    const int m = qp.constraints();
    rho_vec_.resize(m);
    set_rho(s.rho);
  }

  void set_rho(double rho) {
    rho_ = std::clamp(rho, 1e-6, 1e6);
    for (int i = 0; i < qp_.constraints(); ++i) {
      const double l = qp_.lower[i], u = qp_.upper[i];
      if (!std::isfinite(l) && !std::isfinite(u)) {
        rho_vec_[i] = 1e-6;
      } else if (u - l < 1e-12) {
        rho_vec_[i] = 1e3 * rho_;
      } else {
        rho_vec_[i] = rho_;
      }
    }
    Eigen::MatrixXd kkt = qp_.hessian;
    kkt.diagonal().array() += s_.sigma;
    if (qp_.constraints() > 0) {
      kkt.noalias() += qp_.constraint_matrix.transpose() * rho_vec_.asDiagonal() * qp_.constraint_matrix;
    }
    factor_.compute(kkt);
  }

  double rho() const { return rho_; }
  const Eigen::VectorXd& rho_vec() const { return rho_vec_; }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return factor_.solve(rhs); }

 private:
  const QpProblem& qp_;
  const QpSettings& s_;
  double rho_ = 0.1;
  Eigen::VectorXd rho_vec_;
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Scaled problem: x = D xs, rows multiplied by E, objective by c.
struct Scaling {
  QpProblem scaled;
  Eigen::VectorXd d;
  Eigen::VectorXd e;
  double c = 1.0;
};

inline double ruiz_factor(double norm) {
  if (!(norm > 1e-4)) return 1.0;
  return 1.0 / std::sqrt(std::min(norm, 1e4));
}

inline Scaling equilibrate(const QpProblem& qp, int iterations) {
  const int n = qp.variables(), m = qp.constraints();
  Scaling sc{qp, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(m), 1.0};
  QpProblem& s = sc.scaled;
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd dk(n), ek(m);
    for (int j = 0; j < n; ++j) {
      double norm = s.hessian.col(j).cwiseAbs().maxCoeff();
      if (m > 0) norm = std::max(norm, s.constraint_matrix.col(j).cwiseAbs().maxCoeff());
      dk[j] = ruiz_factor(norm);
    }
    for (int i = 0; i < m; ++i) ek[i] = ruiz_factor(s.constraint_matrix.row(i).cwiseAbs().maxCoeff());
    s.hessian = dk.asDiagonal() * s.hessian * dk.asDiagonal();
    s.linear_term = dk.cwiseProduct(s.linear_term);
    if (m > 0) s.constraint_matrix = ek.asDiagonal() * s.constraint_matrix * dk.asDiagonal();
    sc.d = sc.d.cwiseProduct(dk);
    sc.e = sc.e.cwiseProduct(ek);
  }
  double mean_col = 0.0;
  for (int j = 0; j < n; ++j) mean_col += s.hessian.col(j).cwiseAbs().maxCoeff();
  mean_col /= std::max(n, 1);
  const double cost_norm = std::max(mean_col, inf_norm(s.linear_term));
  sc.c = cost_norm > 1e-4 ? 1.0 / std::min(cost_norm, 1e4) : 1.0;
  s.hessian *= sc.c;
  s.linear_term *= sc.c;
  s.constant *= sc.c;
  // Infinite bounds stay infinite under positive scaling.
  s.lower = sc.e.cwiseProduct(qp.lower);
  s.upper = sc.e.cwiseProduct(qp.upper);
  return sc;
}

inline bool primal_infeasible(const QpProblem& qp, const Eigen::VectorXd& dy, double eps) {
  const double norm = inf_norm(dy);
  if (!(norm > 1e-12)) return false;
  double support = 0.0;
  Eigen::VectorXd d = dy;
  for (int i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) {
      if (std::isfinite(qp.upper[i])) support += qp.upper[i] * d[i]; else d[i] = 0.0;
    } else if (d[i] < 0.0) {
      if (std::isfinite(qp.lower[i])) support += qp.lower[i] * d[i]; else d[i] = 0.0;
    }
  }
  const double dnorm = inf_norm(d);
  if (!(dnorm > 1e-12)) return false;
  return inf_norm(qp.constraint_matrix.transpose() * d) <= eps * dnorm && support <= -eps * dnorm;
}

// Solves the equality-constrained QP on the guessed active set; rows with
// equal bounds are always active.
inline std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> polish(const QpProblem& qp,
                                                                        const Eigen::VectorXd& z,
                                                                        const Eigen::VectorXd& y) {
  const int n = qp.variables(), m = qp.constraints();
  std::vector<int> rows;
  Eigen::VectorXd target(m);
  for (int i = 0; i < m; ++i) {
    if (qp.constraint_matrix.row(i).cwiseAbs().maxCoeff() == 0.0) continue;
    if (z[i] - qp.lower[i] < -y[i]) {
      rows.push_back(i);
      target[i] = qp.lower[i];
    } else if (qp.upper[i] - z[i] < y[i]) {
      rows.push_back(i);
      target[i] = qp.upper[i];
    }
  }
  const int k = static_cast<int>(rows.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
  Eigen::VectorXd rhs(n + k);
  kkt.topLeftCorner(n, n) = qp.hessian;
  rhs.head(n) = -qp.linear_term;
  for (int r = 0; r < k; ++r) {
    kkt.block(n + r, 0, 1, n) = qp.constraint_matrix.row(rows[r]);
    kkt.block(0, n + r, n, 1) = qp.constraint_matrix.row(rows[r]).transpose();
    rhs[n + r] = target[rows[r]];
  }
  constexpr double kDelta = 1e-9;
  Eigen::MatrixXd reg = kkt;
  reg.topLeftCorner(n, n).diagonal().array() += kDelta;
  if (k > 0) reg.bottomRightCorner(k, k).diagonal().array() -= kDelta;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(reg);
  Eigen::VectorXd sol = lu.solve(rhs);
  for (int it = 0; it < 5; ++it) sol += lu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) return std::nullopt;
  Eigen::VectorXd yfull = Eigen::VectorXd::Zero(m);
  for (int r = 0; r < k; ++r) {
    const int i = rows[r];
    const double mult = sol[n + r];
    // A wrong active-set guess shows up as a multiplier with the wrong sign.
    const bool equality = qp.upper[i] - qp.lower[i] < 1e-12;
    if (!equality && target[i] == qp.lower[i] && mult > 1e-9) return std::nullopt;
    if (!equality && target[i] == qp.upper[i] && mult < -1e-9) return std::nullopt;
    yfull[i] = mult;
  }
  return std::pair{Eigen::VectorXd(sol.head(n)), yfull};
}

}  // namespace detail

/// ADMM with over-relaxation and adaptive step size. Converged when the
/// primal residual ||Ax - z|| and dual residual ||Hx + q + A'y|| are both
/// below tolerance (infinity norm).
inline QpResult solve_qp(const QpProblem& qp, const QpSettings& s = {},
                         const Eigen::VectorXd* warm_x = nullptr) {
  qp.validate();
  const int n = qp.variables(), m = qp.constraints();
  const Eigen::MatrixXd& a_orig = qp.constraint_matrix;
  const detail::Scaling sc = detail::equilibrate(qp, s.scaling_iterations);
  const QpProblem& sq = sc.scaled;
  const Eigen::MatrixXd& a = sq.constraint_matrix;
  detail::AdmmWorkspace ws(sq, s);

  // Iterates live in the scaled space.
  Eigen::VectorXd x = warm_x && warm_x->size() == n ? Eigen::VectorXd(warm_x->cwiseQuotient(sc.d))
                                                    : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = m > 0 ? Eigen::VectorXd(a * x) : Eigen::VectorXd(0);
  z = z.cwiseMax(sq.lower).cwiseMin(sq.upper);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);

  auto unscaled_x = [&](const Eigen::VectorXd& xs) { return Eigen::VectorXd(sc.d.cwiseProduct(xs)); };
  auto unscaled_z = [&](const Eigen::VectorXd& zs) { return Eigen::VectorXd(zs.cwiseQuotient(sc.e)); };
  auto unscaled_y = [&](const Eigen::VectorXd& ys) { return Eigen::VectorXd(sc.e.cwiseProduct(ys) / sc.c); };

  QpResult res;
  // Residuals of the original problem.
  auto residuals = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& zs, const Eigen::VectorXd& ys) {
    const Eigen::VectorXd xx = unscaled_x(xs);
    const double rp = m > 0 ? detail::inf_norm(a_orig * xx - unscaled_z(zs)) : 0.0;
    Eigen::VectorXd g = qp.hessian * xx + qp.linear_term;
    if (m > 0) g += a_orig.transpose() * unscaled_y(ys);
    return std::pair{rp, detail::inf_norm(g)};
  };

  for (int it = 1; it <= s.max_iterations; ++it) {
    const Eigen::VectorXd& rho = ws.rho_vec();
    Eigen::VectorXd rhs = s.sigma * x - sq.linear_term;
    if (m > 0) rhs += a.transpose() * (rho.cwiseProduct(z) - y);
    const Eigen::VectorXd xt = ws.solve(rhs);
    x = s.alpha * xt + (1.0 - s.alpha) * x;
    if (m > 0) {
      const Eigen::VectorXd zr = s.alpha * (a * xt) + (1.0 - s.alpha) * z;
      const Eigen::VectorXd z_next =
          (zr + y.cwiseQuotient(rho)).cwiseMax(sq.lower).cwiseMin(sq.upper);
      const Eigen::VectorXd dy = rho.cwiseProduct(zr - z_next);
      y += dy;
      z = z_next;
      if (it % s.check_interval == 0 && detail::primal_infeasible(qp, unscaled_y(dy), s.infeasibility_tolerance)) {
        res.status = QpStatus::kInfeasible;
        res.iterations = it;
        res.x = unscaled_x(x);
        res.y = unscaled_y(y);
        return res;
      }
    }
    res.iterations = it;

    if (it % s.check_interval != 0 && it != s.max_iterations) continue;
    const auto [rp, rd] = residuals(x, z, y);
    res.primal_residual = rp;
    res.dual_residual = rd;
    if (rp <= s.tolerance && rd <= s.tolerance) {
      res.status = QpStatus::kSolved;
      break;
    }
    if (m > 0 && it % s.adapt_interval == 0) {
      const double srp = detail::inf_norm(a * x - z);
      const double srd = detail::inf_norm(sq.hessian * x + sq.linear_term + a.transpose() * y);
      const double scale_p = std::max({detail::inf_norm(a * x), detail::inf_norm(z), 1e-12});
      const double scale_d = std::max({detail::inf_norm(sq.hessian * x),
                                       detail::inf_norm(a.transpose() * y),
                                       detail::inf_norm(sq.linear_term), 1e-12});
      const double ratio = std::sqrt((srp / scale_p) / std::max(srd / scale_d, 1e-300));
      const double proposal = ws.rho() * ratio;
      if (proposal > 5.0 * ws.rho() || proposal < 0.2 * ws.rho()) ws.set_rho(proposal);
    }
  }

  const Eigen::VectorXd zu = unscaled_z(z);
  x = unscaled_x(x);
  y = unscaled_y(y);
  z = zu;
  res.x = x;
  res.y = y;
  if (res.status == QpStatus::kSolved && s.polish && m > 0) {
    if (auto polished = detail::polish(qp, z, y)) {
      const auto& [px, py] = *polished;
      const double pp = qp.infeasibility(px);
      Eigen::VectorXd g = qp.hessian * px + qp.linear_term + a_orig.transpose() * py;
      const double pd = detail::inf_norm(g);
      if (pp <= std::min(s.tolerance, res.primal_residual) + 1e-12 &&
          pd <= std::max(res.dual_residual, 1e-9)) {
        res.x = px;
        res.y = py;
        res.primal_residual = pp;
        res.dual_residual = pd;
        res.polished = true;
      }
    }
  }
  if (res.status == QpStatus::kSolved) res.objective = qp.objective(res.x);
  return res;
}

}  // namespace safeplan
