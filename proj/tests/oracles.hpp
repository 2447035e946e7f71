#pragma once

// Reference implementations written independently of the library code,
// used as ground truth in tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "safeplan/dynamics.hpp"
#include "safeplan/environment.hpp"
#include "safeplan/qp.hpp"

namespace safeplan::oracle {

/// Rows: collective thrust, roll torque, pitch torque, yaw torque. Built from
/// rotor positions on the diagonals and r x F per rotor.
inline Eigen::Matrix4d mixer_matrix(const QuadrotorParams& p) {
  const double angles[4] = {-45.0, -135.0, 135.0, 45.0};
  const double spin[4] = {-1.0, 1.0, -1.0, 1.0};
  Eigen::Matrix4d m;
  for (int i = 0; i < 4; ++i) {
    const double a = angles[i] * std::numbers::pi / 180.0;
    const Eigen::Vector3d r(p.arm_length * std::cos(a), p.arm_length * std::sin(a), 0.0);
    const Eigen::Vector3d torque = r.cross(Eigen::Vector3d::UnitZ());
    m(0, i) = 1.0;
    m(1, i) = torque.x();
    m(2, i) = torque.y();
    m(3, i) = p.torque_coefficient * spin[i];
  }
  return m;
}

/// World-frame acceleration via an explicit quaternion-to-matrix formula.
inline Eigen::Vector3d acceleration(const State& x, const ControlInput& u, const QuadrotorParams& p) {
  const Eigen::Quaterniond q = x.attitude.normalized();
  const double w = q.w(), a = q.x(), b = q.y(), c = q.z();
  Eigen::Matrix3d r;
  r << 1 - 2 * (b * b + c * c), 2 * (a * b - c * w), 2 * (a * c + b * w),
      2 * (a * b + c * w), 1 - 2 * (a * a + c * c), 2 * (b * c - a * w),
      2 * (a * c - b * w), 2 * (b * c + a * w), 1 - 2 * (a * a + b * b);
  const double thrust = u.thrusts.sum();
  return r * Eigen::Vector3d(0, 0, thrust / p.mass) - Eigen::Vector3d(0, 0, p.gravity);
}

/// Distance from p to a box: 0 inside, else the minimum over the six faces of
/// the distance to the face rectangle.
inline double box_distance(const Aabb& box, const Eigen::Vector3d& p) {
  bool inside = true;
  for (int k = 0; k < 3; ++k) inside = inside && p[k] >= box.min[k] && p[k] <= box.max[k];
  if (inside) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    for (double plane : {box.min[axis], box.max[axis]}) {
      Eigen::Vector3d q = p;
      q[axis] = plane;
      for (int k = 0; k < 3; ++k) {
        if (k != axis) q[k] = std::clamp(p[k], box.min[k], box.max[k]);
      }
      best = std::min(best, (p - q).norm());
    }
  }
  return best;
}

inline bool is_free(const Environment& env, const Eigen::Vector3d& p) {
  for (int k = 0; k < 3; ++k) {
    if (p[k] < env.workspace_min[k] + env.robot_radius || p[k] > env.workspace_max[k] - env.robot_radius) return false;
  }
  for (const Aabb& box : env.obstacles) {
    if (box_distance(box, p) <= env.robot_radius) return false;
  }
  return true;
}

/// Dense sampling at a tenth of the resolution.
inline bool segment_free_fine(const Environment& env, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                              double resolution) {
  const double fine = resolution / 10.0;
  const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / fine)));
  for (int i = 0; i <= n; ++i) {
    if (!is_free(env, a + (b - a) * (static_cast<double>(i) / n))) return false;
  }
  return true;
}

/// x_{i+1} = A x_i + B u_i, one step at a time.
inline std::vector<Eigen::VectorXd> propagate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                              const Eigen::VectorXd& x0, const Eigen::VectorXd& stacked_u) {
  const auto m = b.cols();
  std::vector<Eigen::VectorXd> xs{x0};
  for (Eigen::Index i = 0; i < stacked_u.size() / m; ++i) {
    xs.push_back(a * xs.back() + b * stacked_u.segment(i * m, m));
  }
  return xs;
}

struct EnumerationResult {
  bool feasible = false;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  long active_sets = 0;
};

/// Number of (subset, side) choices with at most n active rows.
inline long enumeration_count(int n, int m) {
  long total = 0;
  for (int k = 0; k <= std::min(n, m); ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (m - i) / (i + 1);
    total += static_cast<long>(std::llround(c)) << k;
  }
  return total;
}

/// Exhaustive active-set search: for every choice of active rows (at most n,
/// each at its lower or upper bound) solve the equality-constrained KKT
/// system; keep the best primal-feasible point. Exact for strictly convex QPs.
inline EnumerationResult enumerate_qp(const QpProblem& qp, double feas_tol = 1e-9) {
  const int n = qp.variables(), m = qp.constraints();
  EnumerationResult best;
  std::vector<int> rows;
  std::vector<int> sides;

  auto evaluate = [&]() {
    ++best.active_sets;
    const int k = static_cast<int>(rows.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = qp.hessian;
    rhs.head(n) = -qp.linear_term;
    for (int r = 0; r < k; ++r) {
      const double bound = sides[r] < 0 ? qp.lower[rows[r]] : qp.upper[rows[r]];
      if (!std::isfinite(bound)) return;
      kkt.block(n + r, 0, 1, n) = qp.constraint_matrix.row(rows[r]);
      kkt.block(0, n + r, n, 1) = qp.constraint_matrix.row(rows[r]).transpose();
      rhs[n + r] = bound;
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + k) return;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if (qp.infeasibility(x) > feas_tol) return;
    const double f = qp.objective(x);
    if (f < best.objective) {
      best.objective = f;
      best.x = x;
      best.feasible = true;
    }
  };

  // Depth-first over increasing row indices.
  auto recurse = [&](auto&& self, int next) -> void {
    evaluate();
    if (static_cast<int>(rows.size()) == n) return;
    for (int i = next; i < m; ++i) {
      for (int side : {-1, 1}) {
        rows.push_back(i);
        sides.push_back(side);
        self(self, i + 1);
        rows.pop_back();
        sides.pop_back();
      }
    }
  };
  recurse(recurse, 0);
  return best;
}

/// Random strictly convex QP with n variables and m two-sided rows. Roughly
/// a quarter of the instances contain a contradictory pair of rows.
inline QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  QpProblem qp;
  const Eigen::MatrixXd l = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return normal(rng); });
  qp.hessian = l * l.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.linear_term = Eigen::VectorXd::NullaryExpr(n, [&] { return 3.0 * normal(rng); });
  qp.constraint_matrix = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return normal(rng); });
  qp.lower.resize(m);
  qp.upper.resize(m);
  for (int i = 0; i < m; ++i) {
    const double center = 0.5 * normal(rng);
    const double half = 0.2 + unit(rng);
    const double kind = unit(rng);
    qp.lower[i] = kind < 0.15 ? -kInf : center - half;
    qp.upper[i] = kind > 0.85 ? kInf : center + half;
  }
  if (m >= 2 && unit(rng) < 0.25) {
    qp.constraint_matrix.row(m - 1) = qp.constraint_matrix.row(0);
    qp.lower[0] = 1.0;
    qp.upper[0] = 2.0;
    qp.lower[m - 1] = -2.0;
    qp.upper[m - 1] = -1.0;
  }
  return qp;
}

}  // namespace safeplan::oracle
