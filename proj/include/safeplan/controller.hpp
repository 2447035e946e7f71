#pragma once

// LQR tracking: discrete algebraic Riccati equation by fixed-point
// iteration, gain synthesis on the hover model, and the desired input.

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "safeplan/dynamics.hpp"
#include "safeplan/trajectory.hpp"

namespace safeplan {

class RiccatiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DareOptions {
  double tolerance = 1e-10;
  int max_iterations = 100000;
};

struct DareSolution {
  Eigen::MatrixXd p;
  int iterations = 0;
};

/// A^T P A - P - A^T P B (R + B^T P B)^{-1} B^T P A + Q.
inline Eigen::MatrixXd riccati_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                        const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                                        const Eigen::MatrixXd& p) {
  const Eigen::MatrixXd bt_p = b.transpose() * p;
  const Eigen::MatrixXd gain = (r + bt_p * b).ldlt().solve(bt_p * a);
  return a.transpose() * p * a - p - a.transpose() * p * b * gain + q;
}

inline double spectral_radius(const Eigen::MatrixXd& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

/// Value iteration P <- A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q from
/// P = Q until the update is below tolerance in the max-abs norm.
inline DareSolution solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                               const DareOptions& opts = {}) {
  const auto n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() ||
      r.cols() != b.cols()) {
    throw std::invalid_argument("solve_dare: dimension mismatch");
  }
  Eigen::MatrixXd p = q;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Eigen::MatrixXd bt_p = b.transpose() * p;
    const Eigen::MatrixXd gain = (r + bt_p * b).ldlt().solve(bt_p * a);
    Eigen::MatrixXd next = a.transpose() * p * a - a.transpose() * bt_p.transpose() * gain + q;
    next = 0.5 * (next + next.transpose()).eval();
    if (!next.allFinite()) break;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change <= opts.tolerance) return {p, it};
  }
  throw RiccatiError("solve_dare: no convergence (unstabilizable model or bad weights)");
}

struct LqrWeights {
  ChartVector q = (ChartVector() << 10, 10, 10, 1, 1, 1, 5, 5, 5, 0.1, 0.1, 0.1).finished();
  Vec4 r = Vec4::Constant(1e3);

  void validate() const {
    if (!(q.array() >= 0.0).all()) throw std::invalid_argument("LQR q_weights must be >= 0");
    if (!(r.array() > 0.0).all()) throw std::invalid_argument("LQR r_weights must be > 0");
  }
};

struct LqrDesign {
  ChartVector q_weights;
  Vec4 r_weights;
  GainMatrix gain;
  ChartMatrix riccati_solution;
  ControlInput hover;
  double closed_loop_radius = 0.0;
};

inline LqrDesign lqr_gain(const LinearModel& model, const LqrWeights& weights) {
  weights.validate();
  const Eigen::MatrixXd q = weights.q.asDiagonal();
  const Eigen::MatrixXd r = weights.r.asDiagonal();
  const DareSolution sol = solve_dare(model.a_matrix, model.b_matrix, q, r);
  LqrDesign d;
  d.q_weights = weights.q;
  d.r_weights = weights.r;
  d.riccati_solution = sol.p;
  const Eigen::Matrix4d s = weights.r.asDiagonal().toDenseMatrix() +
                            model.b_matrix.transpose() * d.riccati_solution * model.b_matrix;
  d.gain = s.ldlt().solve(model.b_matrix.transpose() * d.riccati_solution * model.a_matrix);
  d.hover = model.operating_input;
  d.closed_loop_radius = spectral_radius(model.a_matrix - model.b_matrix * d.gain);
  if (!(d.closed_loop_radius < 1.0)) {
    throw RiccatiError("lqr_gain: closed loop is not stable");
  }
  return d;
}

/// Chart coordinates of a reference sample: level attitude at the sample's
/// yaw, zero body rates.
inline ChartVector reference_chart(const ReferenceSample& ref) {
  ChartVector xi = ChartVector::Zero();
  xi.segment<3>(kX) = ref.position;
  xi.segment<3>(kVx) = ref.velocity;
  xi[kYaw] = ref.yaw;
  return xi;
}

/// Chart difference with the yaw component wrapped to (-pi, pi].
inline ChartVector chart_error(const ChartVector& xi, const ChartVector& ref) {
  ChartVector e = xi - ref;
  e[kYaw] = wrap_angle(e[kYaw]);
  return e;
}

/// u_des = u_hover - K (xi(x) - xi_ref). Not clamped.
inline ControlInput desired_input(const LqrDesign& design, const State& x, const ReferenceSample& ref) {
  ControlInput u;
  u.thrusts = design.hover.thrusts - design.gain * chart_error(to_chart(x), reference_chart(ref));
  return u;
}

}  // namespace safeplan
