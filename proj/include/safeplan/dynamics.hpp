#pragma once

// Rigid-body quadrotor model: thrust mixing, continuous-time dynamics,
// RK4 integration, Euler-angle chart and zero-order-hold linearization
// about hover.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "safeplan/types.hpp"

namespace safeplan {

struct QuadrotorParams {
  double mass = 0.027;
  Vec3 inertia_diag{1.4e-5, 1.4e-5, 2.17e-5};
  double arm_length = 0.0397;
  double torque_coefficient = 0.006;
  double gravity = 9.81;
  double rotor_thrust_min = 0.0;
  double rotor_thrust_max = 0.15;

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("quadrotor mass must be > 0");
    if (!(inertia_diag.array() > 0.0).all()) {
      throw std::invalid_argument("quadrotor inertia components must be > 0");
    }
    if (!(arm_length > 0.0)) throw std::invalid_argument("quadrotor arm_length must be > 0");
    if (!(rotor_thrust_min >= 0.0 && rotor_thrust_min < rotor_thrust_max)) {
      throw std::invalid_argument("rotor thrust bounds must satisfy 0 <= min < max");
    }
  }
};

struct State {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();  // body-to-world
  Vec3 body_rates = Vec3::Zero();

  static State at_rest(const Vec3& position) {
    State s;
    s.position = position;
    return s;
  }
};

struct ControlInput {
  Vec4 thrusts = Vec4::Zero();

  bool finite() const { return thrusts.allFinite(); }
};

/// Time derivative of a State. The attitude rate is stored as (w, x, y, z).
struct StateDerivative {
  Vec3 position_rate = Vec3::Zero();
  Vec3 velocity_rate = Vec3::Zero();
  Vec4 attitude_rate = Vec4::Zero();
  Vec3 body_rate_rate = Vec3::Zero();

  StateDerivative& operator+=(const StateDerivative& o) {
    position_rate += o.position_rate;
    velocity_rate += o.velocity_rate;
    attitude_rate += o.attitude_rate;
    body_rate_rate += o.body_rate_rate;
    return *this;
  }
  friend StateDerivative operator+(StateDerivative a, const StateDerivative& b) { return a += b; }
  friend StateDerivative operator*(double s, StateDerivative a) {
    a.position_rate *= s;
    a.velocity_rate *= s;
    a.attitude_rate *= s;
    a.body_rate_rate *= s;
    return a;
  }
  double norm() const {
    return std::sqrt(position_rate.squaredNorm() + velocity_rate.squaredNorm() +
                     attitude_rate.squaredNorm() + body_rate_rate.squaredNorm());
  }
};

struct Wrench {
  Vec3 force = Vec3::Zero();   // body frame
  Vec3 torque = Vec3::Zero();  // body frame
};

struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

// X configuration. Rotor i sits at (x_i, y_i) = arm/sqrt(2) * (sx_i, sy_i) and
// spins with direction s_i (yaw torque = s_i * torque_coefficient * u_i):
//   1: front-right (+,-) s=-1   2: back-right (-,-) s=+1
//   3: back-left  (-,+) s=-1   4: front-left (+,+) s=+1
inline constexpr std::array<double, 4> kRotorSignX{+1.0, -1.0, -1.0, +1.0};
inline constexpr std::array<double, 4> kRotorSignY{-1.0, -1.0, +1.0, +1.0};
inline constexpr std::array<double, 4> kRotorSpin{-1.0, +1.0, -1.0, +1.0};

inline Wrench wrench_from_thrusts(const ControlInput& u, const QuadrotorParams& p) {
  const Vec4& t = u.thrusts;
  const double d = p.arm_length / std::numbers::sqrt2;
  // Paired sums keep symmetric inputs exactly torque-free.
  Wrench w;
  w.force = Vec3(0.0, 0.0, (t[0] + t[1]) + (t[2] + t[3]));
  // tau = r x f with f = (0,0,u): tau_x = y*u, tau_y = -x*u.
  w.torque.x() = d * ((t[2] + t[3]) - (t[0] + t[1]));
  w.torque.y() = d * ((t[1] + t[2]) - (t[0] + t[3]));
  w.torque.z() = p.torque_coefficient * ((t[1] + t[3]) - (t[0] + t[2]));
  return w;
}

/// Per-rotor hover thrust. Nudged by a few ulps so that the total thrust
/// divided by mass reproduces gravity exactly in floating point.
inline ControlInput hover_input(const QuadrotorParams& p) {
  double each = p.mass * p.gravity / 4.0;
  for (int i = 0; i < 64 && (4.0 * each) / p.mass != p.gravity; ++i) {
    each = std::nextafter(each, (4.0 * each) / p.mass < p.gravity
                                    ? std::numeric_limits<double>::infinity()
                                    : 0.0);
  }
  ControlInput u;
  u.thrusts.setConstant(each);
  return u;
}

inline StateDerivative derivative(const State& x, const ControlInput& u, const QuadrotorParams& p) {
  const Wrench w = wrench_from_thrusts(u, p);
  const Eigen::Quaterniond q = x.attitude.normalized();
  const Vec3& omega = x.body_rates;

  StateDerivative dx;
  dx.position_rate = x.velocity;
  dx.velocity_rate = q * (w.force / p.mass);
  dx.velocity_rate.z() -= p.gravity;

  const Vec3 j_omega = p.inertia_diag.cwiseProduct(omega);
  dx.body_rate_rate = (w.torque - omega.cross(j_omega)).cwiseQuotient(p.inertia_diag);

  // 0.5 * q (x) [0, omega]
  const Eigen::Quaterniond qa = x.attitude;
  const Eigen::Quaterniond qdot = qa * Eigen::Quaterniond(0.0, omega.x(), omega.y(), omega.z());
  dx.attitude_rate = 0.5 * Vec4(qdot.w(), qdot.x(), qdot.y(), qdot.z());
  return dx;
}

namespace detail {

inline State advance(const State& x, const StateDerivative& k, double h) {
  State out;
  out.position = x.position + h * k.position_rate;
  out.velocity = x.velocity + h * k.velocity_rate;
  out.attitude = Eigen::Quaterniond(x.attitude.w() + h * k.attitude_rate[0],
                                    x.attitude.x() + h * k.attitude_rate[1],
                                    x.attitude.y() + h * k.attitude_rate[2],
                                    x.attitude.z() + h * k.attitude_rate[3]);
  out.body_rates = x.body_rates + h * k.body_rate_rate;
  return out;
}

}  // namespace detail

/// One classical RK4 step. The optional disturbance is added to the state
/// derivative at every stage; the attitude is renormalized afterwards.
inline State step(const State& x, const ControlInput& u, const QuadrotorParams& p, double dt,
                  const std::optional<StateDerivative>& disturbance = std::nullopt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  auto f = [&](const State& s) {
    StateDerivative d = derivative(s, u, p);
    if (disturbance) d += *disturbance;
    return d;
  };
  const StateDerivative k1 = f(x);
  const StateDerivative k2 = f(detail::advance(x, k1, 0.5 * dt));
  const StateDerivative k3 = f(detail::advance(x, k2, 0.5 * dt));
  const StateDerivative k4 = f(detail::advance(x, k3, dt));
  const StateDerivative incr = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  State out = detail::advance(x, incr, 1.0);
  out.attitude.normalize();
  return out;
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

/// ZYX convention: R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline EulerAngles euler_from_quaternion(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  EulerAngles e;
  e.roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
  e.pitch = std::asin(std::clamp(2.0 * (w * y - z * x), -1.0, 1.0));
  e.yaw = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
  if (e.roll == -std::numbers::pi) e.roll = std::numbers::pi;
  if (e.yaw == -std::numbers::pi) e.yaw = std::numbers::pi;
  return e;
}

inline Eigen::Quaterniond quaternion_from_euler(const EulerAngles& e) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(e.yaw, Vec3::UnitZ()) *
                            Eigen::AngleAxisd(e.pitch, Vec3::UnitY()) *
                            Eigen::AngleAxisd(e.roll, Vec3::UnitX()));
}

inline ChartVector to_chart(const State& x) {
  const EulerAngles e = euler_from_quaternion(x.attitude);
  ChartVector xi;
  xi << x.position, x.velocity, e.roll, e.pitch, e.yaw, x.body_rates;
  return xi;
}

inline State from_chart(const ChartVector& xi) {
  State x;
  x.position = xi.segment<3>(kX);
  x.velocity = xi.segment<3>(kVx);
  x.attitude = quaternion_from_euler({xi[kRoll], xi[kPitch], xi[kYaw]});
  x.body_rates = xi.segment<3>(kRateP);
  return x;
}

/// Time derivative of the chart coordinates. Euler rates use the ZYX
/// kinematic map from body rates.
inline ChartVector chart_derivative(const ChartVector& xi, const ControlInput& u,
                                    const QuadrotorParams& p) {
  const StateDerivative d = derivative(from_chart(xi), u, p);
  const double sr = std::sin(xi[kRoll]), cr = std::cos(xi[kRoll]);
  const double cp = std::cos(xi[kPitch]), tp = std::tan(xi[kPitch]);
  const Vec3 w = xi.segment<3>(kRateP);
  ChartVector out;
  out.segment<3>(kX) = d.position_rate;
  out.segment<3>(kVx) = d.velocity_rate;
  out[kRoll] = w.x() + (sr * w.y() + cr * w.z()) * tp;
  out[kPitch] = cr * w.y() - sr * w.z();
  out[kYaw] = (sr * w.y() + cr * w.z()) / cp;
  out.segment<3>(kRateP) = d.body_rate_rate;
  return out;
}

/// Discrete-time model x+ = a x + b u in hover-relative chart coordinates
/// (operating point: origin, level, zero yaw).
struct LinearModel {
  ChartMatrix a_matrix = ChartMatrix::Identity();
  InputMatrix b_matrix = InputMatrix::Zero();
  ChartMatrix a_continuous = ChartMatrix::Zero();
  InputMatrix b_continuous = InputMatrix::Zero();
  double dt = 0.0;
  State operating_state;
  ControlInput operating_input;

  ChartVector predict(const ChartVector& dx, const Vec4& du) const {
    return a_matrix * dx + b_matrix * du;
  }
};

inline LinearModel linearize_hover(const QuadrotorParams& p, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("linearize_hover: dt must be > 0");
  constexpr double kPerturbation = 1e-6;
  LinearModel m;
  m.dt = dt;
  m.operating_state = State{};
  m.operating_input = hover_input(p);
  const ChartVector xi0 = ChartVector::Zero();

  for (int j = 0; j < kChartDim; ++j) {
    ChartVector plus = xi0, minus = xi0;
    plus[j] += kPerturbation;
    minus[j] -= kPerturbation;
    m.a_continuous.col(j) = (chart_derivative(plus, m.operating_input, p) -
                             chart_derivative(minus, m.operating_input, p)) /
                            (2.0 * kPerturbation);
  }
  for (int j = 0; j < kInputDim; ++j) {
    ControlInput plus = m.operating_input, minus = m.operating_input;
    plus.thrusts[j] += kPerturbation;
    minus.thrusts[j] -= kPerturbation;
    m.b_continuous.col(j) =
        (chart_derivative(xi0, plus, p) - chart_derivative(xi0, minus, p)) / (2.0 * kPerturbation);
  }

  // ZOH via the exponential of the augmented generator [[A B], [0 0]].
  Eigen::Matrix<double, kChartDim + kInputDim, kChartDim + kInputDim> gen;
  gen.setZero();
  gen.topLeftCorner<kChartDim, kChartDim>() = m.a_continuous * dt;
  gen.topRightCorner<kChartDim, kInputDim>() = m.b_continuous * dt;
  const Eigen::MatrixXd phi = Eigen::MatrixXd(gen).exp();
  m.a_matrix = phi.topLeftCorner<kChartDim, kChartDim>();
  m.b_matrix = phi.topRightCorner<kChartDim, kInputDim>();
  return m;
}

}  // namespace safeplan
