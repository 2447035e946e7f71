#pragma once

// Converts planner waypoints into a time-parameterized reference: a
// centripetal Catmull-Rom spline (or the polyline itself) traversed by
// arc length under a trapezoidal speed profile that starts and ends at rest.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "safeplan/environment.hpp"
#include "safeplan/planner.hpp"

namespace safeplan {

struct ReferenceSample {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double yaw = 0.0;
};

struct Trajectory {
  double dt = 0.0;
  std::vector<ReferenceSample> samples;

  double duration() const {
    return samples.empty() ? 0.0 : dt * static_cast<double>(samples.size() - 1);
  }

  /// Exactly n samples: truncated, or padded by holding the final sample.
  Trajectory fitted(std::size_t n) const {
    if (samples.empty()) throw std::logic_error("cannot fit an empty trajectory");
    Trajectory out{dt, samples};
    if (out.samples.size() > n) out.samples.resize(n);
    while (out.samples.size() < n) out.samples.push_back(out.samples.back());
    return out;
  }
};

struct SmoothingParams {
  double cruise_speed = 0.3;
  double ramp_acceleration = 2.0;

  void validate() const {
    if (!(cruise_speed > 0.0)) throw std::invalid_argument("cruise_speed must be > 0");
    if (!(ramp_acceleration > 0.0)) throw std::invalid_argument("ramp_acceleration must be > 0");
  }
};

/// Trapezoidal (or triangular, for short paths) arc-length profile.
class TrapezoidProfile {
 public:
  TrapezoidProfile(double length, double cruise, double accel) : length_(length), accel_(accel) {
    if (length_ >= cruise * cruise / accel) {
      peak_ = cruise;
      ramp_time_ = cruise / accel;
      duration_ = length_ / cruise + ramp_time_;
    } else {
      peak_ = std::sqrt(accel * length_);
      ramp_time_ = peak_ / accel;
      duration_ = 2.0 * ramp_time_;
    }
  }

  double duration() const { return duration_; }

  double distance(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= duration_) return length_;
    if (t < ramp_time_) return 0.5 * accel_ * t * t;
    if (t <= duration_ - ramp_time_) return 0.5 * accel_ * ramp_time_ * ramp_time_ + peak_ * (t - ramp_time_);
    const double r = duration_ - t;
    return length_ - 0.5 * accel_ * r * r;
  }

  double speed(double t) const {
    if (t <= 0.0 || t >= duration_) return 0.0;
    if (t < ramp_time_) return accel_ * t;
    if (t <= duration_ - ramp_time_) return peak_;
    return accel_ * (duration_ - t);
  }

 private:
  double length_;
  double accel_;
  double peak_ = 0.0;
  double ramp_time_ = 0.0;
  double duration_ = 0.0;
};

enum class CurveKind { kCatmullRom, kPolyline };

/// Piecewise-cubic curve through waypoints with exact arc-length lookup.
class WaypointCurve {
 public:
  WaypointCurve(const std::vector<Vec3>& waypoints, CurveKind kind) {
    for (const Vec3& w : waypoints) {
      if (points_.empty() || (w - points_.back()).norm() > 1e-12) points_.push_back(w);
    }
    if (points_.empty()) throw std::invalid_argument("curve needs at least one waypoint");
    const std::size_t segs = points_.size() - 1;
    tangents_.resize(segs);
    cumulative_.assign(1, 0.0);
    for (std::size_t i = 0; i < segs; ++i) {
      const Vec3& p1 = points_[i];
      const Vec3& p2 = points_[i + 1];
      if (kind == CurveKind::kPolyline) {
        tangents_[i] = {p2 - p1, p2 - p1};
      } else {
        const Vec3 p0 = i > 0 ? points_[i - 1] : Vec3(2.0 * p1 - p2);
        const Vec3 p3 = i + 2 < points_.size() ? points_[i + 2] : Vec3(2.0 * p2 - p1);
        const double t01 = std::sqrt((p1 - p0).norm());
        const double t12 = std::sqrt((p2 - p1).norm());
        const double t23 = std::sqrt((p3 - p2).norm());
        const Vec3 m1 = p2 - p1 + t12 * ((p1 - p0) / t01 - (p2 - p0) / (t01 + t12));
        const Vec3 m2 = p2 - p1 + t12 * ((p3 - p2) / t23 - (p3 - p1) / (t12 + t23));
        tangents_[i] = {m1, m2};
      }
      cumulative_.push_back(cumulative_.back() + segment_length(i, 1.0));
    }
  }

  double length() const { return cumulative_.back(); }
  std::size_t segments() const { return points_.size() - 1; }

  Vec3 point(std::size_t seg, double u) const {
    const double u2 = u * u, u3 = u2 * u;
    const auto& [m1, m2] = tangents_[seg];
    return (2 * u3 - 3 * u2 + 1) * points_[seg] + (u3 - 2 * u2 + u) * m1 +
           (-2 * u3 + 3 * u2) * points_[seg + 1] + (u3 - u2) * m2;
  }

  Vec3 derivative(std::size_t seg, double u) const {
    const double u2 = u * u;
    const auto& [m1, m2] = tangents_[seg];
    return (6 * u2 - 6 * u) * points_[seg] + (3 * u2 - 4 * u + 1) * m1 +
           (-6 * u2 + 6 * u) * points_[seg + 1] + (3 * u2 - 2 * u) * m2;
  }

  /// Position and unit tangent at arc length s (clamped to [0, length]).
  std::pair<Vec3, Vec3> at_arc_length(double s) const {
    if (segments() == 0) return {points_.front(), Vec3::Zero()};
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
    std::size_t seg = static_cast<std::size_t>(std::distance(cumulative_.begin(), it)) - 1;
    seg = std::min(seg, segments() - 1);
    const double u = parameter_for(seg, s - cumulative_[seg]);
    Vec3 d = derivative(seg, u);
    const double n = d.norm();
    return {point(seg, u), n > 0.0 ? Vec3(d / n) : Vec3::Zero()};
  }

 private:
  // Arc length of segment seg over [0, u]: 8-point Gauss-Legendre on 16 panels.
  double segment_length(std::size_t seg, double u) const {
    static constexpr std::array<double, 4> kNodes{0.1834346424956498, 0.5255324099163290,
                                                  0.7966664774136267, 0.9602898564975363};
    static constexpr std::array<double, 4> kWeights{0.3626837833783620, 0.3137066458778873,
                                                    0.2223810344533745, 0.1012285362903763};
    constexpr int kPanels = 16;
    double total = 0.0;
    const double h = u / kPanels;
    for (int k = 0; k < kPanels; ++k) {
      const double mid = h * (k + 0.5);
      for (std::size_t j = 0; j < kNodes.size(); ++j) {
        const double off = 0.5 * h * kNodes[j];
        total += kWeights[j] * (derivative(seg, mid - off).norm() + derivative(seg, mid + off).norm());
      }
    }
    return 0.5 * h * total;
  }

  // Safeguarded Newton solve of segment_length(seg, u) = s.
  double parameter_for(std::size_t seg, double s) const {
    const double seg_len = cumulative_[seg + 1] - cumulative_[seg];
    if (s <= 0.0) return 0.0;
    if (s >= seg_len) return 1.0;
    double lo = 0.0, hi = 1.0, u = s / seg_len;
    for (int it = 0; it < 60; ++it) {
      const double g = segment_length(seg, u) - s;
      if (std::abs(g) < 1e-14) break;
      if (g > 0.0) hi = u; else lo = u;
      const double slope = derivative(seg, u).norm();
      double next = slope > 0.0 ? u - g / slope : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      u = next;
    }
    return u;
  }

  std::vector<Vec3> points_;
  std::vector<std::pair<Vec3, Vec3>> tangents_;
  std::vector<double> cumulative_;
};

/// A waypoint curve traversed in time.
class TimedCurve {
 public:
  TimedCurve(const Path& path, CurveKind kind, const SmoothingParams& params)
      : curve_(path.waypoints, kind),
        profile_(curve_.length(), params.cruise_speed, params.ramp_acceleration) {}

  double duration() const { return profile_.duration(); }

  Vec3 position(double t) const { return curve_.at_arc_length(profile_.distance(t)).first; }

  Vec3 velocity(double t) const {
    return curve_.at_arc_length(profile_.distance(t)).second * profile_.speed(t);
  }

  Trajectory sample(double dt) const {
    Trajectory traj;
    traj.dt = dt;
    const auto steps = static_cast<std::size_t>(std::ceil(duration() / dt - 1e-12));
    traj.samples.reserve(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
      const double t = dt * static_cast<double>(i);
      traj.samples.push_back({position(t), velocity(t), 0.0});
    }
    return traj;
  }

 private:
  WaypointCurve curve_;
  TrapezoidProfile profile_;
};

namespace detail {

inline std::optional<Trajectory> sample_checked(const Environment& env, const Path& path, CurveKind kind,
                                                const SmoothingParams& params, double dt) {
  params.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("smooth: dt must be > 0");
  if (path.waypoints.empty()) throw std::invalid_argument("smooth: empty path");
  Trajectory traj = TimedCurve(path, kind, params).sample(dt);
  for (const auto& s : traj.samples) {
    if (!env.is_free(s.position)) return std::nullopt;
  }
  return traj;
}

}  // namespace detail

/// Spline-smoothed reference. Empty when a sample left free space, in which
/// case callers fall back to smooth_linear on the same waypoints.
inline std::optional<Trajectory> smooth(const Environment& env, const Path& path,
                                        const SmoothingParams& params, double dt) {
  return detail::sample_checked(env, path, CurveKind::kCatmullRom, params, dt);
}

inline std::optional<Trajectory> smooth_linear(const Environment& env, const Path& path,
                                               const SmoothingParams& params, double dt) {
  return detail::sample_checked(env, path, CurveKind::kPolyline, params, dt);
}

}  // namespace safeplan
