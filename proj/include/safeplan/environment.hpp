#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "safeplan/types.hpp"

namespace safeplan {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  void validate() const {
    if (!(min.array() <= max.array()).all()) {
      throw std::invalid_argument("obstacle box requires min <= max componentwise");
    }
  }

  /// Euclidean distance from p to the box (0 inside).
  double distance(const Vec3& p) const {
    const Vec3 excess = (min - p).cwiseMax(p - max).cwiseMax(0.0);
    return excess.norm();
  }

  Vec3 center() const { return 0.5 * (min + max); }

  /// Smallest distance from any point of segment [a, b] to the box. The
  /// distance is convex along the segment, so golden-section search finds it.
  double segment_distance(const Vec3& a, const Vec3& b) const {
    constexpr double kInvPhi = 0.6180339887498949;
    auto f = [&](double t) { return distance(a + t * (b - a)); };
    double lo = 0.0, hi = 1.0;
    double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < 80 && hi - lo > 1e-15; ++i) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - kInvPhi * (hi - lo);
        f1 = f(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + kInvPhi * (hi - lo);
        f2 = f(x2);
      }
    }
    return std::min({f(0.0), f(1.0), f1, f2});
  }
};

/// Workspace bounds plus box obstacles; the robot is a sphere of robot_radius.
struct Environment {
  Vec3 workspace_min = Vec3::Zero();
  Vec3 workspace_max = Vec3::Ones();
  std::vector<Aabb> obstacles;
  double robot_radius = 0.0;

  void validate() const {
    if (!(workspace_min.array() < workspace_max.array()).all()) {
      throw std::invalid_argument("workspace_min must be < workspace_max componentwise");
    }
    if (!(robot_radius >= 0.0)) throw std::invalid_argument("robot_radius must be >= 0");
    for (const auto& box : obstacles) box.validate();
  }

  bool in_workspace(const Vec3& p) const {
    return ((p.array() >= workspace_min.array() + robot_radius).all() &&
            (p.array() <= workspace_max.array() - robot_radius).all());
  }

  bool is_free(const Vec3& p) const {
    if (!p.allFinite() || !in_workspace(p)) return false;
    return std::all_of(obstacles.begin(), obstacles.end(),
                       [&](const Aabb& box) { return box.distance(p) > robot_radius; });
  }

  /// Uniform samples at spacing <= resolution, endpoints included, plus an
  /// exact distance test against every obstacle so that corners clipped
  /// between two samples are not missed. Endpoints are put in a canonical
  /// order first so the result is symmetric in (a, b).
  bool segment_free(const Vec3& a, const Vec3& b, double resolution) const {
    if (!(resolution > 0.0)) throw std::invalid_argument("segment_free: resolution must be > 0");
    const bool swap = std::lexicographical_compare(b.data(), b.data() + 3, a.data(), a.data() + 3);
    const Vec3& from = swap ? b : a;
    const Vec3& to = swap ? a : b;
    const double length = (to - from).norm();
    const auto n = static_cast<long>(std::ceil(length / resolution));
    if (!is_free(from) || !is_free(to)) return false;
    for (long i = 1; i < n; ++i) {
      const double s = static_cast<double>(i) / static_cast<double>(n);
      if (!is_free(from + s * (to - from))) return false;
    }
    const Vec3 lo = from.cwiseMin(to).array() - robot_radius;
    const Vec3 hi = from.cwiseMax(to).array() + robot_radius;
    for (const Aabb& box : obstacles) {
      if ((box.max.array() < lo.array()).any() || (box.min.array() > hi.array()).any()) continue;
      if (box.segment_distance(from, to) <= robot_radius) return false;
    }
    return true;
  }
};

}  // namespace safeplan
