#pragma once

#include <array>
#include <cstddef>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace safeplan {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

inline constexpr int kChartDim = 12;
inline constexpr int kInputDim = 4;

// 12-dimensional Euler-angle chart of the quadrotor state:
// [position(3), velocity(3), roll-pitch-yaw(3), body rates(3)].
using ChartVector = Eigen::Matrix<double, kChartDim, 1>;
using ChartMatrix = Eigen::Matrix<double, kChartDim, kChartDim>;
using InputMatrix = Eigen::Matrix<double, kChartDim, kInputDim>;
using GainMatrix = Eigen::Matrix<double, kInputDim, kChartDim>;

enum ChartIndex : int {
  kX = 0,
  kY = 1,
  kZ = 2,
  kVx = 3,
  kVy = 4,
  kVz = 5,
  kRoll = 6,
  kPitch = 7,
  kYaw = 8,
  kRateP = 9,
  kRateQ = 10,
  kRateR = 11,
};

inline constexpr std::array<std::string_view, kChartDim> kChartNames = {
    "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r"};

/// Index of a chart coordinate by its short name, or -1.
inline int chart_index(std::string_view name) {
  for (std::size_t i = 0; i < kChartNames.size(); ++i) {
    if (kChartNames[i] == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace safeplan
