#pragma once

// Geometric RRT* over 3D positions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <stdexcept>
#include <vector>

#include "safeplan/environment.hpp"

namespace safeplan {

struct PlannerParams {
  int max_iterations = 1500;
  double goal_tolerance = 0.05;
  double steer_step = 0.2;
  double gamma = 2.0;
  double goal_bias = 0.1;
  std::uint64_t rng_seed = 1;
  // Edge check spacing; <= 0 means robot_radius / 2 (or 0.01 m for a point robot).
  double collision_resolution = 0.0;

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("planner max_iterations must be >= 1");
    if (!(goal_tolerance > 0.0)) throw std::invalid_argument("planner goal_tolerance must be > 0");
    if (!(steer_step > 0.0)) throw std::invalid_argument("planner steer_step must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("planner gamma must be > 0");
    if (!(goal_bias >= 0.0 && goal_bias < 1.0)) {
      throw std::invalid_argument("planner goal_bias must be in [0, 1)");
    }
  }

  double resolution_for(const Environment& env) const {
    if (collision_resolution > 0.0) return collision_resolution;
    return env.robot_radius > 0.0 ? env.robot_radius / 2.0 : 0.01;
  }
};

struct Path {
  std::vector<Vec3> waypoints;

  double cost() const {
    double c = 0.0;
    for (std::size_t i = 1; i < waypoints.size(); ++i) c += (waypoints[i] - waypoints[i - 1]).norm();
    return c;
  }
};

struct TreeNode {
  Vec3 position;
  int parent = -1;
  double cost = 0.0;
};

struct PlanResult {
  std::optional<Path> path;
  double cost = std::numeric_limits<double>::infinity();
  std::vector<TreeNode> tree;
  // Best goal-reaching cost after each iteration (infinity until the goal is reached).
  std::vector<double> best_cost_history;
  int iterations = 0;

  bool found() const { return path.has_value(); }
};

namespace detail {

// 53-bit uniform double in [0, 1); independent of the standard library's
// distribution implementations so runs are reproducible across toolchains.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

class RrtStar {
 public:
  RrtStar(const Environment& env, PlannerParams params)
      : env_(env), params_(params), resolution_(params.resolution_for(env)) {
    params_.validate();
  }

  PlanResult plan(const Vec3& start, const Vec3& goal) const {
    if (!env_.is_free(start)) throw std::invalid_argument("plan: start is not in free space");
    if (!env_.is_free(goal)) throw std::invalid_argument("plan: goal is not in free space");

    PlanResult result;
    std::vector<TreeNode>& tree = result.tree;
    tree.push_back({start, -1, 0.0});

    if ((goal - start).norm() == 0.0) {
      result.path = Path{{start}};
      result.cost = 0.0;
      return result;
    }

    std::mt19937_64 rng(params_.rng_seed);
    const Vec3 lo = env_.workspace_min.array() + env_.robot_radius;
    const Vec3 span = (env_.workspace_max - env_.workspace_min).array() - 2.0 * env_.robot_radius;

    std::vector<std::vector<int>> children(1);
    // Nodes within goal_tolerance whose straight connection to the goal is free.
    std::vector<int> goal_nodes;
    auto consider_goal = [&](int idx) {
      const double d = (tree[idx].position - goal).norm();
      if (d > params_.goal_tolerance) return;
      if (std::find(goal_nodes.begin(), goal_nodes.end(), idx) != goal_nodes.end()) return;
      if (d == 0.0 || env_.segment_free(tree[idx].position, goal, resolution_)) goal_nodes.push_back(idx);
    };
    auto best_goal = [&]() {
      int best = -1;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int i : goal_nodes) {
        const double c = tree[i].cost + (tree[i].position - goal).norm();
        if (c < best_cost) {
          best_cost = c;
          best = i;
        }
      }
      return std::pair{best, best_cost};
    };

    std::vector<int> near;
    for (int it = 0; it < params_.max_iterations; ++it) {
      Vec3 sample;
      if (detail::uniform01(rng) < params_.goal_bias) {
        sample = goal;
      } else {
        for (int k = 0; k < 3; ++k) sample[k] = lo[k] + span[k] * detail::uniform01(rng);
      }

      const int nearest = nearest_index(tree, sample);
      const Vec3 from = tree[nearest].position;
      const Vec3 delta = sample - from;
      const double dist = delta.norm();
      const Vec3 candidate =
          dist > params_.steer_step ? Vec3(from + delta * (params_.steer_step / dist)) : sample;
      if (dist == 0.0 || !env_.segment_free(from, candidate, resolution_)) {
        result.best_cost_history.push_back(best_goal().second);
        continue;
      }

      const double n = static_cast<double>(tree.size() + 1);
      const double radius =
          std::min(params_.steer_step, params_.gamma * std::cbrt(std::log(n) / n));
      near.clear();
      for (int i = 0; i < static_cast<int>(tree.size()); ++i) {
        if ((tree[i].position - candidate).norm() <= radius) near.push_back(i);
      }

      // Choose parent: lowest cost-to-come, ties to lowest index.
      int parent = nearest;
      double parent_cost = tree[nearest].cost + (candidate - from).norm();
      for (int i : near) {
        const double c = tree[i].cost + (candidate - tree[i].position).norm();
        if (c < parent_cost && env_.segment_free(tree[i].position, candidate, resolution_)) {
          parent = i;
          parent_cost = c;
        }
      }
      const int idx = static_cast<int>(tree.size());
      tree.push_back({candidate, parent, parent_cost});
      children.emplace_back();
      children[parent].push_back(idx);

      for (int i : near) {
        if (i == parent) continue;
        const double c = parent_cost + (tree[i].position - candidate).norm();
        if (c < tree[i].cost && env_.segment_free(candidate, tree[i].position, resolution_)) {
          auto& siblings = children[tree[i].parent];
          siblings.erase(std::find(siblings.begin(), siblings.end(), i));
          tree[i].parent = idx;
          children[idx].push_back(i);
          refresh_costs(tree, children, i);
        }
      }

      consider_goal(idx);
      result.best_cost_history.push_back(best_goal().second);
    }

    result.iterations = params_.max_iterations;
    const int best_node = best_goal().first;
    if (best_node < 0) return result;

    Path path;
    for (int i = best_node; i >= 0; i = tree[i].parent) path.waypoints.push_back(tree[i].position);
    std::reverse(path.waypoints.begin(), path.waypoints.end());
    if ((path.waypoints.back() - goal).norm() > 0.0) path.waypoints.push_back(goal);
    result.cost = path.cost();
    result.path = std::move(path);
    return result;
  }

  double resolution() const { return resolution_; }

 private:
  static int nearest_index(const std::vector<TreeNode>& tree, const Vec3& p) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(tree.size()); ++i) {
      const double d = (tree[i].position - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  static void refresh_costs(std::vector<TreeNode>& tree, const std::vector<std::vector<int>>& children,
                            int root) {
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      const TreeNode& parent = tree[tree[node].parent];
      tree[node].cost = parent.cost + (tree[node].position - parent.position).norm();
      for (int c : children[node]) stack.push_back(c);
    }
  }

  const Environment& env_;
  PlannerParams params_;
  double resolution_;
};

/// Runs RRT* from start to goal; the result holds no path if the goal was not
/// reached within max_iterations.
inline PlanResult plan(const Environment& env, const Vec3& start, const Vec3& goal,
                       const PlannerParams& params) {
  return RrtStar(env, params).plan(start, goal);
}

}  // namespace safeplan
