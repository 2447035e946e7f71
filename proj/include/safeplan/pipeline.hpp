#pragma once

// Windowed plan-smooth-track loop: each window plans toward a spatial
// subgoal, smooths the path into a T-sample reference, then runs LQR plus
// the safety filter on the nonlinear simulator for T control steps.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeplan/controller.hpp"
#include "safeplan/dynamics.hpp"
#include "safeplan/environment.hpp"
#include "safeplan/planner.hpp"
#include "safeplan/safety_filter.hpp"
#include "safeplan/trajectory.hpp"

namespace safeplan {

struct MissionConfig {
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  int horizon = 20;
  double control_frequency = 50.0;
  double goal_region_radius = 0.1;
  int max_windows = 200;
  double disturbance_bound = 0.0;
  double subgoal_search_radius = 0.2;

  double dt() const { return 1.0 / control_frequency; }

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("mission horizon must be >= 1");
    if (!(control_frequency > 0.0)) throw std::invalid_argument("mission control_frequency must be > 0");
    if (!(goal_region_radius > 0.0)) throw std::invalid_argument("mission goal_region_radius must be > 0");
    if (max_windows < 0) throw std::invalid_argument("mission max_windows must be >= 0");
    if (!(disturbance_bound >= 0.0)) throw std::invalid_argument("mission disturbance_bound must be >= 0");
    if (!(subgoal_search_radius > 0.0)) throw std::invalid_argument("mission subgoal_search_radius must be > 0");
    if (!start.allFinite() || !goal.allFinite()) throw std::invalid_argument("mission start/goal must be finite");
  }

  bool operator==(const MissionConfig&) const = default;
};

/// Everything a mission needs apart from the mission itself.
struct MissionSetup {
  QuadrotorParams quadrotor;
  Environment environment;
  PlannerParams planner;
  SmoothingParams smoothing;
  LqrWeights lqr;
  ConstraintSet constraints;
  InputSet inputs;
  FilterSettings filter;
  TerminalSynthesisOptions terminal;
};

/// Components derived once per (setup, control rate): hover model, LQR
/// design, certified terminal set and the filter built on them.
struct MissionContext {
  MissionSetup setup;
  LinearModel model;
  LqrDesign design;
  TerminalSet terminal;
  std::shared_ptr<const SafetyFilter> filter;
};

inline MissionContext build_context(const MissionSetup& setup, const MissionConfig& cfg) {
  cfg.validate();
  setup.quadrotor.validate();
  setup.environment.validate();
  setup.planner.validate();
  setup.smoothing.validate();
  setup.constraints.validate();
  MissionContext ctx;
  ctx.setup = setup;
  ctx.setup.filter.horizon = cfg.horizon;
  ctx.setup.terminal.disturbance_bound = cfg.disturbance_bound;
  ctx.setup.terminal.free_axes = translation_free_axes(setup.constraints);
  ctx.model = linearize_hover(setup.quadrotor, cfg.dt());
  ctx.setup.inputs.validate(ctx.model.operating_input);
  ctx.design = lqr_gain(ctx.model, setup.lqr);
  ctx.terminal = terminal_set_synthesis(ctx.design, setup.constraints, ctx.setup.inputs, ctx.model,
                                        ctx.setup.terminal);
  ctx.filter = std::make_shared<const SafetyFilter>(ctx.model, ctx.design, setup.constraints, ctx.setup.inputs,
                                                    ctx.terminal, ctx.setup.filter, setup.quadrotor);
  return ctx;
}

struct StepRecord {
  int step = 0;
  int window = 0;
  double time = 0.0;
  ChartVector chart = ChartVector::Zero();  // state at the start of the step
  Vec4 u_des = Vec4::Zero();
  Vec4 u_safe = Vec4::Zero();
  bool intervened = false;
  bool fallback = false;
  int qp_iterations = 0;
  double objective = 0.0;
};

struct Intervention {
  int step = 0;
  Vec4 u_des = Vec4::Zero();
  Vec4 u_safe = Vec4::Zero();
};

struct ConstraintViolation {
  int state_index = 0;  // index into executed_states
  std::string kind;     // "state:<axis>", "collision" or "workspace"
  double value = 0.0;
};

struct MissionResult {
  MissionConfig config;
  bool filter_enabled = false;
  std::uint64_t seed = 0;
  double dt = 0.0;
  double terminal_level = 0.0;
  std::vector<State> executed_states;  // executed_states[k] is the state at time k * dt
  std::vector<StepRecord> steps;
  std::vector<Path> planned_paths;
  std::vector<Trajectory> planned_segments;
  std::vector<int> window_indices;  // control index j at the start of each window
  std::vector<Intervention> interventions;
  std::vector<int> fallback_steps;
  std::vector<ConstraintViolation> constraint_violations;
  bool reached_goal = false;
  bool aborted = false;
  std::string abort_reason;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline void check_state(const MissionContext& ctx, const State& x, int index,
                        std::vector<ConstraintViolation>& out) {
  const ChartVector xi = to_chart(x);
  const ConstraintSet& c = ctx.setup.constraints;
  for (int j = 0; j < kChartDim; ++j) {
    if (xi[j] < c.lower[j] || xi[j] > c.upper[j] || !std::isfinite(xi[j])) {
      out.push_back({index, "state:" + std::string(kChartNames[j]), xi[j]});
    }
  }
  const Environment& env = ctx.setup.environment;
  if (!env.in_workspace(x.position)) {
    out.push_back({index, "workspace", 0.0});
  } else if (!env.is_free(x.position)) {
    double clearance = kInf;
    for (const Aabb& box : env.obstacles) clearance = std::min(clearance, box.distance(x.position));
    out.push_back({index, "collision", clearance - env.robot_radius});
  }
}

}  // namespace detail

/// Point a window's travel time along the straight line toward the goal; if
/// it is not free, the nearest free point among random draws in a ball
/// around it (the goal itself if none is found).
inline Vec3 select_subgoal(const Environment& env, const Vec3& from, const Vec3& goal, const MissionConfig& cfg,
                           const SmoothingParams& smoothing, std::mt19937_64& rng) {
  const double remaining = (goal - from).norm();
  if (remaining == 0.0) return goal;
  const double window_time = cfg.horizon * cfg.dt();
  const double fraction = std::min(1.0, window_time / (remaining / smoothing.cruise_speed));
  const Vec3 target = from + fraction * (goal - from);
  if (env.is_free(target)) return target;
  const double r = cfg.subgoal_search_radius;
  std::optional<Vec3> best;
  for (int i = 0; i < 500; ++i) {
    Vec3 offset;
    for (int k = 0; k < 3; ++k) offset[k] = r * (2.0 * detail::uniform01(rng) - 1.0);
    if (offset.norm() > r) continue;
    const Vec3 candidate = target + offset;
    if (!env.is_free(candidate)) continue;
    if (!best || (candidate - target).norm() < (*best - target).norm()) best = candidate;
  }
  return best.value_or(goal);
}

inline MissionResult run_mission(const MissionContext& ctx, const MissionConfig& cfg, bool filter_enabled,
                                 std::uint64_t seed) {
  cfg.validate();
  const Environment& env = ctx.setup.environment;
  if (!env.is_free(cfg.start)) throw std::invalid_argument("run_mission: start is not in free space");
  if (!env.is_free(cfg.goal)) throw std::invalid_argument("run_mission: goal is not in free space");
  if (std::abs(cfg.dt() - ctx.model.dt) > 1e-15 || cfg.horizon != ctx.filter->horizon()) {
    throw std::invalid_argument("run_mission: context was built for a different rate or horizon");
  }

  MissionResult res;
  res.config = cfg;
  res.filter_enabled = filter_enabled;
  res.seed = seed;
  res.dt = cfg.dt();
  res.terminal_level = ctx.terminal.level();

  std::mt19937_64 subgoal_rng(detail::mix_seed(seed, 1));
  std::mt19937_64 disturbance_rng(detail::mix_seed(seed, 2));
  const double bound = cfg.disturbance_bound;
  auto draw = [&] { return bound * (2.0 * detail::uniform01(disturbance_rng) - 1.0); };

  State x = State::at_rest(cfg.start);
  res.executed_states.push_back(x);
  detail::check_state(ctx, x, 0, res.constraint_violations);

  const int horizon = cfg.horizon;
  FilterWorkspace workspace;
  int j = 0;
  for (int w = 0;; ++w) {
    if ((x.position - cfg.goal).norm() <= cfg.goal_region_radius) {
      res.reached_goal = true;
      break;
    }
    if (w >= cfg.max_windows) break;
    if (!env.is_free(x.position)) {
      res.aborted = true;
      res.abort_reason = "vehicle left free space; cannot plan";
      break;
    }

    const Vec3 subgoal = select_subgoal(env, x.position, cfg.goal, cfg, ctx.setup.smoothing, subgoal_rng);
    PlannerParams pp = ctx.setup.planner;
    pp.rng_seed = detail::mix_seed(seed, 1000 + static_cast<std::uint64_t>(w));
    PlanResult plan_result = plan(env, x.position, subgoal, pp);
    if (!plan_result.found()) {
      pp.max_iterations *= 2;
      plan_result = plan(env, x.position, subgoal, pp);
    }
    if (!plan_result.found()) {
      res.aborted = true;
      res.abort_reason = "planner failed in window " + std::to_string(w);
      break;
    }
    const Path& path = *plan_result.path;
    std::optional<Trajectory> traj = smooth(env, path, ctx.setup.smoothing, cfg.dt());
    if (!traj) traj = smooth_linear(env, path, ctx.setup.smoothing, cfg.dt());
    if (!traj) {
      res.aborted = true;
      res.abort_reason = "smoothing failed in window " + std::to_string(w);
      break;
    }
    const Trajectory window = traj->fitted(static_cast<std::size_t>(horizon));
    res.planned_paths.push_back(path);
    res.planned_segments.push_back(window);
    res.window_indices.push_back(j);

    for (int k = 0; k < horizon; ++k) {
      const int step_index = static_cast<int>(res.steps.size());
      const ReferenceSample& ref = window.samples[static_cast<std::size_t>(k)];
      const ControlInput u_des = desired_input(ctx.design, x, ref);

      StepRecord rec;
      rec.step = step_index;
      rec.window = w;
      rec.time = step_index * cfg.dt();
      rec.chart = to_chart(x);
      rec.u_des = u_des.thrusts;

      ControlInput u_safe;
      if (filter_enabled) {
        const std::span<const ReferenceSample> ref_window(window.samples.data() + k,
                                                          window.samples.size() - static_cast<std::size_t>(k));
        const FilterOutput out = ctx.filter->filter(x, u_des, ref_window, &workspace);
        u_safe = out.u_safe;
        rec.intervened = out.intervened;
        rec.fallback = out.diagnostics.fallback;
        rec.qp_iterations = out.diagnostics.iterations;
        rec.objective = out.diagnostics.fallback ? 0.0 : out.diagnostics.objective;
      } else {
        u_safe = ctx.setup.inputs.clamp(u_des);
      }
      rec.u_safe = u_safe.thrusts;
      if (rec.intervened) res.interventions.push_back({step_index, u_des.thrusts, u_safe.thrusts});
      if (rec.fallback) res.fallback_steps.push_back(step_index);
      res.steps.push_back(rec);

      std::optional<StateDerivative> disturbance;
      if (bound > 0.0) {
        StateDerivative d;
        d.velocity_rate = Vec3(draw(), draw(), draw());
        d.body_rate_rate = Vec3(draw(), draw(), draw());
        disturbance = d;
      }
      x = step(x, u_safe, ctx.setup.quadrotor, cfg.dt(), disturbance);
      res.executed_states.push_back(x);
      detail::check_state(ctx, x, static_cast<int>(res.executed_states.size()) - 1, res.constraint_violations);
    }
    j += horizon + 1;
  }
  return res;
}

struct AngleRange {
  double min = 0.0;
  double max = 0.0;
};

struct RunSummary {
  int steps = 0;
  int windows = 0;
  int violations = 0;
  int interventions = 0;
  double intervention_density = 0.0;
  int fallbacks = 0;
  double goal_error = 0.0;
  double path_length = 0.0;
  AngleRange roll, pitch, yaw;
  bool reached_goal = false;
  bool aborted = false;
};

inline RunSummary summarize(const MissionResult& r) {
  RunSummary s;
  s.steps = static_cast<int>(r.steps.size());
  s.windows = static_cast<int>(r.window_indices.size());
  s.violations = static_cast<int>(r.constraint_violations.size());
  s.interventions = static_cast<int>(r.interventions.size());
  s.intervention_density = s.steps > 0 ? static_cast<double>(s.interventions) / s.steps : 0.0;
  s.fallbacks = static_cast<int>(r.fallback_steps.size());
  s.goal_error = (r.executed_states.back().position - r.config.goal).norm();
  for (std::size_t i = 1; i < r.executed_states.size(); ++i) {
    s.path_length += (r.executed_states[i].position - r.executed_states[i - 1].position).norm();
  }
  bool first = true;
  for (const State& x : r.executed_states) {
    const EulerAngles e = euler_from_quaternion(x.attitude);
    auto widen = [&](AngleRange& a, double v) {
      a.min = first ? v : std::min(a.min, v);
      a.max = first ? v : std::max(a.max, v);
    };
    widen(s.roll, e.roll);
    widen(s.pitch, e.pitch);
    widen(s.yaw, e.yaw);
    first = false;
  }
  s.reached_goal = r.reached_goal;
  s.aborted = r.aborted;
  return s;
}

struct RunComparison {
  RunSummary a;
  RunSummary b;
  std::map<std::string, double> delta;  // a - b
};

/// Compares two summaries of the same scenario.
inline RunComparison compare_summaries(const RunSummary& a, const RunSummary& b) {
  RunComparison c{a, b, {}};
  c.delta["steps"] = a.steps - b.steps;
  c.delta["windows"] = a.windows - b.windows;
  c.delta["violations"] = a.violations - b.violations;
  c.delta["interventions"] = a.interventions - b.interventions;
  c.delta["intervention_density"] = a.intervention_density - b.intervention_density;
  c.delta["fallbacks"] = a.fallbacks - b.fallbacks;
  c.delta["goal_error"] = a.goal_error - b.goal_error;
  c.delta["path_length"] = a.path_length - b.path_length;
  c.delta["roll_min"] = a.roll.min - b.roll.min;
  c.delta["roll_max"] = a.roll.max - b.roll.max;
  c.delta["pitch_min"] = a.pitch.min - b.pitch.min;
  c.delta["pitch_max"] = a.pitch.max - b.pitch.max;
  c.delta["yaw_min"] = a.yaw.min - b.yaw.min;
  c.delta["yaw_max"] = a.yaw.max - b.yaw.max;
  return c;
}

inline RunComparison compare_runs(const MissionResult& a, const MissionResult& b) {
  if (!(a.config == b.config)) throw std::invalid_argument("compare_runs: runs use different mission configs");
  return compare_summaries(summarize(a), summarize(b));
}

}  // namespace safeplan
