// Acceptance suite: one PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "safeplan/safeplan.hpp"
#include "test_support.hpp"

namespace safeplan {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const MissionContext& ctx() { return test::maze_context(); }
const SafetyFilter& filt() { return *ctx().filter; }

struct MazePair {
  MissionResult on, off;
  double on_seconds = 0.0;
};

const MazePair& maze_pair() {
  static const MazePair pair = [] {
    MazePair p;
    const auto t0 = Clock::now();
    const MissionContext c = build_context(test::maze().setup, test::maze().mission);
    p.on = run_mission(c, test::maze().mission, true, test::maze().mission_seed);
    p.on_seconds = seconds_since(t0);
    p.off = run_mission(c, test::maze().mission, false, test::maze().mission_seed);
    return p;
  }();
  return pair;
}

Outcome scenario_reproduction() {
  const MazePair& p = maze_pair();
  const MissionConfig& cfg = test::maze().mission;
  const ConstraintSet& c = test::maze().setup.constraints;
  bool angles_ok = true;
  for (const State& x : p.on.executed_states) {
    const ChartVector xi = to_chart(x);
    for (int j : {kRoll, kPitch, kYaw}) angles_ok = angles_ok && xi[j] >= c.lower[j] && xi[j] <= c.upper[j];
  }
  const double goal_distance = (p.on.executed_states.back().position - cfg.goal).norm();
  const bool near_goal = goal_distance <= cfg.goal_region_radius + 0.15;
  return {near_goal && angles_ok && p.on.constraint_violations.empty() && p.on_seconds <= 60.0,
          fmt("goal distance %.4f m, violations %.0f, angles in bounds %.0f, runtime %.2f s", goal_distance,
              static_cast<double>(p.on.constraint_violations.size()), angles_ok ? 1.0 : 0.0, p.on_seconds)};
}

Outcome baseline_contrast() {
  const MazePair& p = maze_pair();
  const RunComparison cmp = compare_runs(p.on, p.off);
  return {!p.off.constraint_violations.empty() && cmp.a.interventions > 0,
          fmt("filter-off violations %.0f, filter-on interventions %.0f", static_cast<double>(cmp.b.violations),
              static_cast<double>(cmp.a.interventions))};
}

ChartVector near_hover(std::mt19937_64& rng, const Vec3& center, double s) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const ConstraintSet& c = ctx().setup.constraints;
  ChartVector xi = ChartVector::Zero();
  xi.segment<3>(kX) = center + 0.05 * s * Vec3(u(rng), u(rng), u(rng));
  for (int j = kVx; j <= kVz; ++j) xi[j] = 0.2 * s * u(rng);
  for (int j = kRoll; j <= kYaw; ++j) xi[j] = 0.8 * s * (std::isfinite(c.upper[j]) ? c.upper[j] : 0.2) * u(rng);
  for (int j = kRateP; j <= kRateR; ++j) xi[j] = 0.5 * s * u(rng);
  return to_chart(from_chart(xi));
}

std::vector<ReferenceSample> hover_window(const Vec3& p) {
  return std::vector<ReferenceSample>(static_cast<std::size_t>(filt().horizon()), {p, Vec3::Zero(), 0.0});
}

Outcome minimal_intervention() {
  std::mt19937_64 rng(301);
  const auto window = hover_window(Vec3(0.0, 0.0, 0.5));
  const TerminalSet terminal = filt().terminal_for(window);
  int cases = 0, passed = 0, drawn = 0;
  double worst = 0.0;
  while (cases < 200 && drawn < 20000) {
    ++drawn;
    const ChartVector xi = near_hover(rng, window[0].position, 0.3);
    const State x = from_chart(xi);
    const ControlInput u_des = desired_input(ctx().design, x, window[0]);
    if (!filt().sequence_feasible(xi, filt().backup_rollout(xi, u_des, terminal), terminal, 0.0)) continue;
    const double diff = (filt().filter(x, u_des, window).u_safe.thrusts - u_des.thrusts).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff);
    passed += diff <= 1e-5 ? 1 : 0;
    ++cases;
  }
  return {cases == 200 && passed == cases,
          fmt("%.0f/%.0f safe cases unchanged, worst |u_safe - u_des| %.3g", passed, cases, worst)};
}

Outcome qp_oracle() {
  std::mt19937_64 rng(401);
  std::uniform_int_distribution<int> dim(1, 12), rows(0, 20);
  int agree = 0, infeasible = 0;
  double solver_seconds = 0.0, worst = 0.0;
  for (int trial = 0; trial < 100;) {
    const int n = dim(rng), m = rows(rng);
    if (oracle::enumeration_count(n, m) > 30000) continue;
    const QpProblem qp = oracle::random_qp(rng, n, m);
    const auto t0 = Clock::now();
    const QpResult r = solve_qp(qp);
    solver_seconds += seconds_since(t0);
    const oracle::EnumerationResult expected = oracle::enumerate_qp(qp);
    bool ok = r.solved() == expected.feasible && r.status != QpStatus::kMaxIterations;
    if (ok && expected.feasible) {
      worst = std::max(worst, std::abs(r.objective - expected.objective));
      ok = std::abs(r.objective - expected.objective) <= 1e-5;
    }
    infeasible += expected.feasible ? 0 : 1;
    agree += ok ? 1 : 0;
    ++trial;
  }
  return {agree == 100 && solver_seconds <= 10.0,
          fmt("%.0f/100 agree (%.0f infeasible), worst objective gap %.3g, solver time %.3f s", agree, infeasible,
              worst, solver_seconds)};
}

Outcome dare() {
  const Eigen::MatrixXd q = ctx().design.q_weights.asDiagonal();
  const Eigen::MatrixXd r = ctx().design.r_weights.asDiagonal();
  const double model_residual =
      riccati_residual(ctx().model.a_matrix, ctx().model.b_matrix, q, r, ctx().design.riccati_solution)
          .cwiseAbs()
          .maxCoeff();

  std::mt19937_64 rng(501);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<int> dim(1, 6);
  double worst = 0.0;
  for (int solved = 0; solved < 50;) {
    const int nx = dim(rng), nu = std::uniform_int_distribution<int>(1, nx)(rng);
    Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(nx, nx, [&] { return n(rng); });
    a *= 1.2 / std::max(spectral_radius(a), 1e-3);
    const Eigen::MatrixXd b = Eigen::MatrixXd::NullaryExpr(nx, nu, [&] { return n(rng); });
    Eigen::MatrixXd ctrb(nx, nx * nu), block = b;
    for (int i = 0; i < nx; ++i, block = a * block) ctrb.middleCols(i * nu, nu) = block;
    if (Eigen::FullPivLU<Eigen::MatrixXd>(ctrb).rank() < nx) continue;
    const Eigen::MatrixXd l = Eigen::MatrixXd::NullaryExpr(nx, nx, [&] { return n(rng); });
    const Eigen::MatrixXd qq = l * l.transpose() + 0.1 * Eigen::MatrixXd::Identity(nx, nx);
    const Eigen::MatrixXd rr = Eigen::MatrixXd::Identity(nu, nu);
    const DareSolution s = solve_dare(a, b, qq, rr);
    worst = std::max(worst, riccati_residual(a, b, qq, rr, s.p).cwiseAbs().maxCoeff());
    ++solved;
  }

  const double scalar = solve_dare(Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::MatrixXd::Ones(1, 1),
                                   Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1))
                            .p(0, 0);
  const double closed_form = 0.5 * (0.25 + std::sqrt(0.0625 + 4.0));
  return {model_residual <= 1e-8 && worst <= 1e-8 && std::abs(scalar - closed_form) <= 1e-6,
          fmt("quadrotor residual %.3g, worst random residual %.3g, scalar P %.9f (closed form %.9f)", model_residual,
              worst, scalar, closed_form)};
}

Outcome terminal_set() {
  const TerminalSet& ts = ctx().terminal;
  TerminalSynthesisOptions opts = ctx().setup.terminal;
  opts.invariance_samples = 10000;
  const TerminalCertificate cert =
      certify_terminal_set(ts, ctx().design, ctx().setup.constraints, ctx().setup.inputs, ctx().model, opts);

  std::mt19937_64 rng(601);
  std::normal_distribution<double> n;
  const ChartMatrix closed_shape = ts.shape();
  const Eigen::LLT<ChartMatrix> chol(closed_shape);
  const ChartMatrix upper = chol.matrixU();
  int exits = 0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ChartVector dir;
    for (int j = 0; j < kChartDim; ++j) dir[j] = n(rng);
    ChartVector xi = upper.triangularView<Eigen::Upper>().solve(dir);
    xi *= std::sqrt(ts.level() / ts.value(xi));  // on the boundary of the set
    for (int k = 0; k < 100000; ++k) {
      xi = ctx().model.predict(xi, backup_input(ctx().design, ts, xi).thrusts - ctx().design.hover.thrusts);
      const double ratio = ts.value(xi) / ts.level();
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0 + 1e-12) {
        ++exits;
        break;
      }
    }
  }
  return {cert.all() && exits == 0,
          fmt("containment %.0f, input %.0f, invariance %.0f (worst ratio %.4f); ", cert.containment,
              cert.input_admissible, cert.invariance, cert.worst_invariance_ratio) +
              fmt("backup-law exits %.0f/100 over 1e5 steps, worst V/c after a step %.4f", exits, worst_ratio)};
}

Outcome dynamics() {
  const QuadrotorParams& p = test::maze().setup.quadrotor;
  const double dt = test::maze().mission.dt();
  State x = State::at_rest(Vec3(0.2, -0.1, 0.5));
  double hover_drift = 0.0;
  for (int k = 0; k < 100; ++k) {
    const State next = step(x, hover_input(p), p, dt);
    hover_drift = std::max(hover_drift, (to_chart(next) - to_chart(x)).cwiseAbs().maxCoeff());
    x = next;
  }

  const State fall = step(State{}, {}, p, dt);
  const double ballistic = std::abs(fall.position.z() + 0.5 * p.gravity * dt * dt);

  State x0 = State::at_rest(Vec3(0, 0, 1));
  x0.velocity = Vec3(0.5, -0.3, 0.2);
  x0.attitude = quaternion_from_euler({0.2, -0.1, 0.4});
  x0.body_rates = Vec3(3.0, -2.0, 1.5);
  ControlInput u = hover_input(p);
  u.thrusts += Vec4(0.01, -0.004, 0.006, -0.002);
  auto run = [&](int steps) {
    State s = x0;
    for (int i = 0; i < steps; ++i) s = step(s, u, p, dt / steps);
    return to_chart(s);
  };
  const ChartVector ref = run(8);
  const double ratio = (run(1) - ref).norm() / (run(2) - ref).norm();

  const LinearModel& m = ctx().model;
  std::mt19937_64 rng(701);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> radius(0.0, 1e-3);
  double lin = 0.0;
  for (int i = 0; i < 100; ++i) {
    ChartVector dx;
    Vec4 du;
    for (int j = 0; j < kChartDim; ++j) dx[j] = n(rng);
    for (int j = 0; j < kInputDim; ++j) du[j] = n(rng);
    dx *= radius(rng) / dx.norm();
    du *= radius(rng) / du.norm();
    const ChartVector nonlinear = to_chart(step(from_chart(dx), ControlInput{m.operating_input.thrusts + du}, p, dt));
    lin = std::max(lin, (nonlinear - m.predict(dx, du)).norm());
  }
  return {hover_drift <= 1e-12 && ballistic <= 1e-6 && ratio >= 15.0 && lin <= 1e-5,
          fmt("hover drift %.3g, ballistic error %.3g, RK4 ratio %.2f, linearization error %.3g", hover_drift,
              ballistic, ratio, lin)};
}

Outcome planner() {
  Environment empty;
  empty.workspace_min = Vec3(-0.5, -1.0, 0.0);
  empty.workspace_max = Vec3(1.5, 1.0, 1.0);
  empty.robot_radius = test::maze().setup.environment.robot_radius;
  PlannerParams params = test::maze().setup.planner;
  params.max_iterations = 5000;
  const PlanResult straight = plan(empty, Vec3(0, 0, 0.5), Vec3(1, 0, 0.5), params);
  const double ratio = straight.found() ? straight.cost / 1.0 : kInf;

  const Environment& env = test::maze().setup.environment;
  const Vec3 start = test::maze().mission.start, goal = test::maze().mission.goal;
  std::vector<double> checkpoints;
  bool edges_free = true, samples_free = true;
  for (int iterations : {1000, 2000, 5000}) {
    params.max_iterations = iterations;
    const PlanResult r = plan(env, start, goal, params);
    checkpoints.push_back(r.cost);
    const double res = params.resolution_for(env);
    for (const TreeNode& node : r.tree) {
      if (node.parent >= 0) edges_free = edges_free && env.segment_free(r.tree[node.parent].position, node.position, res);
    }
    if (!r.found()) continue;
    auto traj = smooth(env, *r.path, test::maze().setup.smoothing, test::maze().mission.dt());
    if (!traj) traj = smooth_linear(env, *r.path, test::maze().setup.smoothing, test::maze().mission.dt());
    samples_free = samples_free && traj.has_value();
    if (traj) {
      for (const auto& s : traj->samples) samples_free = samples_free && env.is_free(s.position);
    }
  }
  const bool monotone = std::isfinite(checkpoints[0]) && checkpoints[1] <= checkpoints[0] && checkpoints[2] <= checkpoints[1];
  return {ratio <= 1.05 && monotone && edges_free && samples_free,
          fmt("empty-room cost ratio %.4f; maze cost at 1k/2k/5k: %.4f %.4f %.4f", ratio, checkpoints[0],
              checkpoints[1], checkpoints[2]) +
              (edges_free ? "; tree edges free" : "; tree edge blocked") +
              (samples_free ? "; smoothed samples free" : "; smoothed sample blocked")};
}

Outcome determinism() {
  const auto dir = test::scratch_dir("acceptance_det");
  auto run_once = [&](const std::string& sub) {
    cli::RunFlags flags;
    flags.out = (dir / sub).string();
    std::ostringstream out, err;
    const int code = cli::cmd_run(test::scenario_path("maze_iv").string(), flags, out, err);
    std::ifstream in(dir / sub / "trajectory.csv", std::ios::binary);
    std::ostringstream content;
    content << in.rdbuf();
    return std::pair{code, content.str()};
  };
  const auto [code_a, a] = run_once("a");
  const auto [code_b, b] = run_once("b");
  return {code_a == 0 && code_b == 0 && !a.empty() && a == b,
          fmt("exit codes %.0f/%.0f, trajectory.csv sizes %.0f/%.0f bytes", code_a, code_b,
              static_cast<double>(a.size()), static_cast<double>(b.size())) +
              (a == b ? ", identical" : ", different")};
}

Outcome shifted_sequence() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const InputSet& u_set = ctx().setup.inputs;
  const Vec4& hover = ctx().design.hover.thrusts;
  const auto window = hover_window(Vec3(0.0, 0.0, 0.5));
  const TerminalSet terminal = filt().terminal_for(window);
  const int horizon = filt().horizon();
  int instances = 0, feasible_next = 0, drawn = 0;
  while (instances < 100 && drawn < 5000) {
    ++drawn;
    const ChartVector xi = near_hover(rng, window[0].position, 0.6);
    ControlInput u_des;
    for (int i = 0; i < kInputDim; ++i) u_des.thrusts[i] = u_set.lower[i] + unit(rng) * (u_set.upper[i] - u_set.lower[i]);
    const FilterOutput out = filt().filter(from_chart(xi), u_des, window);
    if (out.diagnostics.fallback) continue;
    ++instances;
    const auto xs = filt().predict(xi, out.sequence);
    Eigen::VectorXd shifted(kInputDim * horizon);
    shifted.head(kInputDim * (horizon - 1)) = out.sequence.tail(kInputDim * (horizon - 1));
    shifted.tail<kInputDim>() = backup_input(ctx().design, terminal, xs.back()).thrusts - hover;
    feasible_next += filt().sequence_feasible(xs[1], shifted, terminal, 1e-6) ? 1 : 0;
  }
  return {instances == 100 && feasible_next == instances,
          fmt("%.0f/%.0f shifted sequences feasible at the next step", feasible_next, instances)};
}

}  // namespace
}  // namespace safeplan

int main() {
  using namespace safeplan;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"scenario reproduction", scenario_reproduction},
      {"baseline contrast", baseline_contrast},
      {"minimal intervention", minimal_intervention},
      {"QP oracle equivalence", qp_oracle},
      {"DARE correctness", dare},
      {"terminal-set certificates", terminal_set},
      {"dynamics validation", dynamics},
      {"planner", planner},
      {"determinism", determinism},
      {"shifted-sequence feasibility", shifted_sequence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
