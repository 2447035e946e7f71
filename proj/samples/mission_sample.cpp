// Builds a small scenario in code, runs it with and without the safety
// filter, and prints the comparison.

#include <iostream>

#include "safeplan/safeplan.hpp"

int main() {
  using namespace safeplan;

  MissionSetup setup;
  setup.environment.workspace_min = Vec3(-0.5, -0.5, 0.0);
  setup.environment.workspace_max = Vec3(1.5, 1.0, 1.0);
  setup.environment.robot_radius = 0.06;
  setup.environment.obstacles.push_back({Vec3(0.45, -0.5, 0.0), Vec3(0.55, 0.1, 1.0)});
  setup.constraints.lower[kRoll] = -0.2;
  setup.constraints.upper[kRoll] = 0.2;
  setup.constraints.lower[kPitch] = -0.05;
  setup.constraints.upper[kPitch] = 0.05;
  setup.constraints.lower[kYaw] = -0.2;
  setup.constraints.upper[kYaw] = 0.2;
  setup.inputs = InputSet::from_params(setup.quadrotor);
  setup.filter.stage_tightening = 1e-4;

  MissionConfig mission;
  mission.start = Vec3(0.0, 0.0, 0.5);
  mission.goal = Vec3(1.0, 0.0, 0.5);

  const MissionContext ctx = build_context(setup, mission);
  std::cout << "terminal level " << ctx.terminal.level() << ", closed-loop spectral radius "
            << ctx.design.closed_loop_radius << "\n";

  const MissionResult on = run_mission(ctx, mission, true, 1);
  const MissionResult off = run_mission(ctx, mission, false, 1);
  const RunComparison cmp = compare_runs(on, off);
  std::cout << "filter on:  violations " << cmp.a.violations << ", interventions " << cmp.a.interventions
            << ", pitch [" << cmp.a.pitch.min << ", " << cmp.a.pitch.max << "]\n";
  std::cout << "filter off: violations " << cmp.b.violations << ", pitch [" << cmp.b.pitch.min << ", "
            << cmp.b.pitch.max << "]\n";
}
