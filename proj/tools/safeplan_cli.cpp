#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "safeplan/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Safe kinodynamic quadrotor planning: windowed RRT*, LQR tracking and a predictive safety filter"};
  app.require_subcommand(1);

  safeplan::cli::RunFlags run_flags;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int horizon = 0;
  double disturbance = 0.0;
  auto* run = app.add_subcommand("run", "Run a scenario and write trajectory.csv, interventions.csv, summary.json");
  run->add_option("config", config_path, "Scenario JSON file")->required();
  run->add_option("--filter", run_flags.filter, "Safety filter: on, off or both")
      ->check(CLI::IsMember({"on", "off", "both"}));
  auto* seed_opt = run->add_option("--seed", seed, "Mission seed (overrides the scenario)");
  auto* out_opt = run->add_option("--out", out_dir, "Output directory (overrides the scenario)");
  auto* horizon_opt = run->add_option("--horizon", horizon, "Filter horizon in steps (overrides the scenario)");
  auto* dist_opt = run->add_option("--disturbance", disturbance, "Disturbance bound (overrides the scenario)");

  std::string dir_a, dir_b, compare_out;
  auto* compare = app.add_subcommand("compare", "Compare two run directories of the same scenario");
  compare->add_option("run_a", dir_a, "First run directory")->required();
  compare->add_option("run_b", dir_b, "Second run directory")->required();
  auto* compare_out_opt = compare->add_option("--out", compare_out, "Output JSON path (default comparison.json)");

  std::string series_dir, series, series_out;
  auto* exp = app.add_subcommand("export-series", "Write a plot-ready CSV series from a run directory");
  exp->add_option("run_dir", series_dir, "Run directory")->required();
  exp->add_option("series", series, "angles, velocity_xy, velocity_xz, position_3d or position_topview")->required();
  auto* series_out_opt = exp->add_option("--out", series_out, "Output CSV path (default <run_dir>/<series>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : safeplan::cli::kUsageError;
  }

  if (*run) {
    if (*seed_opt) run_flags.seed = seed;
    if (*out_opt) run_flags.out = out_dir;
    if (*horizon_opt) run_flags.horizon = horizon;
    if (*dist_opt) run_flags.disturbance = disturbance;
    return safeplan::cli::cmd_run(config_path, run_flags, std::cout, std::cerr);
  }
  if (*compare) {
    return safeplan::cli::cmd_compare(dir_a, dir_b, *compare_out_opt ? std::optional(compare_out) : std::nullopt,
                                      std::cout, std::cerr);
  }
  return safeplan::cli::cmd_export_series(series_dir, series,
                                          *series_out_opt ? std::optional(series_out) : std::nullopt, std::cout,
                                          std::cerr);
}
