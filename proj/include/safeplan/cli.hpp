#pragma once

// Command implementations behind the safeplan executable. Each returns the
// process exit status and writes human-readable messages to the streams.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "safeplan/config.hpp"
#include "safeplan/pipeline.hpp"
#include "safeplan/run_io.hpp"

namespace safeplan::cli {

enum ExitCode : int {
  kOk = 0,
  kUsageError = 1,  // bad config, bad arguments, missing or mismatched inputs
  kViolations = 2,  // the executed trajectory breached a constraint or an obstacle
  kIncomplete = 3,  // mission aborted or goal region not reached
};

struct RunFlags {
  std::string filter = "on";  // on | off | both
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> horizon;
  std::optional<double> disturbance;
};

inline int exit_code_for(const MissionResult& r) {
  if (!r.constraint_violations.empty()) return kViolations;
  if (r.aborted || !r.reached_goal) return kIncomplete;
  return kOk;
}

inline const std::vector<std::string>& series_names() {
  static const std::vector<std::string> names{"angles", "velocity_xy", "velocity_xz", "position_3d",
                                              "position_topview"};
  return names;
}

namespace detail {

inline void report(std::ostream& out, const std::string& label, const MissionResult& r,
                   const std::filesystem::path& dir) {
  const RunSummary s = summarize(r);
  out << label << ": steps=" << s.steps << " windows=" << s.windows << " reached_goal=" << (s.reached_goal ? 1 : 0)
      << " goal_error=" << format_number(s.goal_error) << " violations=" << s.violations
      << " interventions=" << s.interventions << " fallbacks=" << s.fallbacks;
  if (r.aborted) out << " aborted=\"" << r.abort_reason << "\"";
  out << " -> " << dir.string() << "\n";
}

}  // namespace detail

inline int cmd_run(const std::string& config_path, const RunFlags& flags, std::ostream& out, std::ostream& err) {
  if (flags.filter != "on" && flags.filter != "off" && flags.filter != "both") {
    err << "error: --filter must be one of on, off, both\n";
    return kUsageError;
  }
  ScenarioConfig cfg;
  MissionContext ctx;
  try {
    cfg = load_scenario(config_path);
    if (flags.seed) cfg.mission_seed = *flags.seed;
    if (flags.horizon) cfg.mission.horizon = *flags.horizon;
    if (flags.disturbance) cfg.mission.disturbance_bound = *flags.disturbance;
    cfg.mission.validate();
    ctx = build_context(cfg.setup, cfg.mission);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  const std::filesystem::path base = flags.out ? std::filesystem::path(*flags.out)
                                               : std::filesystem::path(cfg.resolved_output_dir());
  try {
    if (flags.filter == "both") {
      const MissionResult on = run_mission(ctx, cfg.mission, true, cfg.mission_seed);
      const MissionResult off = run_mission(ctx, cfg.mission, false, cfg.mission_seed);
      write_run(base / "filter_on", cfg, on);
      write_run(base / "filter_off", cfg, off);
      const RunComparison cmp = compare_runs(on, off);
      write_json(base / "comparison.json", to_json(cmp));
      detail::report(out, "filter on", on, base / "filter_on");
      detail::report(out, "filter off", off, base / "filter_off");
      return exit_code_for(on);
    }
    const MissionResult r = run_mission(ctx, cfg.mission, flags.filter == "on", cfg.mission_seed);
    write_run(base, cfg, r);
    detail::report(out, "filter " + flags.filter, r, base);
    return exit_code_for(r);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

/// Compares two run directories of the same scenario; deltas are a - b.
inline int cmd_compare(const std::string& dir_a, const std::string& dir_b, const std::optional<std::string>& out_path,
                       std::ostream& out, std::ostream& err) {
  Json a, b;
  try {
    for (const auto& [dir, target] : {std::pair{dir_a, &a}, std::pair{dir_b, &b}}) {
      const std::filesystem::path d(dir);
      if (!std::filesystem::exists(d / "trajectory.csv") || !std::filesystem::exists(d / "summary.json")) {
        err << "error: " << dir << " is not a complete run directory\n";
        return kUsageError;
      }
      *target = read_json(d / "summary.json");
    }
    if (a.at("scenario") != b.at("scenario")) {
      err << "error: runs use different scenarios\n";
      return kUsageError;
    }
    const RunComparison cmp = compare_summaries(summary_from_json(a.at("summary")), summary_from_json(b.at("summary")));
    Json j = to_json(cmp);
    j["run_a"] = dir_a;
    j["run_b"] = dir_b;
    j["filter_a"] = a.at("filter");
    j["filter_b"] = b.at("filter");
    const std::filesystem::path target = out_path ? std::filesystem::path(*out_path) : "comparison.json";
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    write_json(target, j);
    for (const auto& [k, v] : cmp.delta) out << k << " " << format_number(v) << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

/// Writes one plot-ready series of a run with its constraint-bound columns.
inline int cmd_export_series(const std::string& run_dir, const std::string& series,
                             const std::optional<std::string>& out_path, std::ostream& out, std::ostream& err) {
  const auto& names = series_names();
  if (std::find(names.begin(), names.end(), series) == names.end()) {
    err << "error: unknown series '" << series << "'; valid series:";
    for (const auto& n : names) err << " " << n;
    err << "\n";
    return kUsageError;
  }
  try {
    const std::filesystem::path dir(run_dir);
    const CsvTable table = read_csv(dir / "trajectory.csv");
    const Json summary = read_json(dir / "summary.json");

    struct Column {
      std::string name;
      double lower, upper;
    };
    auto bound = [&](const std::string& axis, bool workspace) {
      if (workspace) {
        const int k = chart_index(axis);
        return Column{axis, summary.at("workspace").at("min").at(k).get<double>(),
                      summary.at("workspace").at("max").at(k).get<double>()};
      }
      const Json& b = summary.at("state_bounds").at(axis);
      return Column{axis, b.at(0).is_null() ? -kInf : b.at(0).get<double>(),
                    b.at(1).is_null() ? kInf : b.at(1).get<double>()};
    };
    std::vector<Column> cols;
    if (series == "angles") cols = {bound("roll", false), bound("pitch", false), bound("yaw", false)};
    if (series == "velocity_xy") cols = {bound("vx", false), bound("vy", false)};
    if (series == "velocity_xz") cols = {bound("vx", false), bound("vz", false)};
    if (series == "position_3d") cols = {bound("x", true), bound("y", true), bound("z", true)};
    if (series == "position_topview") cols = {bound("x", true), bound("y", true)};

    const std::filesystem::path target = out_path ? std::filesystem::path(*out_path) : dir / (series + ".csv");
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    CsvWriter w(target);
    std::vector<std::string> header{"t"};
    for (const Column& c : cols) header.push_back(c.name);
    for (const Column& c : cols) {
      header.push_back(c.name + "_min");
      header.push_back(c.name + "_max");
    }
    w.row(header);
    const int t_col = table.column("t");
    std::vector<int> idx;
    for (const Column& c : cols) idx.push_back(table.column(c.name));
    for (const auto& row : table.rows) {
      std::vector<std::string> cells{row[static_cast<std::size_t>(t_col)]};
      for (int i : idx) cells.push_back(row[static_cast<std::size_t>(i)]);
      for (const Column& c : cols) {
        cells.push_back(format_number(c.lower));
        cells.push_back(format_number(c.upper));
      }
      w.row(cells);
    }
    out << "wrote " << table.rows.size() << " rows to " << target.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

}  // namespace safeplan::cli
