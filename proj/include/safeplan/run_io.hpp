#pragma once

// Run outputs: per-step CSV log, intervention list and JSON summary.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeplan/config.hpp"
#include "safeplan/pipeline.hpp"

namespace safeplan {

/// Shortest round-trip-safe text for a double; infinities as inf / -inf.
inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("missing CSV column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " has no header");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() != t.header.size()) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(t.rows.size()) + " has the wrong width");
    }
  }
  return t;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline std::vector<std::string> trajectory_header() {
  std::vector<std::string> h{"step", "t", "window"};
  for (std::string_view n : kChartNames) h.emplace_back(n);
  for (int i = 0; i < kInputDim; ++i) h.push_back("u_des_" + std::to_string(i));
  for (int i = 0; i < kInputDim; ++i) h.push_back("u_safe_" + std::to_string(i));
  for (const char* n : {"intervened", "fallback", "qp_iterations", "objective"}) h.emplace_back(n);
  return h;
}

inline void write_trajectory_csv(const std::filesystem::path& path, const MissionResult& r) {
  CsvWriter w(path);
  w.row(trajectory_header());
  for (const StepRecord& s : r.steps) {
    std::vector<std::string> cells{std::to_string(s.step), format_number(s.time), std::to_string(s.window)};
    for (int j = 0; j < kChartDim; ++j) cells.push_back(format_number(s.chart[j]));
    for (int i = 0; i < kInputDim; ++i) cells.push_back(format_number(s.u_des[i]));
    for (int i = 0; i < kInputDim; ++i) cells.push_back(format_number(s.u_safe[i]));
    cells.push_back(s.intervened ? "1" : "0");
    cells.push_back(s.fallback ? "1" : "0");
    cells.push_back(std::to_string(s.qp_iterations));
    cells.push_back(format_number(s.objective));
    w.row(cells);
  }
}

inline void write_interventions_csv(const std::filesystem::path& path, const MissionResult& r) {
  CsvWriter w(path);
  std::vector<std::string> header{"step", "t"};
  for (int i = 0; i < kInputDim; ++i) header.push_back("u_des_" + std::to_string(i));
  for (int i = 0; i < kInputDim; ++i) header.push_back("u_safe_" + std::to_string(i));
  header.emplace_back("max_abs_change");
  w.row(header);
  for (const Intervention& iv : r.interventions) {
    std::vector<std::string> cells{std::to_string(iv.step), format_number(iv.step * r.dt)};
    for (int i = 0; i < kInputDim; ++i) cells.push_back(format_number(iv.u_des[i]));
    for (int i = 0; i < kInputDim; ++i) cells.push_back(format_number(iv.u_safe[i]));
    cells.push_back(format_number((iv.u_safe - iv.u_des).cwiseAbs().maxCoeff()));
    w.row(cells);
  }
}

inline Json to_json(const RunSummary& s) {
  auto range = [](const AngleRange& a) { return Json{{"min", a.min}, {"max", a.max}}; };
  return {{"steps", s.steps},
          {"windows", s.windows},
          {"violations", s.violations},
          {"interventions", s.interventions},
          {"intervention_density", s.intervention_density},
          {"fallbacks", s.fallbacks},
          {"goal_error", s.goal_error},
          {"path_length", s.path_length},
          {"roll", range(s.roll)},
          {"pitch", range(s.pitch)},
          {"yaw", range(s.yaw)},
          {"reached_goal", s.reached_goal},
          {"aborted", s.aborted}};
}

inline RunSummary summary_from_json(const Json& j) {
  RunSummary s;
  s.steps = j.at("steps").get<int>();
  s.windows = j.at("windows").get<int>();
  s.violations = j.at("violations").get<int>();
  s.interventions = j.at("interventions").get<int>();
  s.intervention_density = j.at("intervention_density").get<double>();
  s.fallbacks = j.at("fallbacks").get<int>();
  s.goal_error = j.at("goal_error").get<double>();
  s.path_length = j.at("path_length").get<double>();
  auto range = [&](const char* k) { return AngleRange{j.at(k).at("min").get<double>(), j.at(k).at("max").get<double>()}; };
  s.roll = range("roll");
  s.pitch = range("pitch");
  s.yaw = range("yaw");
  s.reached_goal = j.at("reached_goal").get<bool>();
  s.aborted = j.at("aborted").get<bool>();
  return s;
}

inline Json to_json(const RunComparison& c) {
  return {{"a", to_json(c.a)}, {"b", to_json(c.b)}, {"delta", c.delta}};
}

/// Bounds as [lower, upper] with null for an unbounded side.
inline Json bound_pair(double lo, double hi) {
  return {std::isfinite(lo) ? Json(lo) : Json(nullptr), std::isfinite(hi) ? Json(hi) : Json(nullptr)};
}

inline Json run_summary_json(const ScenarioConfig& cfg, const MissionResult& r) {
  Json violations = Json::array();
  for (const ConstraintViolation& v : r.constraint_violations) {
    violations.push_back({{"state_index", v.state_index}, {"kind", v.kind}, {"value", v.value}});
  }
  Json bounds = Json::object();
  for (int j = 0; j < kChartDim; ++j) {
    bounds[kChartNames[j]] = bound_pair(cfg.setup.constraints.lower[j], cfg.setup.constraints.upper[j]);
  }
  const Environment& env = cfg.setup.environment;
  const Vec3 final_position = r.executed_states.back().position;
  return {{"scenario", to_json(cfg)},
          {"filter", r.filter_enabled ? "on" : "off"},
          {"seed", r.seed},
          {"dt", r.dt},
          {"terminal_level", r.terminal_level},
          {"reached_goal", r.reached_goal},
          {"aborted", r.aborted},
          {"abort_reason", r.abort_reason},
          {"final_position", detail::vec_json(final_position)},
          {"summary", to_json(summarize(r))},
          {"window_indices", r.window_indices},
          {"fallback_steps", r.fallback_steps},
          {"violations", violations},
          {"state_bounds", bounds},
          {"workspace", {{"min", detail::vec_json(env.workspace_min)}, {"max", detail::vec_json(env.workspace_max)}}}};
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_run(const std::filesystem::path& dir, const ScenarioConfig& cfg, const MissionResult& r) {
  std::filesystem::create_directories(dir);
  write_trajectory_csv(dir / "trajectory.csv", r);
  write_interventions_csv(dir / "interventions.csv", r);
  write_json(dir / "summary.json", run_summary_json(cfg, r));
}

}  // namespace safeplan
