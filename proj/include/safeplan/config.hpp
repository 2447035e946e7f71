#pragma once

// Scenario files: strict JSON schema with unknown-key rejection and
// line-anchored error messages, plus a canonical serializer.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "safeplan/pipeline.hpp"

namespace safeplan {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::string output_dir;  // empty: runs/<name>
  MissionSetup setup;
  MissionConfig mission;
  std::uint64_t mission_seed = 1;

  std::string resolved_output_dir() const { return output_dir.empty() ? "runs/" + name : output_dir; }
};

namespace detail {

// Character iterator that counts the newlines it has stepped over.
class LineCountingIterator {
 public:
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  LineCountingIterator() = default;
  LineCountingIterator(const char* p, int* newlines) : p_(p), newlines_(newlines) {}

  reference operator*() const { return *p_; }
  LineCountingIterator& operator++() {
    if (*p_ == '\n') ++*newlines_;
    ++p_;
    return *this;
  }
  LineCountingIterator operator++(int) {
    LineCountingIterator old = *this;
    ++*this;
    return old;
  }
  bool operator==(const LineCountingIterator& o) const { return p_ == o.p_; }

 private:
  const char* p_ = nullptr;
  int* newlines_ = nullptr;
};

// DOM builder that also records the source line of every JSON pointer
// (object members at their key, array elements at their value).
class LocatingSax {
 public:
  LocatingSax(Json& root, const int* newlines) : dom_(root, true), newlines_(newlines) {}

  std::map<std::string, int> lines;

  bool null() { return value(), dom_.null(); }
  bool boolean(bool v) { return value(), dom_.boolean(v); }
  bool number_integer(Json::number_integer_t v) { return value(), dom_.number_integer(v); }
  bool number_unsigned(Json::number_unsigned_t v) { return value(), dom_.number_unsigned(v); }
  bool number_float(Json::number_float_t v, const Json::string_t& s) { return value(), dom_.number_float(v, s); }
  bool string(Json::string_t& v) { return value(), dom_.string(v); }
  bool binary(Json::binary_t& v) { return value(), dom_.binary(v); }
  bool start_object(std::size_t n) {
    open(false);
    return dom_.start_object(n);
  }
  bool key(Json::string_t& k) {
    frames_.back().key = k;
    lines[pointer()] = line();
    return dom_.key(k);
  }
  bool end_object() {
    close();
    return dom_.end_object();
  }
  bool start_array(std::size_t n) {
    open(true);
    return dom_.start_array(n);
  }
  bool end_array() {
    close();
    return dom_.end_array();
  }
  // Recorded instead of thrown so the caller can map the position to a line.
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) {
    error_position = pos;
    error_message = ex.what();
    return false;
  }

  std::optional<std::size_t> error_position;
  std::string error_message;

 private:
  struct Frame {
    bool array = false;
    std::string key;
    std::size_t index = 0;
  };

  int line() const { return *newlines_ + 1; }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  std::string pointer() const {
    std::string p;
    for (const Frame& f : frames_) p += "/" + (f.array ? std::to_string(f.index) : escape(f.key));
    return p;
  }

  void value() {
    if (frames_.empty()) {
      lines[""] = line();
      return;
    }
    if (frames_.back().array) {
      lines.emplace(pointer(), line());
      ++frames_.back().index;
    }
  }

  void open(bool array) {
    if (frames_.empty()) {
      lines[""] = line();
    } else if (frames_.back().array) {
      lines.emplace(pointer(), line());
    }
    frames_.push_back({array, {}, 0});
  }

  void close() {
    frames_.pop_back();
    if (!frames_.empty() && frames_.back().array) ++frames_.back().index;
  }

  nlohmann::detail::json_sax_dom_parser<Json> dom_;
  const int* newlines_;
  std::vector<Frame> frames_;
};

struct LocatedJson {
  Json value;
  std::map<std::string, int> lines;

  // Line of the pointer, or of its nearest recorded ancestor.
  int line_of(std::string pointer) const {
    while (true) {
      if (auto it = lines.find(pointer); it != lines.end()) return it->second;
      const auto slash = pointer.rfind('/');
      if (slash == std::string::npos) return 0;
      pointer.erase(slash);
    }
  }
};

inline LocatedJson parse_located(const std::string& text) {
  LocatedJson out;
  int newlines = 0;
  LocatingSax sax(out.value, &newlines);
  Json::sax_parse(LineCountingIterator(text.data(), &newlines),
                  LineCountingIterator(text.data() + text.size(), &newlines), &sax);
  if (sax.error_position) {
    // Positions count characters read, so the offending one is at pos - 1.
    const std::size_t upto = std::min<std::size_t>(*sax.error_position > 0 ? *sax.error_position - 1 : 0, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    std::string msg = sax.error_message;
    // Drop the library prefix, keep its description.
    if (const auto colon = msg.find(": "); colon != std::string::npos) msg = msg.substr(colon + 2);
    throw ConfigError(line, "invalid JSON: " + msg);
  }
  out.lines = std::move(sax.lines);
  return out;
}

class Reader {
 public:
  Reader(const LocatedJson& doc, const Json& node, std::string pointer)
      : doc_(doc), node_(node), pointer_(std::move(pointer)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const std::string p = key.empty() ? pointer_ : pointer_ + "/" + key;
    throw ConfigError(doc_.line_of(p), message + " (at " + (p.empty() ? "/" : p) + ")");
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    if (!node_.is_object()) fail("", "expected an object");
    for (const auto& [k, v] : node_.items()) {
      bool known = false;
      for (const char* allowed : keys) known = known || k == allowed;
      if (!known) fail(k, "unknown key '" + k + "'");
    }
  }

  bool has(const char* key) const { return node_.contains(key); }

  Reader child(const char* key) const {
    static const Json kEmpty = Json::object();
    if (!has(key)) return Reader(doc_, kEmpty, pointer_ + "/" + key);
    const Json& n = node_.at(key);
    if (!n.is_object()) fail(key, "expected an object");
    return Reader(doc_, n, pointer_ + "/" + key);
  }

  const Json& raw(const char* key) const { return node_.at(key); }
  const std::string& pointer() const { return pointer_; }
  const LocatedJson& doc() const { return doc_; }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const Json& v = node_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const char* key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const Json& v = node_.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const Json& v = node_.at(key);
    if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const Json& v = node_.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  Eigen::VectorXd vector(const char* key, const Eigen::VectorXd& fallback) const {
    if (!has(key)) return fallback;
    return vector_value(node_.at(key), key, fallback.size());
  }

  Eigen::VectorXd vector_value(const Json& v, const std::string& key, Eigen::Index size) const {
    if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != size) {
      fail(key, "expected an array of " + std::to_string(size) + " numbers");
    }
    Eigen::VectorXd out(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      const Json& e = v[static_cast<std::size_t>(i)];
      if (!e.is_number()) fail(key + "/" + std::to_string(i), "expected a number");
      out[i] = e.get<double>();
    }
    return out;
  }

  Reader(const Reader&) = default;

 private:
  const LocatedJson& doc_;
  const Json& node_;
  std::string pointer_;
};

// Runs a validate() call and reports its error at `key`, or, with an empty
// key, at the field the message starts with when the section has it.
template <class F>
void validated(const Reader& r, const std::string& key, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    if (key.empty()) {
      const std::string field = msg.substr(0, msg.find(' '));
      if (!field.empty() && r.has(field.c_str())) r.fail(field, msg);
    }
    r.fail(key, msg);
  }
}

inline Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const std::string& text) {
  const detail::LocatedJson doc = detail::parse_located(text);
  const detail::Reader root(doc, doc.value, "");
  root.allow_only({"name", "output_dir", "quadrotor", "environment", "planner", "smoothing", "lqr", "constraints",
                   "filter", "terminal_set", "mission", "seeds"});
  ScenarioConfig cfg;
  cfg.name = root.text("name", cfg.name);
  if (cfg.name.empty()) root.fail("name", "name must not be empty");
  cfg.output_dir = root.text("output_dir", "");

  {
    const auto r = root.child("quadrotor");
    r.allow_only({"mass", "inertia", "arm_length", "torque_coefficient", "gravity", "rotor_thrust_min",
                  "rotor_thrust_max"});
    QuadrotorParams& q = cfg.setup.quadrotor;
    q.mass = r.number("mass", q.mass);
    q.inertia_diag = r.vector("inertia", q.inertia_diag);
    q.arm_length = r.number("arm_length", q.arm_length);
    q.torque_coefficient = r.number("torque_coefficient", q.torque_coefficient);
    q.gravity = r.number("gravity", q.gravity);
    q.rotor_thrust_min = r.number("rotor_thrust_min", q.rotor_thrust_min);
    q.rotor_thrust_max = r.number("rotor_thrust_max", q.rotor_thrust_max);
    detail::validated(r, "", [&] { q.validate(); });
  }
  {
    const auto r = root.child("environment");
    r.allow_only({"workspace_min", "workspace_max", "robot_radius", "obstacles"});
    Environment& e = cfg.setup.environment;
    e.workspace_min = r.vector("workspace_min", Vec3(-1.0, -1.0, -1.0));
    e.workspace_max = r.vector("workspace_max", Vec3(1.0, 1.0, 1.0));
    e.robot_radius = r.number("robot_radius", 0.0);
    if (r.has("obstacles")) {
      const Json& list = r.raw("obstacles");
      if (!list.is_array()) r.fail("obstacles", "expected an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string key = "obstacles/" + std::to_string(i);
        if (!list[i].is_object()) r.fail(key, "expected an object");
        const detail::Reader o(doc, list[i], r.pointer() + "/" + key);
        o.allow_only({"min", "max"});
        if (!o.has("min") || !o.has("max")) o.fail("", "obstacle needs 'min' and 'max'");
        Aabb box{o.vector("min", Vec3::Zero()), o.vector("max", Vec3::Zero())};
        detail::validated(r, key.c_str(), [&] { box.validate(); });
        e.obstacles.push_back(box);
      }
    }
    detail::validated(r, "", [&] { e.validate(); });
  }
  {
    const auto r = root.child("planner");
    r.allow_only({"max_iterations", "goal_tolerance", "steer_step", "gamma", "goal_bias", "collision_resolution"});
    PlannerParams& p = cfg.setup.planner;
    p.max_iterations = static_cast<int>(r.integer("max_iterations", p.max_iterations));
    p.goal_tolerance = r.number("goal_tolerance", p.goal_tolerance);
    p.steer_step = r.number("steer_step", p.steer_step);
    p.gamma = r.number("gamma", p.gamma);
    p.goal_bias = r.number("goal_bias", p.goal_bias);
    p.collision_resolution = r.number("collision_resolution", p.collision_resolution);
    detail::validated(r, "", [&] { p.validate(); });
  }
  {
    const auto r = root.child("smoothing");
    r.allow_only({"cruise_speed", "ramp_acceleration"});
    SmoothingParams& s = cfg.setup.smoothing;
    s.cruise_speed = r.number("cruise_speed", s.cruise_speed);
    s.ramp_acceleration = r.number("ramp_acceleration", s.ramp_acceleration);
    detail::validated(r, "", [&] { s.validate(); });
  }
  {
    const auto r = root.child("lqr");
    r.allow_only({"q_weights", "r_weights"});
    LqrWeights& w = cfg.setup.lqr;
    w.q = r.vector("q_weights", w.q);
    w.r = r.vector("r_weights", w.r);
    detail::validated(r, "", [&] { w.validate(); });
  }
  {
    const auto r = root.child("constraints");
    r.allow_only({"state_bounds", "input_bounds", "stage_tightening"});
    ConstraintSet& c = cfg.setup.constraints;
    if (r.has("state_bounds")) {
      const auto b = r.child("state_bounds");
      for (const auto& [axis, value] : r.raw("state_bounds").items()) {
        const int j = chart_index(axis);
        if (j < 0) b.fail(axis, "unknown state axis '" + axis + "'");
        const Eigen::VectorXd lohi = b.vector_value(value, axis, 2);
        if (!(lohi[0] <= lohi[1])) b.fail(axis, "bounds must satisfy lower <= upper");
        c.lower[j] = lohi[0];
        c.upper[j] = lohi[1];
      }
    }
    detail::validated(r, "", [&] { c.validate(); });
    const QuadrotorParams& q = cfg.setup.quadrotor;
    const Eigen::VectorXd ub = r.vector("input_bounds", Eigen::Vector2d(q.rotor_thrust_min, q.rotor_thrust_max));
    if (!(ub[0] <= ub[1])) r.fail("input_bounds", "bounds must satisfy lower <= upper");
    cfg.setup.inputs = {Vec4::Constant(ub[0]), Vec4::Constant(ub[1])};
    detail::validated(r, "input_bounds", [&] { cfg.setup.inputs.validate(hover_input(q)); });
    cfg.setup.filter.stage_tightening = r.number("stage_tightening", 0.0);
  }
  {
    const auto r = root.child("filter");
    r.allow_only({"tolerance", "max_iterations", "regularization", "max_terminal_cuts"});
    FilterSettings& f = cfg.setup.filter;
    f.qp.tolerance = r.number("tolerance", f.qp.tolerance);
    f.qp.max_iterations = static_cast<int>(r.integer("max_iterations", f.qp.max_iterations));
    f.regularization = r.number("regularization", f.regularization);
    f.max_terminal_cuts = static_cast<int>(r.integer("max_terminal_cuts", f.max_terminal_cuts));
    if (!(f.qp.tolerance > 0.0)) r.fail("tolerance", "tolerance must be > 0");
    if (f.qp.max_iterations < 1) r.fail("max_iterations", "max_iterations must be >= 1");
    detail::validated(r, "", [&] { f.validate(); });
  }
  {
    const auto r = root.child("terminal_set");
    r.allow_only({"invariance_samples", "bisection_steps"});
    TerminalSynthesisOptions& t = cfg.setup.terminal;
    t.invariance_samples = static_cast<int>(r.integer("invariance_samples", t.invariance_samples));
    t.bisection_steps = static_cast<int>(r.integer("bisection_steps", t.bisection_steps));
    if (t.invariance_samples < 1) r.fail("invariance_samples", "invariance_samples must be >= 1");
    if (t.bisection_steps < 1) r.fail("bisection_steps", "bisection_steps must be >= 1");
  }
  {
    const auto r = root.child("mission");
    r.allow_only({"start", "goal", "horizon", "control_frequency", "goal_region_radius", "max_windows",
                  "disturbance_bound", "subgoal_search_radius"});
    if (!r.has("start")) r.fail("", "mission.start is required");
    if (!r.has("goal")) r.fail("", "mission.goal is required");
    MissionConfig& m = cfg.mission;
    m.start = r.vector("start", Vec3::Zero());
    m.goal = r.vector("goal", Vec3::Zero());
    m.horizon = static_cast<int>(r.integer("horizon", m.horizon));
    m.control_frequency = r.number("control_frequency", m.control_frequency);
    m.goal_region_radius = r.number("goal_region_radius", m.goal_region_radius);
    m.max_windows = static_cast<int>(r.integer("max_windows", m.max_windows));
    m.disturbance_bound = r.number("disturbance_bound", m.disturbance_bound);
    m.subgoal_search_radius = r.number("subgoal_search_radius", m.subgoal_search_radius);
    detail::validated(r, "", [&] { m.validate(); });
    const Environment& env = cfg.setup.environment;
    if (!env.is_free(m.start)) r.fail("start", "start is not in free space");
    if (!env.is_free(m.goal)) r.fail("goal", "goal is not in free space");
  }
  {
    const auto r = root.child("seeds");
    r.allow_only({"mission", "terminal_set"});
    cfg.mission_seed = r.unsigned_integer("mission", cfg.mission_seed);
    cfg.setup.terminal.seed = r.unsigned_integer("terminal_set", cfg.setup.terminal.seed);
  }
  return cfg;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.line(), path.string() + ": " + std::string(e.what()));
  }
}

/// Canonical form: every field present, keys in sorted order.
inline Json to_json(const ScenarioConfig& cfg) {
  using detail::vec_json;
  const MissionSetup& s = cfg.setup;
  Json j;
  j["name"] = cfg.name;
  j["output_dir"] = cfg.output_dir;
  j["quadrotor"] = {{"mass", s.quadrotor.mass},
                    {"inertia", vec_json(s.quadrotor.inertia_diag)},
                    {"arm_length", s.quadrotor.arm_length},
                    {"torque_coefficient", s.quadrotor.torque_coefficient},
                    {"gravity", s.quadrotor.gravity},
                    {"rotor_thrust_min", s.quadrotor.rotor_thrust_min},
                    {"rotor_thrust_max", s.quadrotor.rotor_thrust_max}};
  Json obstacles = Json::array();
  for (const Aabb& b : s.environment.obstacles) obstacles.push_back({{"min", vec_json(b.min)}, {"max", vec_json(b.max)}});
  j["environment"] = {{"workspace_min", vec_json(s.environment.workspace_min)},
                      {"workspace_max", vec_json(s.environment.workspace_max)},
                      {"robot_radius", s.environment.robot_radius},
                      {"obstacles", obstacles}};
  j["planner"] = {{"max_iterations", s.planner.max_iterations},
                  {"goal_tolerance", s.planner.goal_tolerance},
                  {"steer_step", s.planner.steer_step},
                  {"gamma", s.planner.gamma},
                  {"goal_bias", s.planner.goal_bias},
                  {"collision_resolution", s.planner.collision_resolution}};
  j["smoothing"] = {{"cruise_speed", s.smoothing.cruise_speed}, {"ramp_acceleration", s.smoothing.ramp_acceleration}};
  j["lqr"] = {{"q_weights", vec_json(s.lqr.q)}, {"r_weights", vec_json(s.lqr.r)}};
  Json bounds = Json::object();
  for (int k = 0; k < kChartDim; ++k) {
    if (s.constraints.bounded(k)) bounds[kChartNames[k]] = {s.constraints.lower[k], s.constraints.upper[k]};
  }
  j["constraints"] = {{"state_bounds", bounds},
                      {"input_bounds", {s.inputs.lower[0], s.inputs.upper[0]}},
                      {"stage_tightening", s.filter.stage_tightening}};
  j["filter"] = {{"tolerance", s.filter.qp.tolerance},
                 {"max_iterations", s.filter.qp.max_iterations},
                 {"regularization", s.filter.regularization},
                 {"max_terminal_cuts", s.filter.max_terminal_cuts}};
  j["terminal_set"] = {{"invariance_samples", s.terminal.invariance_samples},
                       {"bisection_steps", s.terminal.bisection_steps}};
  j["mission"] = {{"start", vec_json(cfg.mission.start)},
                  {"goal", vec_json(cfg.mission.goal)},
                  {"horizon", cfg.mission.horizon},
                  {"control_frequency", cfg.mission.control_frequency},
                  {"goal_region_radius", cfg.mission.goal_region_radius},
                  {"max_windows", cfg.mission.max_windows},
                  {"disturbance_bound", cfg.mission.disturbance_bound},
                  {"subgoal_search_radius", cfg.mission.subgoal_search_radius}};
  j["seeds"] = {{"mission", cfg.mission_seed}, {"terminal_set", s.terminal.seed}};
  return j;
}

inline std::string serialize(const ScenarioConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace safeplan
