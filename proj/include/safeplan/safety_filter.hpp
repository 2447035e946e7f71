#pragma once

// Predictive safety filter: a receding-horizon QP over the hover-linearized
// model that returns the admissible first input closest to the desired one,
// with state/input boxes along the horizon and an ellipsoidal terminal set
// certified for the LQR backup law.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeplan/controller.hpp"
#include "safeplan/dynamics.hpp"
#include "safeplan/qp.hpp"
#include "safeplan/trajectory.hpp"

namespace safeplan {

/// Box over the Euler chart; unconstrained coordinates carry +-infinity.
struct ConstraintSet {
  ChartVector lower = ChartVector::Constant(-kInf);
  ChartVector upper = ChartVector::Constant(kInf);

  void validate() const {
    if (!(lower.array() <= upper.array()).all()) {
      throw std::invalid_argument("constraint set requires lower <= upper");
    }
    // Hover (level, at rest) must be strictly interior in every non-position axis.
    for (int j = kVx; j < kChartDim; ++j) {
      if (!(lower[j] < 0.0 && 0.0 < upper[j])) {
        throw std::invalid_argument("hover state must be strictly inside the constraint set (axis " +
                                    std::string(kChartNames[j]) + ")");
      }
    }
  }

  bool bounded(int j) const { return std::isfinite(lower[j]) || std::isfinite(upper[j]); }

  bool contains(const ChartVector& xi, double tol = 0.0) const {
    return ((xi.array() >= lower.array() - tol).all() && (xi.array() <= upper.array() + tol).all());
  }

  /// Finite bounds pulled inwards by margin (never past each other).
  ConstraintSet tightened(double margin) const {
    ConstraintSet out = *this;
    for (int j = 0; j < kChartDim; ++j) {
      const double mid = std::isfinite(lower[j]) && std::isfinite(upper[j]) ? 0.5 * (lower[j] + upper[j]) : 0.0;
      if (std::isfinite(lower[j])) out.lower[j] = std::min(lower[j] + margin, mid);
      if (std::isfinite(upper[j])) out.upper[j] = std::max(upper[j] - margin, mid);
    }
    return out;
  }
};

struct InputSet {
  Vec4 lower = Vec4::Zero();
  Vec4 upper = Vec4::Constant(0.15);

  static InputSet from_params(const QuadrotorParams& p) {
    return {Vec4::Constant(p.rotor_thrust_min), Vec4::Constant(p.rotor_thrust_max)};
  }

  void validate(const ControlInput& hover) const {
    if (!(lower.array() <= upper.array()).all()) throw std::invalid_argument("input set requires lower <= upper");
    if (!((lower.array() < hover.thrusts.array()).all() && (hover.thrusts.array() < upper.array()).all())) {
      throw std::invalid_argument("hover input must be strictly inside the input set");
    }
  }

  bool contains(const Vec4& u, double tol = 0.0) const {
    return ((u.array() >= lower.array() - tol).all() && (u.array() <= upper.array() + tol).all());
  }

  ControlInput clamp(const ControlInput& u) const { return {u.thrusts.cwiseMax(lower).cwiseMin(upper)}; }
};

/// Sublevel set {xi : V(xi) <= level} of the Riccati form around a hover
/// center. Free axes (translation-invariant positions) are minimized out:
/// V(xi) = min over free coordinates of d'Pd with d = xi - center, which is
/// the Schur complement form on the remaining axes.
class TerminalSet {
 public:
  using AxisMask = std::array<bool, kChartDim>;

  TerminalSet() = default;

  TerminalSet(const ChartVector& center, const ChartMatrix& shape, double level, AxisMask free_axes = {})
      : center_(center), shape_(shape), level_(level), free_(free_axes) {
    if (!(level_ > 0.0)) throw std::invalid_argument("terminal set level must be > 0");
    shape_inverse_ = shape_.inverse();
    std::vector<int> f, c;
    for (int j = 0; j < kChartDim; ++j) (free_[j] ? f : c).push_back(j);
    anchor_.setIdentity();
    projected_ = shape_;
    if (!f.empty()) {
      const Eigen::MatrixXd pff = shape_(f, f);
      const Eigen::MatrixXd pfc = shape_(f, c);
      const Eigen::MatrixXd solve = pff.ldlt().solve(pfc);  // P_ff^-1 P_fc
      projected_.setZero();
      projected_(c, c) = shape_(c, c) - pfc.transpose() * solve;
      for (int j : f) anchor_(j, j) = 0.0;
      anchor_(f, c) = -solve;
    }
  }

  const ChartVector& center() const { return center_; }
  const ChartMatrix& shape() const { return shape_; }
  const ChartMatrix& shape_inverse() const { return shape_inverse_; }
  /// Matrix of the quadratic form in value(); zero rows/columns on free axes.
  const ChartMatrix& projected_shape() const { return projected_; }
  double level() const { return level_; }
  const AxisMask& free_axes() const { return free_; }
  bool is_free(int j) const { return free_[j]; }

  ChartVector offset(const ChartVector& xi) const { return chart_error(xi, center_); }

  /// Offset from the nearest admissible center (free coordinates chosen to
  /// minimize the quadratic form).
  ChartVector anchored_offset(const ChartVector& xi) const { return anchor_ * offset(xi); }

  double value(const ChartVector& xi) const {
    const ChartVector d = offset(xi);
    return d.dot(projected_ * d);
  }

  bool contains(const ChartVector& xi, double rel_tol = 1e-9) const {
    return value(xi) <= level_ * (1.0 + rel_tol);
  }

  /// Half-width of the tight axis-aligned outer box (infinite on free axes).
  double support(int j) const { return free_[j] ? kInf : std::sqrt(level_ * shape_inverse_(j, j)); }

  TerminalSet recentered_at(const Vec3& position) const {
    TerminalSet out = *this;
    out.center_.segment<3>(kX) = position;
    return out;
  }

  TerminalSet with_level(double level) const { return TerminalSet(center_, shape_, level, free_); }

 private:
  ChartVector center_ = ChartVector::Zero();
  ChartMatrix shape_ = ChartMatrix::Identity();
  ChartMatrix shape_inverse_ = ChartMatrix::Identity();
  ChartMatrix projected_ = ChartMatrix::Identity();
  ChartMatrix anchor_ = ChartMatrix::Identity();
  double level_ = 1.0;
  AxisMask free_{};
};

/// Position axes with no finite bound; the dynamics are invariant under
/// translations along them.
inline TerminalSet::AxisMask translation_free_axes(const ConstraintSet& c) {
  TerminalSet::AxisMask mask{};
  for (int j = kX; j <= kZ; ++j) mask[j] = !c.bounded(j);
  return mask;
}

/// kappa_f(xi) = u_hover - K * anchored offset. Not clamped.
inline ControlInput backup_input(const LqrDesign& design, const TerminalSet& terminal, const ChartVector& xi) {
  return {design.hover.thrusts - design.gain * terminal.anchored_offset(xi)};
}

/// One-step effect of a constant state-derivative disturbance of magnitude
/// `bound` on velocity and body-rate derivatives, in chart coordinates.
inline ChartVector disturbance_step_bound(double bound, double dt) {
  ChartVector w = ChartVector::Zero();
  w.segment<3>(kX).setConstant(0.5 * dt * dt * bound);
  w.segment<3>(kVx).setConstant(dt * bound);
  w.segment<3>(kRoll).setConstant(0.5 * dt * dt * bound);
  w.segment<3>(kRateP).setConstant(dt * bound);
  return w;
}

struct TerminalSynthesisOptions {
  double disturbance_bound = 0.0;
  int invariance_samples = 10000;
  int bisection_steps = 50;
  std::uint64_t seed = 7;
  TerminalSet::AxisMask free_axes{};
};

struct TerminalCertificate {
  bool containment = false;
  bool input_admissible = false;
  bool invariance = false;
  double containment_limit = 0.0;  // largest level passing containment
  double input_limit = 0.0;        // largest level passing input admissibility
  double worst_invariance_ratio = 0.0;

  bool all() const { return containment && input_admissible && invariance; }
};

class TerminalSetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double containment_limit(const TerminalSet& ts, const ConstraintSet& c) {
  double limit = kInf;
  for (int j = 0; j < kChartDim; ++j) {
    if (!c.bounded(j)) continue;
    if (ts.is_free(j)) return 0.0;  // a free axis cannot be bounded
    const double margin = std::min(c.upper[j] - ts.center()[j], ts.center()[j] - c.lower[j]);
    if (!(margin > 0.0)) return 0.0;
    limit = std::min(limit, margin * margin / ts.shape_inverse()(j, j));
  }
  return limit;
}

inline double input_limit(const TerminalSet& ts, const LqrDesign& d, const InputSet& u) {
  double limit = kInf;
  for (int i = 0; i < kInputDim; ++i) {
    const double margin = std::min(u.upper[i] - d.hover.thrusts[i], d.hover.thrusts[i] - u.lower[i]);
    if (!(margin > 0.0)) return 0.0;
    const Eigen::Matrix<double, 1, kChartDim> k = d.gain.row(i);
    limit = std::min(limit, margin * margin / (k * ts.shape_inverse() * k.transpose())(0, 0));
  }
  return limit;
}

}  // namespace detail

/// Checks the three certificates for `ts` (centered at hover). Invariance is
/// sampled on the boundary of the full ellipsoid: the closed-loop successor
/// plus the worst-case one-step disturbance must remain in the set.
inline TerminalCertificate certify_terminal_set(const TerminalSet& ts, const LqrDesign& design,
                                                const ConstraintSet& c_set, const InputSet& u_set,
                                                const LinearModel& model,
                                                const TerminalSynthesisOptions& opts = {}) {
  TerminalCertificate cert;
  cert.containment_limit = detail::containment_limit(ts, c_set);
  cert.input_limit = detail::input_limit(ts, design, u_set);
  cert.containment = ts.level() <= cert.containment_limit;
  cert.input_admissible = ts.level() <= cert.input_limit;

  const ChartMatrix closed = model.a_matrix - model.b_matrix * design.gain;
  const Eigen::LLT<ChartMatrix> chol(ts.shape());
  const ChartMatrix upper_factor = chol.matrixU();  // P = U'U
  // max over the disturbance box of sqrt(d'Pd) <= sum_j |w_j| * ||U e_j||
  const ChartVector w = disturbance_step_bound(opts.disturbance_bound, model.dt);
  double w_norm = 0.0;
  for (int j = 0; j < kChartDim; ++j) w_norm += w[j] * upper_factor.col(j).norm();

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  const double radius = std::sqrt(ts.level());
  double worst = 0.0;
  for (int s = 0; s < opts.invariance_samples; ++s) {
    ChartVector dir;
    for (int j = 0; j < kChartDim; ++j) dir[j] = normal(rng);
    // d = sqrt(level) * U^-1 dir/|dir| lies on {d'Pd = level}.
    const ChartVector delta = upper_factor.triangularView<Eigen::Upper>().solve(dir.normalized()) * radius;
    const ChartVector next = closed * delta + ts.center();
    const double ratio = (std::sqrt(std::max(ts.value(next), 0.0)) + w_norm) / radius;
    worst = std::max(worst, ratio);
  }
  cert.worst_invariance_ratio = worst;
  cert.invariance = worst <= 1.0;
  return cert;
}

/// Largest level on a bisection over (0, c_max] that passes all three
/// certificates; c_max is the exact containment/input-admissibility limit.
inline TerminalSet terminal_set_synthesis(const LqrDesign& design, const ConstraintSet& c_set,
                                          const InputSet& u_set, const LinearModel& model,
                                          const TerminalSynthesisOptions& opts = {}) {
  const TerminalSet probe(ChartVector::Zero(), design.riccati_solution, 1.0, opts.free_axes);
  const double c_max = std::min(detail::containment_limit(probe, c_set), detail::input_limit(probe, design, u_set));
  if (!(c_max > 0.0) || !std::isfinite(c_max)) {
    throw TerminalSetError("terminal set synthesis: constraints leave no room around hover");
  }
  auto passes = [&](double level) {
    return certify_terminal_set(probe.with_level(level), design, c_set, u_set, model, opts).all();
  };
  if (passes(c_max)) return probe.with_level(c_max);
  double lo = 0.0, hi = c_max;
  for (int i = 0; i < opts.bisection_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (passes(mid)) lo = mid; else hi = mid;
  }
  if (!(lo > 0.0)) throw TerminalSetError("terminal set synthesis: no positive level passes the certificates");
  return probe.with_level(lo);
}

/// Stacked prediction maps x_i = state_maps[i] x_0 + input_maps[i] [u_0; ...; u_{T-1}].
struct CondensedPrediction {
  std::vector<Eigen::MatrixXd> state_maps;
  std::vector<Eigen::MatrixXd> input_maps;
};

inline CondensedPrediction condense(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int horizon) {
  if (horizon < 1) throw std::invalid_argument("condense: horizon must be >= 1");
  const auto n = a.rows(), m = b.cols();
  CondensedPrediction c;
  c.state_maps.push_back(Eigen::MatrixXd::Identity(n, n));
  c.input_maps.push_back(Eigen::MatrixXd::Zero(n, m * horizon));
  for (int i = 1; i <= horizon; ++i) {
    c.state_maps.push_back(a * c.state_maps.back());
    Eigen::MatrixXd g = a * c.input_maps.back();
    g.middleCols((i - 1) * m, m) += b;
    c.input_maps.push_back(std::move(g));
  }
  return c;
}

struct FilterSettings {
  int horizon = 20;
  QpSettings qp;
  double stage_tightening = 0.0;  // finite state bounds shrink by this much per stage
  double regularization = 1e-6;
  double intervention_threshold = 1e-6;
  double terminal_tolerance = 1e-6;  // slack on the exact feasibility checks
  int max_terminal_cuts = 10;
  // Extra stage margins tried, in order, when an intervening plan fails the
  // nonlinear one-step lookahead.
  std::vector<double> lookahead_margins{2e-3, 1e-2, 3e-2};

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("filter horizon must be >= 1");
    if (!(stage_tightening >= 0.0)) throw std::invalid_argument("stage_tightening must be >= 0");
    if (!(regularization >= 0.0)) throw std::invalid_argument("regularization must be >= 0");
    if (max_terminal_cuts < 0) throw std::invalid_argument("max_terminal_cuts must be >= 0");
    for (double m : lookahead_margins) {
      if (!(m >= 0.0)) throw std::invalid_argument("lookahead margins must be >= 0");
    }
  }
};

namespace detail {

// Decision vector: hover-relative inputs [du_0; ...; du_{T-1}].
inline QpProblem assemble_qp(const CondensedPrediction& pred, const ChartVector& x_k, const Vec4& du_des,
                             const ConstraintSet& c_set, const InputSet& u_set, const Vec4& hover,
                             const TerminalSet& terminal, std::span<const ChartVector> cuts,
                             const FilterSettings& s, double extra_margin = 0.0) {
  const int horizon = static_cast<int>(pred.state_maps.size()) - 1;
  const int nv = kInputDim * horizon;
  QpProblem qp;
  qp.hessian = Eigen::MatrixXd::Identity(nv, nv) * (2.0 * s.regularization + 1e-8);
  qp.hessian.topLeftCorner<kInputDim, kInputDim>().diagonal().array() += 2.0;
  qp.linear_term = Eigen::VectorXd::Zero(nv);
  qp.linear_term.head<kInputDim>() = -2.0 * du_des;
  qp.constant = du_des.squaredNorm();

  std::vector<int> state_axes;
  for (int j = 0; j < kChartDim; ++j) {
    if (c_set.bounded(j)) state_axes.push_back(j);
  }
  std::vector<int> terminal_axes;
  for (int j = 0; j < kChartDim; ++j) {
    if (std::isfinite(terminal.support(j))) terminal_axes.push_back(j);
  }
  const int n_state = horizon * static_cast<int>(state_axes.size());
  const int n_terminal = static_cast<int>(terminal_axes.size() + cuts.size());
  const int rows = n_state + nv + n_terminal;
  qp.constraint_matrix = Eigen::MatrixXd::Zero(rows, nv);
  qp.lower.resize(rows);
  qp.upper.resize(rows);

  int r = 0;
  for (int i = 0; i < horizon; ++i) {
    const Eigen::VectorXd free_response = pred.state_maps[i] * x_k;
    const double margin = s.stage_tightening * i + (i > 0 ? extra_margin : 0.0);
    for (int j : state_axes) {
      qp.constraint_matrix.row(r) = pred.input_maps[i].row(j);
      qp.lower[r] = c_set.lower[j] + margin - free_response[j];
      qp.upper[r] = c_set.upper[j] - margin - free_response[j];
      if (qp.lower[r] > qp.upper[r]) qp.lower[r] = qp.upper[r] = 0.5 * (qp.lower[r] + qp.upper[r]);
      ++r;
    }
  }
  qp.blocks.push_back({"state", 0, n_state});

  for (int i = 0; i < horizon; ++i) {
    for (int k = 0; k < kInputDim; ++k) {
      qp.constraint_matrix(r, kInputDim * i + k) = 1.0;
      qp.lower[r] = u_set.lower[k] - hover[k];
      qp.upper[r] = u_set.upper[k] - hover[k];
      ++r;
    }
  }
  qp.blocks.push_back({"input", n_state, nv});

  const Eigen::VectorXd terminal_free = pred.state_maps[horizon] * x_k;
  for (int j : terminal_axes) {
    const double half = terminal.support(j);
    qp.constraint_matrix.row(r) = pred.input_maps[horizon].row(j);
    qp.lower[r] = terminal.center()[j] - half - terminal_free[j];
    qp.upper[r] = terminal.center()[j] + half - terminal_free[j];
    ++r;
  }
  // Supporting half-spaces g'(x_T - center) <= level at boundary points b,
  // with g = S b, normalized.
  for (const ChartVector& b : cuts) {
    const ChartVector g = terminal.projected_shape() * b;
    const double scale = g.norm();
    qp.constraint_matrix.row(r) = g.transpose() * pred.input_maps[horizon] / scale;
    qp.lower[r] = -kInf;
    qp.upper[r] = (terminal.level() - g.dot(chart_error(terminal_free, terminal.center()))) / scale;
    ++r;
  }
  qp.blocks.push_back({"terminal", n_state + nv, n_terminal});
  return qp;
}

inline std::vector<ReferenceSample> padded_window(std::span<const ReferenceSample> ref, int horizon) {
  if (ref.empty()) throw std::invalid_argument("filter: empty reference window");
  std::vector<ReferenceSample> out(ref.begin(), ref.end());
  out.resize(static_cast<std::size_t>(std::max<int>(horizon, static_cast<int>(ref.size()))), ref.back());
  out.resize(static_cast<std::size_t>(horizon));
  return out;
}

}  // namespace detail

/// Condensed QP for one filter step. The terminal set is recentered at the
/// last sample of the reference window.
inline QpProblem build_qp(const LinearModel& model, const ChartVector& x_k, const ControlInput& u_des,
                          std::span<const ReferenceSample> ref_window, const ConstraintSet& c_set,
                          const InputSet& u_set, const TerminalSet& terminal, int horizon,
                          const FilterSettings& settings = {}) {
  const auto window = detail::padded_window(ref_window, horizon);
  const CondensedPrediction pred = condense(model.a_matrix, model.b_matrix, horizon);
  return detail::assemble_qp(pred, x_k, u_des.thrusts - model.operating_input.thrusts, c_set, u_set,
                             model.operating_input.thrusts, terminal.recentered_at(window.back().position), {},
                             settings);
}

struct FilterDiagnostics {
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  double objective = kInf;
  bool fallback = false;
  int terminal_cuts = 0;
  bool completed_by_backup = false;  // QP tail replaced by the backup law
  bool shifted_previous = false;     // previous plan shifted by one step was used
  bool lookahead_passed = false;     // nonlinear next state keeps the shifted plan feasible
  double lookahead_margin = 0.0;     // extra stage margin of the accepted plan
  double terminal_value = kInf;
};

struct FilterOutput {
  ControlInput u_safe;
  bool intervened = false;
  FilterDiagnostics diagnostics;
  Eigen::VectorXd sequence;  // hover-relative inputs over the horizon (empty on fallback)
};

/// Caller-owned state carried between consecutive filter() calls: the last
/// accepted sequence, whose one-step shift is tried when the QP path fails.
struct FilterWorkspace {
  Eigen::VectorXd previous;

  void reset() { previous.resize(0); }
};

class SafetyFilter {
 public:
  /// With `plant` set, intervening plans are screened by one nonlinear step.
  SafetyFilter(LinearModel model, LqrDesign design, ConstraintSet c_set, InputSet u_set, TerminalSet terminal,
               FilterSettings settings, std::optional<QuadrotorParams> plant = std::nullopt)
      : model_(std::move(model)),
        design_(std::move(design)),
        c_set_(std::move(c_set)),
        u_set_(std::move(u_set)),
        terminal_(std::move(terminal)),
        settings_(std::move(settings)),
        plant_(std::move(plant)) {
    settings_.validate();
    c_set_.validate();
    u_set_.validate(model_.operating_input);
    prediction_ = condense(model_.a_matrix, model_.b_matrix, settings_.horizon);
  }

  int horizon() const { return settings_.horizon; }
  const LinearModel& model() const { return model_; }
  const LqrDesign& design() const { return design_; }
  const ConstraintSet& constraints() const { return c_set_; }
  const InputSet& inputs() const { return u_set_; }
  const TerminalSet& terminal() const { return terminal_; }
  const FilterSettings& settings() const { return settings_; }

  TerminalSet terminal_for(std::span<const ReferenceSample> ref_window) const {
    return terminal_.recentered_at(detail::padded_window(ref_window, horizon()).back().position);
  }

  QpProblem build_qp(const ChartVector& x_k, const ControlInput& u_des, const TerminalSet& terminal,
                     std::span<const ChartVector> cuts = {}, double extra_margin = 0.0) const {
    return detail::assemble_qp(prediction_, x_k, u_des.thrusts - hover(), c_set_, u_set_, hover(), terminal, cuts,
                               settings_, extra_margin);
  }

  /// Predicted chart states x_0 .. x_T for a hover-relative input sequence.
  std::vector<ChartVector> predict(const ChartVector& x_k, const Eigen::VectorXd& du) const {
    std::vector<ChartVector> xs;
    for (int i = 0; i <= horizon(); ++i) xs.push_back(prediction_.state_maps[i] * x_k + prediction_.input_maps[i] * du);
    return xs;
  }

  /// u(0) = u_des followed by the backup law on the linear model.
  Eigen::VectorXd backup_rollout(const ChartVector& x_k, const ControlInput& u_des, const TerminalSet& terminal) const {
    Eigen::VectorXd du(kInputDim * horizon());
    ChartVector x = x_k;
    for (int i = 0; i < horizon(); ++i) {
      const Vec4 u = i == 0 ? u_des.thrusts : backup_input(design_, terminal, x).thrusts;
      du.segment<kInputDim>(kInputDim * i) = u - hover();
      x = model_.predict(x, u - hover());
    }
    return du;
  }

  /// Stage constraints at i in [0, T-1], inputs, and the exact terminal set at T.
  bool sequence_feasible(const ChartVector& x_k, const Eigen::VectorXd& du, const TerminalSet& terminal,
                         double tol = 1e-6) const {
    const auto xs = predict(x_k, du);
    for (int i = 0; i < horizon(); ++i) {
      const ConstraintSet stage = c_set_.tightened(settings_.stage_tightening * i);
      if (!stage.contains(xs[i], tol)) return false;
      if (!u_set_.contains(du.segment<kInputDim>(kInputDim * i) + hover(), tol)) return false;
    }
    return terminal.value(xs.back()) <= terminal.level() + tol;
  }

  /// Drops the first input of `du` and appends the backup law at the
  /// predicted state x_{T-1}.
  Eigen::VectorXd shifted(const ChartVector& x_k, const Eigen::VectorXd& du, const TerminalSet& terminal) const {
    const int n = kInputDim * (horizon() - 1);
    Eigen::VectorXd out(kInputDim * horizon());
    out.head(n) = du.tail(n);
    out.tail<kInputDim>().setZero();
    const ChartVector last = predict(x_k, out)[static_cast<std::size_t>(horizon() - 1)];
    out.tail<kInputDim>() = backup_input(design_, terminal, last).thrusts - hover();
    return out;
  }

  /// Backup law from x_k for the whole horizon on the linear model.
  Eigen::VectorXd backup_sequence(const ChartVector& x_k, const TerminalSet& terminal) const {
    return backup_rollout(x_k, backup_input(design_, terminal, x_k), terminal);
  }

  /// True if applying the first input to the nonlinear plant lands where the
  /// shifted sequence, or the backup law alone, is still feasible. Always
  /// true without a plant.
  bool lookahead_ok(const State& x, const Eigen::VectorXd& du, const TerminalSet& terminal) const {
    if (!plant_) return true;
    const State next = step(x, ControlInput{hover() + du.head<kInputDim>()}, *plant_, model_.dt);
    const ChartVector xi = to_chart(next);
    const double tol = settings_.terminal_tolerance;
    return sequence_feasible(xi, shifted(xi, du, terminal), terminal, tol) ||
           sequence_feasible(xi, backup_sequence(xi, terminal), terminal, tol);
  }

  FilterOutput filter(const State& x, const ControlInput& u_des, std::span<const ReferenceSample> ref_window,
                      FilterWorkspace* workspace = nullptr) const {
    if (!x.position.allFinite() || !x.velocity.allFinite() || !x.body_rates.allFinite()) {
      throw std::invalid_argument("filter: non-finite state");
    }
    const ChartVector xi = to_chart(x);
    const TerminalSet terminal = terminal_for(ref_window);
    const double tol = settings_.terminal_tolerance;
    FilterOutput out;

    // A solved relaxation is accepted if its own sequence meets the exact
    // terminal set, or if its first input followed by the backup law does.
    bool completed = false;
    auto certify = [&](const QpResult& r) -> std::optional<Eigen::VectorXd> {
      completed = false;
      if (!r.solved()) return std::nullopt;
      if (sequence_feasible(xi, r.x, terminal, tol)) return r.x;
      Eigen::VectorXd tail = backup_rollout(xi, ControlInput{hover() + r.x.head<kInputDim>()}, terminal);
      if (!sequence_feasible(xi, tail, terminal, tol)) return std::nullopt;
      completed = true;
      return tail;
    };

    Eigen::VectorXd warm = Eigen::VectorXd::Zero(kInputDim * horizon());
    warm.head<kInputDim>() = u_des.thrusts - hover();
    // One relaxation plus terminal cuts. The outer box may admit a terminal
    // state outside the ellipsoid; it is cut off at its radial projection
    // onto the boundary and the QP re-solved.
    auto solve_with = [&](double extra, bool record) -> std::optional<Eigen::VectorXd> {
      QpResult res = solve_qp(build_qp(xi, u_des, terminal, {}, extra), settings_.qp, &warm);
      out.diagnostics.iterations += res.iterations;
      std::optional<Eigen::VectorXd> found = certify(res);
      std::vector<ChartVector> cuts;
      while (!found && res.solved() && static_cast<int>(cuts.size()) < settings_.max_terminal_cuts) {
        const ChartVector end = predict(xi, res.x).back();
        const double v = terminal.value(end);
        if (!(v > terminal.level())) break;
        cuts.push_back(terminal.offset(end) * std::sqrt(terminal.level() / v));
        res = solve_qp(build_qp(xi, u_des, terminal, cuts, extra), settings_.qp, &res.x);
        out.diagnostics.iterations += res.iterations;
        found = certify(res);
      }
      if (record) {
        out.diagnostics.terminal_cuts = static_cast<int>(cuts.size());
        out.diagnostics.status = res.status;
        out.diagnostics.objective = res.objective;
      }
      return found;
    };

    std::optional<Eigen::VectorXd> accepted = solve_with(0.0, true);
    out.diagnostics.completed_by_backup = completed;
    std::optional<Eigen::VectorXd> previous;
    if (workspace && workspace->previous.size() == kInputDim * horizon()) {
      Eigen::VectorXd candidate = shifted(xi, workspace->previous, terminal);
      if (sequence_feasible(xi, candidate, terminal, tol)) previous = std::move(candidate);
    }
    auto take_previous = [&] {
      accepted = previous;
      out.diagnostics.shifted_previous = true;
      out.diagnostics.completed_by_backup = false;
    };
    if (accepted && lookahead_ok(x, *accepted, terminal)) {
      out.diagnostics.lookahead_passed = true;
    } else if (accepted) {
      // Screen the intervention: tighter re-solves first, then the shifted
      // previous plan, else keep the plan that passed the linear checks.
      for (double m : settings_.lookahead_margins) {
        std::optional<Eigen::VectorXd> c = solve_with(m, false);
        if (c && lookahead_ok(x, *c, terminal)) {
          accepted = std::move(c);
          out.diagnostics.completed_by_backup = completed;
          out.diagnostics.lookahead_margin = m;
          out.diagnostics.lookahead_passed = true;
          break;
        }
      }
      if (!out.diagnostics.lookahead_passed && previous && lookahead_ok(x, *previous, terminal)) {
        take_previous();
        out.diagnostics.lookahead_passed = true;
      }
    } else if (previous) {
      take_previous();
      out.diagnostics.lookahead_passed = lookahead_ok(x, *previous, terminal);
    }

    if (accepted) {
      out.sequence = std::move(*accepted);
      out.u_safe.thrusts = hover() + out.sequence.head<kInputDim>();
      if (out.diagnostics.shifted_previous || out.diagnostics.lookahead_margin > 0.0) {
        out.diagnostics.objective = (out.u_safe.thrusts - u_des.thrusts).squaredNorm();
      }
      out.diagnostics.terminal_value = terminal.value(predict(xi, out.sequence).back());
    } else {
      out.u_safe = u_set_.clamp(backup_input(design_, terminal, xi));
      out.diagnostics.fallback = true;
      out.diagnostics.terminal_value = terminal.value(xi);
    }
    if (workspace) {
      if (out.diagnostics.fallback) {
        workspace->reset();
      } else {
        workspace->previous = out.sequence;
      }
    }
    out.intervened = (out.u_safe.thrusts - u_des.thrusts).cwiseAbs().maxCoeff() > settings_.intervention_threshold;
    return out;
  }

 private:
  const Vec4& hover() const { return model_.operating_input.thrusts; }

  LinearModel model_;
  LqrDesign design_;
  ConstraintSet c_set_;
  InputSet u_set_;
  TerminalSet terminal_;
  FilterSettings settings_;
  std::optional<QuadrotorParams> plant_;
  CondensedPrediction prediction_;
};

}  // namespace safeplan
