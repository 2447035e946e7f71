#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "safeplan/pipeline.hpp"
#include "test_support.hpp"

namespace safeplan {
namespace {

const MissionContext& ctx() { return test::maze_context(); }
const SafetyFilter& filt() { return *ctx().filter; }
const ConstraintSet& bounds() { return ctx().setup.constraints; }

std::vector<ReferenceSample> hover_window(const Vec3& p) {
  return std::vector<ReferenceSample>(static_cast<std::size_t>(filt().horizon()), {p, Vec3::Zero(), 0.0});
}

// Near-hover chart state scaled by `s` relative to the constraint box.
ChartVector random_chart(std::mt19937_64& rng, const Vec3& center, double s) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ChartVector xi = ChartVector::Zero();
  xi.segment<3>(kX) = center + 0.05 * s * Vec3(u(rng), u(rng), u(rng));
  for (int j = kVx; j <= kVz; ++j) xi[j] = 0.2 * s * u(rng);
  for (int j = kRoll; j <= kYaw; ++j) {
    const double half = std::isfinite(bounds().upper[j]) ? bounds().upper[j] : 0.2;
    xi[j] = 0.8 * s * half * u(rng);
  }
  for (int j = kRateP; j <= kRateR; ++j) xi[j] = 0.5 * s * u(rng);
  return xi;
}

TEST(ConstraintSet, TighteningNeverCrosses) {
  const ConstraintSet t = bounds().tightened(10.0);
  for (int j = 0; j < kChartDim; ++j) EXPECT_LE(t.lower[j], t.upper[j]);
  const ConstraintSet small = bounds().tightened(1e-4);
  EXPECT_NEAR(small.upper[kPitch], bounds().upper[kPitch] - 1e-4, 1e-15);
  EXPECT_EQ(small.upper[kX], bounds().upper[kX]);
}

TEST(InputSet, ClampAndContains) {
  const InputSet& u = ctx().setup.inputs;
  const ControlInput c = u.clamp({Vec4(-1.0, 0.05, 1.0, 0.1)});
  EXPECT_TRUE(u.contains(c.thrusts));
  EXPECT_EQ(c.thrusts[0], u.lower[0]);
  EXPECT_EQ(c.thrusts[2], u.upper[2]);
  EXPECT_EQ(c.thrusts[1], 0.05);
}

TEST(TerminalSet, SynthesizedSetPassesCertificates) {
  const TerminalCertificate cert =
      certify_terminal_set(ctx().terminal, ctx().design, bounds(), ctx().setup.inputs, ctx().model, ctx().setup.terminal);
  EXPECT_TRUE(cert.containment);
  EXPECT_TRUE(cert.input_admissible);
  EXPECT_TRUE(cert.invariance);
  EXPECT_LE(cert.worst_invariance_ratio, 1.0);
  EXPECT_GT(ctx().terminal.level(), 0.0);
}

TEST(TerminalSet, SupportsFitInsideTheBox) {
  const TerminalSet& ts = ctx().terminal;
  for (int j = 0; j < kChartDim; ++j) {
    if (ts.is_free(j)) {
      EXPECT_FALSE(bounds().bounded(j));
      EXPECT_EQ(ts.support(j), kInf);
      continue;
    }
    EXPECT_LE(ts.support(j), bounds().upper[j] + 1e-12) << kChartNames[j];
    EXPECT_LE(-ts.support(j), -bounds().lower[j] + 1e-12) << kChartNames[j];
  }
}

TEST(TerminalSet, CenterIsInside) {
  const TerminalSet ts = ctx().terminal.recentered_at(Vec3(0.4, -0.2, 0.7));
  EXPECT_EQ(ts.value(ts.center()), 0.0);
  EXPECT_TRUE(ts.contains(ts.center()));
}

TEST(TerminalSet, ValueIgnoresFreeAxes) {
  std::mt19937_64 rng(61);
  const TerminalSet& ts = ctx().terminal;
  for (int i = 0; i < 100; ++i) {
    ChartVector xi = random_chart(rng, Vec3::Zero(), 0.5);
    const double v = ts.value(xi);
    xi.segment<3>(kX) += Vec3(0.3, -1.0, 2.0);
    EXPECT_NEAR(ts.value(xi), v, 1e-9 * std::max(1.0, v));
    // The anchored offset attains the projected value in the full quadratic form.
    const ChartVector d = ts.anchored_offset(xi);
    EXPECT_NEAR(d.dot(ts.shape() * d), v, 1e-9 * std::max(1.0, v));
  }
}

TEST(TerminalSet, HalvingBoundsShrinksLevel) {
  ConstraintSet half = bounds();
  for (int j = 0; j < kChartDim; ++j) {
    if (!bounds().bounded(j)) continue;
    const double mid = 0.5 * (bounds().lower[j] + bounds().upper[j]);
    half.lower[j] = mid - 0.5 * (mid - bounds().lower[j]);
    half.upper[j] = mid + 0.5 * (bounds().upper[j] - mid);
  }
  const TerminalSet smaller =
      terminal_set_synthesis(ctx().design, half, ctx().setup.inputs, ctx().model, ctx().setup.terminal);
  EXPECT_LT(smaller.level(), ctx().terminal.level());
}

TEST(TerminalSet, BackupLawKeepsBoundaryStatesInside) {
  std::mt19937_64 rng(62);
  std::normal_distribution<double> n;
  const TerminalSet& ts = ctx().terminal;
  const Eigen::LLT<ChartMatrix> chol(ts.shape());
  const ChartMatrix u = chol.matrixU();
  for (int trial = 0; trial < 20; ++trial) {
    ChartVector dir;
    for (int j = 0; j < kChartDim; ++j) dir[j] = n(rng);
    ChartVector xi = u.triangularView<Eigen::Upper>().solve(dir.normalized()) * std::sqrt(ts.level());
    for (int k = 0; k < 1000; ++k) {
      const Vec4 du = backup_input(ctx().design, ts, xi).thrusts - ctx().design.hover.thrusts;
      EXPECT_TRUE(ctx().setup.inputs.contains(du + ctx().design.hover.thrusts, 1e-12));
      xi = ctx().model.predict(xi, du);
      ASSERT_LE(ts.value(xi), ts.level() * (1.0 + 1e-12)) << "trial " << trial << " step " << k;
    }
  }
}

TEST(Condense, DoubleIntegratorMatchesPropagation) {
  const double h = 0.1;
  const Eigen::Matrix2d a = (Eigen::Matrix2d() << 1, h, 0, 1).finished();
  const Eigen::Vector2d b(0.5 * h * h, h);
  const CondensedPrediction pred = condense(a, b, 3);
  std::mt19937_64 rng(63);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector2d x0(n(rng), n(rng));
    const Eigen::Vector3d u(n(rng), n(rng), n(rng));
    const auto xs = oracle::propagate(a, b, x0, u);
    for (int i = 0; i <= 3; ++i) {
      EXPECT_LE((pred.state_maps[i] * x0 + pred.input_maps[i] * u - xs[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(BuildQp, SingleStepStructure) {
  FilterSettings s = ctx().setup.filter;
  s.horizon = 1;
  const auto window = hover_window(Vec3(0, 0, 0.5));
  const QpProblem qp = build_qp(ctx().model, reference_chart(window[0]), ctx().design.hover, window, bounds(),
                                ctx().setup.inputs, ctx().terminal, 1, s);
  EXPECT_EQ(qp.variables(), kInputDim);
  ASSERT_EQ(qp.blocks.size(), 3u);
  EXPECT_EQ(qp.blocks[0].name, "state");
  EXPECT_EQ(qp.blocks[1].name, "input");
  EXPECT_EQ(qp.blocks[2].name, "terminal");
  int bounded = 0, terminal_rows = 0;
  for (int j = 0; j < kChartDim; ++j) {
    bounded += bounds().bounded(j) ? 1 : 0;
    terminal_rows += ctx().terminal.is_free(j) ? 0 : 1;
  }
  EXPECT_EQ(qp.blocks[0].count, bounded);
  EXPECT_EQ(qp.blocks[1].count, kInputDim);
  EXPECT_EQ(qp.blocks[2].count, terminal_rows);
  int next = 0;
  for (const auto& blk : qp.blocks) {
    EXPECT_EQ(blk.begin, next);
    next += blk.count;
  }
  EXPECT_EQ(next, qp.constraints());
}

TEST(BuildQp, HoverHasZeroOptimalValue) {
  const auto window = hover_window(Vec3(0.2, 0.3, 0.5));
  const QpProblem qp = build_qp(ctx().model, reference_chart(window[0]), ctx().design.hover, window, bounds(),
                                ctx().setup.inputs, ctx().terminal, filt().horizon(), ctx().setup.filter);
  EXPECT_EQ(qp.infeasibility(Eigen::VectorXd::Zero(qp.variables())), 0.0);
  const QpResult r = solve_qp(qp, ctx().setup.filter.qp);
  ASSERT_TRUE(r.solved());
  EXPECT_NEAR(r.objective, 0.0, 1e-9);
}

TEST(Filter, SafeHoverPassesUnchanged) {
  const auto window = hover_window(Vec3(0, 0, 0.5));
  const FilterOutput out = filt().filter(State::at_rest(window[0].position), ctx().design.hover, window);
  EXPECT_FALSE(out.intervened);
  EXPECT_FALSE(out.diagnostics.fallback);
  EXPECT_LE((out.u_safe.thrusts - ctx().design.hover.thrusts).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Filter, ExtremePitchTorqueIsContained) {
  const auto window = hover_window(Vec3(0, 0, 0.5));
  const InputSet& u_set = ctx().setup.inputs;
  ControlInput extreme = ctx().design.hover;
  extreme.thrusts[1] = u_set.upper[1];
  extreme.thrusts[3] = u_set.lower[3];
  ASSERT_GT(wrench_from_thrusts(extreme, ctx().setup.quadrotor).torque.y(), 0.0);

  State x = State::at_rest(window[0].position);
  FilterWorkspace workspace;
  for (int k = 0; k < filt().horizon(); ++k) {
    const FilterOutput out = filt().filter(x, extreme, window, &workspace);
    if (k == 0) {
      EXPECT_TRUE(out.intervened);
    }
    x = step(x, out.u_safe, ctx().setup.quadrotor, ctx().model.dt);
    const double pitch = to_chart(x)[kPitch];
    EXPECT_LE(pitch, bounds().upper[kPitch]) << k;
    EXPECT_GE(pitch, bounds().lower[kPitch]) << k;
  }
}

TEST(Filter, RejectsNonFiniteState) {
  State x;
  x.velocity.x() = std::nan("");
  EXPECT_THROW(filt().filter(x, ctx().design.hover, hover_window(Vec3::Zero())), std::invalid_argument);
  EXPECT_THROW(filt().filter(State{}, ctx().design.hover, {}), std::invalid_argument);
}

TEST(Filter, IdempotentOnItsOwnOutput) {
  std::mt19937_64 rng(64);
  std::uniform_real_distribution<double> thrust(0.0, 1.0);
  const InputSet& u_set = ctx().setup.inputs;
  const auto window = hover_window(Vec3(0, 0, 0.5));
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const State x = from_chart(random_chart(rng, window[0].position, 0.5));
    ControlInput u_des;
    for (int i = 0; i < kInputDim; ++i) u_des.thrusts[i] = u_set.lower[i] + thrust(rng) * (u_set.upper[i] - u_set.lower[i]);
    const FilterOutput first = filt().filter(x, u_des, window);
    if (first.diagnostics.fallback) continue;
    const FilterOutput second = filt().filter(x, first.u_safe, window);
    EXPECT_LE((second.u_safe.thrusts - first.u_safe.thrusts).cwiseAbs().maxCoeff(), 1e-6) << trial;
    ++checked;
  }
  EXPECT_GE(checked, 30);
}

TEST(Filter, MinimalInterventionWhenDesiredInputIsSafe) {
  std::mt19937_64 rng(65);
  const auto window = hover_window(Vec3(0.1, 0.1, 0.5));
  const TerminalSet terminal = filt().terminal_for(window);
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 40; ++trial) {
    const ChartVector xi = random_chart(rng, window[0].position, 0.3);
    const State x = from_chart(xi);
    const ControlInput u_des = desired_input(ctx().design, x, window[0]);
    if (!filt().sequence_feasible(to_chart(x), filt().backup_rollout(to_chart(x), u_des, terminal), terminal, 0.0)) continue;
    const FilterOutput out = filt().filter(x, u_des, window);
    EXPECT_LE((out.u_safe.thrusts - u_des.thrusts).cwiseAbs().maxCoeff(), 1e-5) << trial;
    ++checked;
  }
  EXPECT_EQ(checked, 40);
}

TEST(Filter, ReturnedSequenceSatisfiesConstraintsOnLinearModel) {
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> thrust(0.0, 1.0);
  const InputSet& u_set = ctx().setup.inputs;
  const auto window = hover_window(Vec3(0, 0, 0.5));
  const TerminalSet terminal = filt().terminal_for(window);
  const Vec4& hover = ctx().design.hover.thrusts;
  int checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const ChartVector xi = to_chart(from_chart(random_chart(rng, window[0].position, 0.6)));
    ControlInput u_des;
    for (int i = 0; i < kInputDim; ++i) u_des.thrusts[i] = u_set.lower[i] + thrust(rng) * (u_set.upper[i] - u_set.lower[i]);
    const FilterOutput out = filt().filter(from_chart(xi), u_des, window);
    if (out.diagnostics.fallback) continue;
    const auto xs = oracle::propagate(ctx().model.a_matrix, ctx().model.b_matrix, xi, out.sequence);
    for (int i = 0; i < filt().horizon(); ++i) {
      EXPECT_TRUE(bounds().contains(xs[static_cast<std::size_t>(i)], 1e-6)) << trial << " stage " << i;
      EXPECT_TRUE(u_set.contains(out.sequence.segment<kInputDim>(kInputDim * i) + hover, 1e-6));
    }
    EXPECT_LE(terminal.value(xs.back()), terminal.level() + 1e-6);
    ++checked;
  }
  EXPECT_GE(checked, 40);
}

}  // namespace
}  // namespace safeplan
