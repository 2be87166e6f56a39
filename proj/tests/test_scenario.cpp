#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hes/scenario.hpp"

using namespace hes;

namespace {

ExperimentConfig short_config(double span = 20.0) {
  ExperimentConfig c;
  c.span_years = span;
  c.mpc_horizon = 10;
  c.delay_max_lag = 5;
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> series_A(const Trajectory& t) {
  std::vector<double> out;
  for (const HesState& x : t.states) out.push_back(x.A);
  return out;
}

}  // namespace

TEST_CASE("rmse") {
  const std::vector<double> a{1, 2, 3};
  CHECK(rmse(a, a) == 0.0);
  const std::vector<double> b{3, 4, 5};
  CHECK(rmse(a, b) == doctest::Approx(2.0));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> x(50), y(50);
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    y[i] = n(rng);
    ss += (x[i] - y[i]) * (x[i] - y[i]);
  }
  CHECK(rmse(x, y) == doctest::Approx(std::sqrt(ss / 50.0)));

  CHECK_THROWS_AS(rmse(a, std::vector<double>{1, 2}), DomainError);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), DomainError);
}

TEST_CASE("delay_estimate") {
  std::vector<double> ref(60);
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = std::sin(0.2 * static_cast<double>(i));

  CHECK(delay_estimate(ref, ref, 10) == 0);

  SUBCASE("pure shift") {
    std::vector<double> late(ref.size());
    for (std::size_t i = 0; i < late.size(); ++i) {
      late[i] = std::sin(0.2 * (static_cast<double>(i) - 3.0));
    }
    CHECK(delay_estimate(late, ref, 10) == 3);
  }
  SUBCASE("noisy shift") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<double> late(ref.size());
    for (std::size_t i = 0; i < late.size(); ++i) {
      late[i] = std::sin(0.2 * (static_cast<double>(i) - 5.0)) + noise(rng);
    }
    const auto d = static_cast<int>(delay_estimate(late, ref, 10));
    CHECK(std::abs(d - 5) <= 1);
  }
  SUBCASE("ties go to the smaller lag") {
    const std::vector<double> flat(20, 1.0);
    CHECK(delay_estimate(flat, flat, 5) == 0);
  }
  SUBCASE("input checks") {
    CHECK_THROWS_AS(delay_estimate(std::vector<double>(10, 0.0), std::vector<double>(10, 0.0), 5),
                    DomainError);
    CHECK_THROWS_AS(delay_estimate(ref, std::vector<double>(10, 0.0), 2), DomainError);
  }
}

TEST_CASE("constraint_violation_integral") {
  const StateLimits limits{350.0, 4e13};
  Trajectory t{{0.0, 1.0, 3.0}, {{350, 5e13, 1}, {385, 2e13, 1}, {700, 1e13, 1}}, {{}, {}}};
  // left rectangles: 0 over [0, 1], (0.1 + 0.5) over [1, 3]
  CHECK(constraint_violation_integral(t, limits) == doctest::Approx(1.2));
  t.states = {{100, 5e13, 1}, {100, 5e13, 1}, {100, 5e13, 1}};
  CHECK(constraint_violation_integral(t, limits) == 0.0);
}

TEST_CASE("configuration validation") {
  ExperimentConfig c = short_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.span_steps() == 20);
  CHECK(c.measurement_steps() == 2);

  SUBCASE("delta_max") {
    c.delta_max = 1.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("delta_max"), DomainError);
  }
  SUBCASE("measurement period off the grid") {
    c.measurement_period = 1.5;
    CHECK_THROWS_AS(c.validate(), DomainError);
  }
  SUBCASE("welfare inputs must cover the span") {
    c.welfare = WelfareInputs{2.0, std::vector<double>(5, 1.0), std::vector<double>(5, 1.0)};
    CHECK_THROWS_AS(c.validate(), DomainError);
  }
  SUBCASE("mode strings") {
    CHECK(to_string(ClosedLoopObjective::Tracking) == "tracking");
    CHECK(closed_loop_objective_from_string("regulation") == ClosedLoopObjective::Regulation);
    CHECK(run_modes_from_string("both") == RunModes::Both);
    CHECK_THROWS_AS(run_modes_from_string("sideways"), DomainError);
  }
}

TEST_CASE("nominal plan and reference") {
  SUBCASE("zero span") {
    ExperimentConfig c = short_config(0.0);
    CHECK(make_reference(c) == std::vector<double>{840.0});
  }
  SUBCASE("short span") {
    const ExperimentConfig c = short_config();
    const NominalPlan plan = make_nominal_plan(c);
    CHECK(plan.converged);
    REQUIRE(plan.controls.size() == 20);
    const std::vector<double> ref = plan.reference();
    REQUIRE(ref.size() == 21);
    CHECK(ref[0] == 840.0);
    for (const HesControl& u : plan.controls) {
      CHECK(c.bounds.contains(u));
    }
    CHECK(make_reference(c) == ref);
  }
}

TEST_CASE("open and closed loop on a short span") {
  ExperimentConfig c = short_config();
  c.delta_max = 0.0;
  const NominalPlan plan = make_nominal_plan(c);

  SUBCASE("no uncertainty: both modes reproduce the reference") {
    const RunResult open = run_open_loop(c, plan);
    const RunResult closed = run_closed_loop(c, plan);
    CHECK(open.metrics.rmse_A < 1e-9);
    CHECK(closed.metrics.rmse_A < 1e-5);
    CHECK(open.metrics.delay_years == 0.0);
    CHECK(closed.metrics.delay_years == 0.0);
  }

  c.delta_max = 0.2;
  c.seed = 42;

  SUBCASE("runs are deterministic") {
    const RunResult a = run_closed_loop(c, plan);
    const RunResult b = run_closed_loop(c, plan);
    CHECK(a.plant_trajectory.states == b.plant_trajectory.states);
    CHECK(a.applied_controls == b.applied_controls);
  }
  SUBCASE("feedback reduces the tracking error") {
    // over a couple of decades the drift stays below the MPC's tracking noise
    c.span_years = 60.0;
    const NominalPlan long_plan = make_nominal_plan(c);
    const RunResult open = run_open_loop(c, long_plan);
    const RunResult closed = run_closed_loop(c, long_plan);
    CHECK(open.plant_params == closed.plant_params);
    CHECK_FALSE(open.plant_params == c.nominal_params);
    CHECK(closed.metrics.rmse_A < open.metrics.rmse_A);
    CHECK(closed.unconverged_steps() == 0);
  }
  SUBCASE("replan flags follow the measurement period") {
    const RunResult closed = run_closed_loop(c, plan);
    REQUIRE(closed.replanned.size() == 21);
    for (std::size_t k = 0; k < 21; ++k) CHECK(closed.replanned[k] == (k % 2 == 0 && k < 20));
    CHECK(closed.step_converged.size() == 10);

    const RunResult open = run_open_loop(c, plan);
    CHECK(open.replanned.front());
    CHECK(std::count(open.replanned.begin(), open.replanned.end(), true) == 1);
  }
  SUBCASE("a single measurement degenerates to the open loop") {
    c.measurement_period = c.span_years;
    c.mode = HorizonMode::Shrinking;
    const RunResult open = run_open_loop(c, plan);
    const RunResult closed = run_closed_loop(c, plan);
    CHECK(closed.step_converged.size() == 1);
    CHECK(max_abs_diff(series_A(open.plant_trajectory), series_A(closed.plant_trajectory)) < 1e-3);
  }
}

TEST_CASE("inner-loop demos") {
  SUBCASE("identity actuator with gain error") {
    const InnerDemoConfig demo;
    const InnerLoopResult res = run_inner_demo(demo);
    CHECK(res.converged);
    // the update uses the model slope 1, so it settles where
    // -(u* - g r) + alpha r = 0, i.e. r = u* / (g + alpha)
    CHECK(res.r_final[0] == doctest::Approx(1.0 / (1.2 + 0.1)).epsilon(1e-6));
  }
  SUBCASE("identity demo input checks") {
    InnerDemoConfig demo;
    demo.r0 = {20.0};
    CHECK_THROWS_AS(run_inner_demo(demo), DomainError);
    demo.r0 = {0.0, 0.0};
    CHECK_THROWS_AS(run_inner_demo(demo), DomainError);
  }
  SUBCASE("SAI with a stronger plant") {
    const SaiDemoConfig demo;
    const InnerLoopResult res = run_sai_demo(demo);
    CHECK(res.converged);
    CHECK((res.history.back().u_meas - demo.target.as_vector()).norm() < 1e-6);
  }
}
