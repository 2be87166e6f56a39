#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hes/outer_loop.hpp"

using namespace hes;

namespace {

// A short, well-scaled AYS planning instance.
OcpSpec small_spec(std::size_t T) {
  OcpSpec spec;
  spec.horizon_T = T;
  spec.penalty_weight = 1e-3;
  spec.penalty_scales = {1.0, 1e11, 1e9};
  return spec;
}

SolverOptions plan_opts() {
  SolverOptions o;
  o.max_iters = 20000;
  return o;
}

// Rollout and summation written out independently of total_cost.
double hand_total(const OcpSpec& spec, const ControlSequence& u) {
  const AysField f{spec.params};
  HesState x = spec.x0;
  double sum = 0.0;
  for (const HesControl& c : u) {
    x = rk4_step(f, x, c, spec.step_h);
    const double dA = std::max(0.0, x.A - spec.state_limits.A_max);
    const double dY = std::max(0.0, spec.state_limits.Y_min - x.Y);
    const double j = x.A * x.A / spec.weights.lambda +
                     std::pow(c.sigma - spec.u_ref.sigma, 2) / spec.weights.mu +
                     std::pow(c.beta - spec.u_ref.beta, 2) / spec.weights.nu;
    sum += j + spec.penalty_weight * (std::pow(dA / spec.penalty_scales.A, 2) +
                                      std::pow(dY / spec.penalty_scales.Y, 2));
  }
  return sum;
}

}  // namespace

TEST_CASE("stage_cost_ays examples") {
  CostWeights w;
  CHECK(stage_cost_ays({0, 1, 1}, kInitialControl, w, kInitialControl) == 0.0);
  w.lambda = 1.0;
  CHECK(stage_cost_ays({2, 1, 1}, kInitialControl, w, kInitialControl) == 4.0);
  CostWeights unit{1.0, 1.0, 1.0, 1.0, 0.0};
  CHECK(stage_cost_ays({0, 1, 1}, {0.03, 5e12}, unit, {0.03, 5e12}) ==
        doctest::Approx(9e-4).epsilon(1e-12));
}

TEST_CASE("welfare_stage_cost") {
  CHECK(welfare_stage_cost(1, 1, 0.5, 1) == doctest::Approx(2.0));
  CHECK(welfare_stage_cost(1, 0, 0.5, 1) == 0.0);
  // 2 * (2/2)^0.5 / 0.5 * 0.5
  const double oracle = 2.0 * std::sqrt(2.0 / 2.0) / (1.0 - 0.5) * 0.5;
  CHECK(welfare_stage_cost(2, 2, 0.5, 0.5) == doctest::Approx(oracle));
  CHECK(oracle == doctest::Approx(2.0));
  CHECK_THROWS_AS(welfare_stage_cost(1, 1, 1.0, 1), DomainError);
  CHECK_THROWS_AS(welfare_stage_cost(0, 1, 0.5, 1), DomainError);
  CHECK_THROWS_AS(welfare_stage_cost(1, 1, 0.5, 0.0), DomainError);
  CHECK_THROWS_AS(welfare_stage_cost(1, 1, 0.5, 1.5), DomainError);

  const StageCost cost = make_welfare_stage_cost({1.0, 2.0}, {1.0, 0.5}, 0.5);
  CHECK(cost({0, 2.0, 0}, {}, 2) == doctest::Approx(-welfare_stage_cost(2.0, 2.0, 0.5, 0.5)));
  CHECK(cost({0, 1.0, 0}, {}, 1) == doctest::Approx(-2.0));
  CHECK_THROWS_AS(make_welfare_stage_cost({1.0}, {}, 0.5), DomainError);
}

TEST_CASE("constraint_penalty examples") {
  OcpSpec spec;
  CHECK(constraint_penalty({300, 5e13, 1e11}, spec) == 0.0);
  CHECK(constraint_penalty({345, 4e13, 0}, spec) == 0.0);
  CHECK(constraint_penalty({355, 4e13, 0}, spec) == doctest::Approx(100.0));
  CHECK(constraint_penalty({300, 5e13, -2}, spec) == doctest::Approx(4.0));
  spec.penalty_scales.A = 10.0;
  CHECK(constraint_penalty({355, 4e13, 0}, spec) == doctest::Approx(1.0));
  spec.penalty_weight = 0.0;
  CHECK(constraint_penalty({1000, 0, -5}, spec) == 0.0);
}

TEST_CASE("total_cost") {
  SUBCASE("one stage") {
    const OcpSpec spec = small_spec(1);
    const ControlSequence u{kInitialControl};
    const HesState x1 = rk4_step(AysField{spec.params}, spec.x0, u[0], 1.0);
    CHECK(total_cost(spec, u) == stage_cost_ays(x1, u[0], spec.weights, spec.u_ref) +
                                     constraint_penalty(x1, spec));
  }
  SUBCASE("three stages against a hand rollout") {
    const OcpSpec spec = small_spec(3);
    const ControlSequence u{{0.02, 4e12}, {0.01, 3e12}, {-0.01, 6e12}};
    CHECK(total_cost(spec, u) == doctest::Approx(hand_total(spec, u)).epsilon(1e-13));
  }
  SUBCASE("penalty weight is monotone on an infeasible rollout") {
    OcpSpec spec = small_spec(5);
    const ControlSequence u(5, kInitialControl);
    const double c1 = total_cost(spec, u);
    spec.penalty_weight *= 2.0;
    CHECK(total_cost(spec, u) > c1);
  }
  SUBCASE("deterministic and length-checked") {
    const OcpSpec spec = small_spec(4);
    const ControlSequence u(4, kInitialControl);
    CHECK(total_cost(spec, u) == total_cost(spec, u));
    CHECK_THROWS_AS(total_cost(spec, ControlSequence(3, kInitialControl)), DomainError);
  }
  SUBCASE("custom stage cost sees absolute stages") {
    OcpSpec spec = small_spec(3);
    spec.stage_offset = 10;
    std::vector<std::size_t> seen;
    spec.stage_cost = [&](const HesState&, const HesControl&, std::size_t t) {
      seen.push_back(t);
      return 0.0;
    };
    spec.penalty_weight = 0.0;
    CHECK(total_cost(spec, ControlSequence(3, kInitialControl)) == 0.0);
    CHECK(seen == std::vector<std::size_t>{11, 12, 13});
  }
}

TEST_CASE("grad_fd against analytic gradients") {
  const ControlSequence u{{0.01, 2e12}, {-0.02, 7e12}, {0.03, 1e10}};
  SUBCASE("quadratic") {
    const SequenceCost quad = [](std::span<const HesControl> v) {
      double s = 0.0;
      for (const HesControl& c : v) s += c.beta * c.beta + 1e-24 * c.sigma * c.sigma;
      return s;
    };
    const ControlSequence g = grad_fd(quad, u, 1e-6);
    for (std::size_t k = 0; k < u.size(); ++k) {
      CHECK(g[k].beta == doctest::Approx(2 * u[k].beta).epsilon(1e-6));
      CHECK(g[k].sigma == doctest::Approx(2e-24 * u[k].sigma).epsilon(1e-6));
    }
  }
  SUBCASE("constant") {
    const ControlSequence g = grad_fd([](std::span<const HesControl>) { return 3.0; }, u, 1e-6);
    for (const HesControl& c : g) CHECK(c == HesControl{0.0, 0.0});
  }
  SUBCASE("linear") {
    const SequenceCost lin = [](std::span<const HesControl> v) {
      double s = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        s += (k + 1.0) * v[k].beta - 1e-12 * (k + 2.0) * v[k].sigma;
      }
      return s;
    };
    const ControlSequence g = grad_fd(lin, u, 1e-6);
    for (std::size_t k = 0; k < u.size(); ++k) {
      CHECK(g[k].beta == doctest::Approx(k + 1.0).epsilon(1e-6));
      CHECK(g[k].sigma == doctest::Approx(-1e-12 * (k + 2.0)).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(grad_fd([](std::span<const HesControl>) { return 0.0; }, u, 0.0), DomainError);
}

TEST_CASE("total_cost_gradient") {
  const OcpSpec spec = small_spec(6);
  ControlSequence u;
  for (int k = 0; k < 6; ++k) u.push_back({0.03 - 0.004 * k, 1e12 * (1 + k)});
  const SequenceCost cost = [&](std::span<const HesControl> v) { return total_cost(spec, v); };

  const ControlSequence fast = total_cost_gradient(spec, u, 1e-6);
  CHECK(fast == grad_fd(cost, u, 1e-6));

  // one-sided differences at a looser tolerance
  for (std::size_t k = 0; k < u.size(); ++k) {
    ControlSequence v = u;
    const double hb = 1e-6 * std::max(std::abs(u[k].beta), 1e-4);
    v[k].beta += hb;
    const double gb = (cost(v) - cost(u)) / hb;
    v = u;
    const double hs = 1e-6 * std::max(std::abs(u[k].sigma), 1e8);
    v[k].sigma += hs;
    const double gs = (cost(v) - cost(u)) / hs;
    CHECK(fast[k].beta == doctest::Approx(gb).epsilon(1e-3));
    CHECK(fast[k].sigma == doctest::Approx(gs).epsilon(1e-3));
  }
}

TEST_CASE("project_box") {
  ControlBox box;
  box.upper.sigma = 1e14;
  const ControlSequence inside{{0.01, 1e12}};
  CHECK(project_box(inside, box) == inside);
  const ControlSequence below{{0.0, -1.0}};
  CHECK(project_box(below, box)[0].sigma == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> beta(-1, 1), sigma(-1e14, 1e15);
  ControlSequence r;
  for (int i = 0; i < 50; ++i) r.push_back({beta(rng), sigma(rng)});
  const ControlSequence once = project_box(r, box);
  CHECK(project_box(once, box) == once);
  for (const HesControl& c : once) CHECK(box.contains(c));
}

TEST_CASE("minimize_projected") {
  ControlBox box{{-1.0, 0.0}, {1.0, 0.0}};
  SolverOptions opts;
  opts.variable_scale = {1.0, 1.0};

  SUBCASE("already optimal init returns at once") {
    const SequenceCost bowl = [](std::span<const HesControl> v) {
      double s = 0.0;
      for (const HesControl& c : v) s += (c.beta - 0.25) * (c.beta - 0.25);
      return s;
    };
    const ControlSequence init(3, HesControl{0.25, 0.0});
    const SolveResult r = minimize_projected(bowl, init, box, opts);
    CHECK(r.converged);
    CHECK(r.iterations <= 2);
    CHECK(r.controls == init);
  }
  SUBCASE("active bound") {
    const SequenceCost pull = [](std::span<const HesControl> v) {
      return (v[0].beta - 2.0) * (v[0].beta - 2.0);
    };
    const SolveResult r = minimize_projected(pull, ControlSequence{{0.0, 0.0}}, box, opts);
    CHECK(r.converged);
    CHECK(r.controls[0].beta == 1.0);
  }
  SUBCASE("iteration cap is reported") {
    const SequenceCost rosen = [](std::span<const HesControl> v) {
      const double x = v[0].beta, y = v[1].beta;
      return (1 - x) * (1 - x) + 100 * (y - x * x) * (y - x * x);
    };
    opts.max_iters = 3;
    const SolveResult r = minimize_projected(rosen, ControlSequence(2, {-0.5, 0.0}), box, opts);
    CHECK_FALSE(r.converged);
    CHECK(r.reason == StopReason::IterationCap);
    CHECK(r.iterations == 3);
  }
  SUBCASE("init outside the box") {
    CHECK_THROWS_AS(
        minimize_projected([](std::span<const HesControl>) { return 0.0; },
                           ControlSequence{{2.0, 0.0}}, box, opts),
        DomainError);
  }
}

TEST_CASE("solve_open_loop on the AYS instance") {
  const OcpSpec spec = small_spec(10);
  const ControlSequence init(10, kInitialControl);
  const SolveResult r = solve_open_loop(spec, init, plan_opts());
  CHECK(r.converged);
  REQUIRE(r.cost_history.size() == r.iterations + 1);
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) {
    CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
  }
  CHECK(r.cost_history.back() < r.cost_history.front());
  for (const HesControl& u : r.controls) CHECK(spec.bounds.contains(u));
  CHECK(r.cost_history.back() == total_cost(spec, r.controls));

  // deterministic
  const SolveResult again = solve_open_loop(spec, init, plan_opts());
  CHECK(again.controls == r.controls);
  CHECK(again.cost_history == r.cost_history);
}

TEST_CASE("OuterController") {
  const OcpSpec spec = small_spec(12);
  const SolveResult plan = solve_open_loop(spec, ControlSequence(12, kInitialControl), plan_opts());
  const Trajectory predicted = rollout(spec, plan.controls);

  SUBCASE("predicted measurement keeps the plan") {
    OuterController c(spec, HorizonMode::Shrinking, plan_opts());
    c.set_plan(plan.controls, 0);
    const OuterUpdate up = c.update(predicted.states[4], 4);
    REQUIRE(up.plan.size() == 8);
    CHECK(up.converged);
    CHECK(up.control.beta == doctest::Approx(plan.controls[4].beta).epsilon(1e-4));
    CHECK(up.control.sigma ==
          doctest::Approx(plan.controls[4].sigma).epsilon(1e-4).scale(1e10));
  }
  SUBCASE("horizon lengths") {
    OuterController shrinking(spec, HorizonMode::Shrinking);
    CHECK(shrinking.update(spec.x0, 0).plan.size() == 12);
    CHECK(shrinking.update(predicted.states[5], 5).plan.size() == 7);
    CHECK_THROWS_AS(shrinking.update(predicted.states[12], 12), DomainError);

    OuterController receding(spec, HorizonMode::Receding);
    CHECK(receding.update(predicted.states[5], 5).plan.size() == 12);
    receding.set_final_stage(14);
    CHECK(receding.update(predicted.states[5], 5).plan.size() == 9);
  }
  SUBCASE("inflated carbon does not raise sigma") {
    // more carbon than predicted calls for a lower break-even level, i.e.
    // an earlier switch to renewables
    OuterController c(spec, HorizonMode::Shrinking, plan_opts());
    c.set_plan(plan.controls, 0);
    const HesState nominal = predicted.states[3];
    HesState inflated = nominal;
    inflated.A *= 1.1;
    const double sigma_nominal = c.update(nominal, 3).control.sigma;
    c.set_plan(plan.controls, 0);
    const double sigma_inflated = c.update(inflated, 3).control.sigma;
    CHECK(sigma_inflated <= sigma_nominal * (1 + 1e-6));
  }
  SUBCASE("free function form") {
    const OuterUpdate up = c_out(spec.x0, spec, HorizonMode::Receding, plan.controls, plan_opts());
    CHECK(up.plan.size() == 12);
    CHECK(up.control == up.plan.front());
  }
  CHECK(horizon_mode_from_string(to_string(HorizonMode::Receding)) == HorizonMode::Receding);
  CHECK(horizon_mode_from_string("shrinking") == HorizonMode::Shrinking);
  CHECK_THROWS_AS(horizon_mode_from_string("rolling"), DomainError);
}
