#include "hes/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace hes {

std::string to_string(ClosedLoopObjective o) {
  return o == ClosedLoopObjective::Tracking ? "tracking" : "regulation";
}

ClosedLoopObjective closed_loop_objective_from_string(const std::string& s) {
  if (s == "tracking") return ClosedLoopObjective::Tracking;
  if (s == "regulation") return ClosedLoopObjective::Regulation;
  throw DomainError("unknown closed-loop objective '" + s + "' (expected tracking|regulation)");
}

std::string to_string(RunModes m) {
  switch (m) {
    case RunModes::Open: return "open";
    case RunModes::Closed: return "closed";
    case RunModes::Both: return "both";
  }
  return "both";
}

RunModes run_modes_from_string(const std::string& s) {
  if (s == "open") return RunModes::Open;
  if (s == "closed") return RunModes::Closed;
  if (s == "both") return RunModes::Both;
  throw DomainError("unknown mode '" + s + "' (expected open|closed|both)");
}

namespace {

bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

// Number of whole steps of size h in `duration`, or nullopt if it is not an
// integer multiple.
std::optional<std::size_t> whole_steps(double duration, double h) {
  if (!(duration >= 0.0) || !std::isfinite(duration)) return std::nullopt;
  const double ratio = duration / h;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) return std::nullopt;
  return static_cast<std::size_t>(rounded);
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_inner(const InnerDemoConfig& c) {
  c.loop.validate();
  const std::size_t n = c.r0.size();
  if (n == 0 || c.u_star.size() != n || c.lower.size() != n || c.upper.size() != n) {
    throw DomainError("inner_demo: u_star, r0, lower and upper must share one non-zero length");
  }
  if (!std::isfinite(c.plant_gain)) throw DomainError("inner_demo: plant_gain must be finite");
  const Box box(to_vector(c.lower), to_vector(c.upper));
  if (!box.contains(to_vector(c.r0))) throw DomainError("inner_demo: r0 outside [lower, upper]");
}

void check_sai(const SaiDemoConfig& c) {
  c.loop.validate();
  if (c.lower.size() != 4 || c.upper.size() != 4 || c.r0.size() != 4) {
    throw DomainError("sai_demo: lower, upper and r0 must have 4 entries");
  }
  const Box box(to_vector(c.lower), to_vector(c.upper));
  if (!box.contains(to_vector(c.r0))) throw DomainError("sai_demo: r0 outside the injection box");
  make_sai_actuator(c.phi, c.xi, c.plant_phi, c.plant_xi, box);
}

void check_solver(const SolverOptions& o, const char* name) {
  const std::string prefix = name;
  if (o.max_iters == 0) throw DomainError(prefix + ".max_iters must be >= 1");
  if (!(o.grad_tol > 0.0)) throw DomainError(prefix + ".grad_tol must be > 0");
  if (!(o.cost_tol >= 0.0)) throw DomainError(prefix + ".cost_tol must be >= 0");
  if (!(o.fd_rel_step > 0.0)) throw DomainError(prefix + ".fd_rel_step must be > 0");
  if (!(o.variable_scale.beta > 0.0 && o.variable_scale.sigma > 0.0)) {
    throw DomainError(prefix + ".variable_scale must be > 0");
  }
}

}  // namespace

bool operator==(const SaiDemoConfig& a, const SaiDemoConfig& b) {
  return same_matrix(a.phi, b.phi) && same_matrix(a.xi, b.xi) &&
         same_matrix(a.plant_phi, b.plant_phi) && same_matrix(a.plant_xi, b.plant_xi) &&
         a.lower == b.lower && a.upper == b.upper && a.r0 == b.r0 && a.target == b.target &&
         a.loop == b.loop;
}

void ExperimentConfig::validate() const {
  nominal_params.validate();
  if (!(delta_max >= 0.0 && delta_max < 1.0)) throw DomainError("delta_max must lie in [0, 1)");
  hes::validate(x0);
  hes::validate(u_ref);
  if (!(step_h > 0.0) || !std::isfinite(step_h)) throw DomainError("step_h must be > 0");
  if (!whole_steps(span_years, step_h)) {
    throw DomainError("span_years must be a non-negative multiple of step_h");
  }
  const auto period = whole_steps(measurement_period, step_h);
  if (!period || *period == 0) {
    throw DomainError("measurement_period must be a positive integer multiple of step_h");
  }
  if (mpc_horizon < 1) throw DomainError("mpc_horizon must be >= 1");
  if (!(tracking_lambda > 0.0) || !std::isfinite(tracking_lambda)) {
    throw DomainError("tracking_lambda must be > 0");
  }
  weights.validate();
  bounds.validate();
  if (!(penalty_weight >= 0.0)) throw DomainError("penalty_weight must be >= 0");
  if (!(penalty_scales.A > 0.0 && penalty_scales.Y > 0.0 && penalty_scales.S > 0.0)) {
    throw DomainError("penalty scales must be > 0");
  }
  if (welfare) {
    if (welfare->eta == 1.0) throw DomainError("welfare.eta must differ from 1");
    if (welfare->population.size() < span_steps() ||
        welfare->discount.size() != welfare->population.size()) {
      throw DomainError("welfare.population and welfare.discount need one entry per stage");
    }
    for (std::size_t i = 0; i < welfare->population.size(); ++i) {
      if (!(welfare->population[i] > 0.0)) throw DomainError("welfare.population must be > 0");
      if (!(welfare->discount[i] > 0.0 && welfare->discount[i] <= 1.0)) {
        throw DomainError("welfare.discount must lie in (0, 1]");
      }
    }
  }
  check_solver(plan_solver, "plan_solver");
  check_solver(mpc_solver, "mpc_solver");
  if (compare_first_seed > compare_last_seed) throw DomainError("compare seeds: first > last");
  check_inner(inner_demo);
  check_sai(sai_demo);
}

std::size_t ExperimentConfig::span_steps() const {
  return whole_steps(span_years, step_h).value_or(0);
}

std::size_t ExperimentConfig::measurement_steps() const {
  return std::max<std::size_t>(whole_steps(measurement_period, step_h).value_or(1), 1);
}

OcpSpec ExperimentConfig::planning_spec() const {
  OcpSpec spec;
  spec.horizon_T = span_steps();
  spec.step_h = step_h;
  spec.x0 = x0;
  if (welfare) {
    spec.stage_cost = make_welfare_stage_cost(welfare->population, welfare->discount, welfare->eta);
  }
  spec.weights = weights;
  spec.u_ref = u_ref;
  spec.bounds = bounds;
  spec.state_limits = state_limits;
  spec.penalty_scales = penalty_scales;
  spec.penalty_weight = penalty_weight;
  spec.params = nominal_params;
  return spec;
}

std::vector<double> NominalPlan::reference() const {
  std::vector<double> a;
  a.reserve(rollout.states.size());
  for (const HesState& x : rollout.states) a.push_back(x.A);
  return a;
}

NominalPlan make_nominal_plan(const ExperimentConfig& config) {
  config.validate();
  NominalPlan plan;
  const std::size_t n = config.span_steps();
  if (n == 0) {
    plan.rollout.times = {0.0};
    plan.rollout.states = {config.x0};
    plan.converged = true;
    return plan;
  }
  const OcpSpec spec = config.planning_spec();
  const ControlSequence init(n, config.bounds.clamp(config.u_ref));
  SolveResult solved = solve_open_loop(spec, init, config.plan_solver);
  plan.controls = std::move(solved.controls);
  plan.cost_history = std::move(solved.cost_history);
  plan.converged = solved.converged;
  plan.iterations = solved.iterations;
  plan.rollout = rollout(spec, plan.controls);
  return plan;
}

std::vector<double> make_reference(const ExperimentConfig& config) {
  return make_nominal_plan(config).reference();
}

std::size_t RunResult::unconverged_steps() const {
  return static_cast<std::size_t>(std::count(step_converged.begin(), step_converged.end(), false));
}

namespace {

std::vector<double> a_series(const Trajectory& traj) {
  std::vector<double> a;
  a.reserve(traj.states.size());
  for (const HesState& x : traj.states) a.push_back(x.A);
  return a;
}

void fill_metrics(RunResult& r, const ExperimentConfig& config) {
  const std::vector<double> a = a_series(r.plant_trajectory);
  r.metrics.rmse_A = rmse(a, r.reference);
  const std::size_t max_lag = std::min(config.delay_max_lag, (a.size() - 1) / 2);
  r.metrics.delay_years =
      static_cast<double>(delay_estimate(a, r.reference, max_lag)) * config.step_h;
  r.metrics.constraint_violation_integral =
      constraint_violation_integral(r.plant_trajectory, config.state_limits);
}

// Closed-loop cost: stay on the nominal plan. Zero along the plan itself.
StageCost make_tracking_cost(const ExperimentConfig& config, const NominalPlan& plan) {
  auto reference = std::make_shared<const std::vector<double>>(plan.reference());
  auto controls = std::make_shared<const ControlSequence>(plan.controls);
  const double lambda = config.tracking_lambda;
  const double mu = config.weights.mu;
  const double nu = config.weights.nu;
  return [reference, controls, lambda, mu, nu](const HesState& x, const HesControl& u,
                                               std::size_t stage) {
    const double dA = x.A - (*reference)[stage];
    const HesControl& planned = (*controls)[stage - 1];
    const double d_beta = u.beta - planned.beta;
    const double d_sigma = u.sigma - planned.sigma;
    return dA * dA / lambda + d_beta * d_beta / nu + d_sigma * d_sigma / mu;
  };
}

}  // namespace

RunResult run_open_loop(const ExperimentConfig& config) {
  return run_open_loop(config, make_nominal_plan(config));
}

RunResult run_open_loop(const ExperimentConfig& config, const NominalPlan& plan) {
  config.validate();
  RunResult r;
  r.reference = plan.reference();
  r.plant_params = perturb_params(config.nominal_params, config.delta_max, config.seed);
  r.plant_trajectory = simulate(AysField{r.plant_params}, config.x0,
                                std::span<const HesControl>(plan.controls), config.step_h);
  r.applied_controls = plan.controls;
  r.replanned.assign(r.plant_trajectory.states.size(), false);
  r.replanned.front() = true;
  r.step_converged = {plan.converged};
  fill_metrics(r, config);
  return r;
}

RunResult run_closed_loop(const ExperimentConfig& config) {
  return run_closed_loop(config, make_nominal_plan(config));
}

RunResult run_closed_loop(const ExperimentConfig& config, const NominalPlan& plan) {
  config.validate();
  const std::size_t n = config.span_steps();
  const std::size_t period = config.measurement_steps();

  RunResult r;
  r.reference = plan.reference();
  r.plant_params = perturb_params(config.nominal_params, config.delta_max, config.seed);

  OcpSpec base = config.planning_spec();
  if (config.objective == ClosedLoopObjective::Tracking) {
    base.stage_cost = make_tracking_cost(config, plan);
    // target-region penalties are already priced into the plan being tracked
    base.state_limits = {std::numeric_limits<double>::infinity(),
                         -std::numeric_limits<double>::infinity()};
  }
  base.horizon_T = config.mode == HorizonMode::Receding ? config.mpc_horizon : std::max<std::size_t>(n, 1);

  OuterController controller(base, config.mode, config.mpc_solver);
  controller.set_final_stage(n);
  controller.set_plan(plan.controls, 0);

  const AysField plant{r.plant_params};
  Trajectory& traj = r.plant_trajectory;
  traj.times = {0.0};
  traj.states = {config.x0};
  r.replanned.assign(n + 1, false);

  HesState x = config.x0;
  ControlSequence current;
  std::size_t current_stage = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % period == 0) {
      OuterUpdate update = controller.update(x, k);
      current = std::move(update.plan);
      current_stage = k;
      r.replanned[k] = true;
      r.step_converged.push_back(update.converged);
    }
    const HesControl u = current[k - current_stage];
    x = detail::rk4([&](const HesState& s) { return plant(s, u); }, x, config.step_h, k);
    traj.controls.push_back(u);
    traj.states.push_back(x);
    traj.times.push_back(static_cast<double>(k + 1) * config.step_h);
  }
  r.applied_controls = traj.controls;
  fill_metrics(r, config);
  return r;
}

double rmse(std::span<const double> traj, std::span<const double> ref) {
  if (traj.size() != ref.size()) throw DomainError("rmse: length mismatch");
  if (traj.empty()) throw DomainError("rmse: empty series");
  double sum = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double d = traj[i] - ref[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(traj.size()));
}

std::size_t delay_estimate(std::span<const double> traj, std::span<const double> ref,
                           std::size_t max_lag) {
  if (traj.size() != ref.size()) throw DomainError("delay_estimate: length mismatch");
  if (traj.size() <= 2 * max_lag) throw DomainError("delay_estimate: series too short for max_lag");
  const std::size_t window = traj.size() - max_lag;
  std::size_t best_lag = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double ssd = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      const double d = traj[i + lag] - ref[i];
      ssd += d * d;
    }
    if (ssd < best) {
      best = ssd;
      best_lag = lag;
    }
  }
  return best_lag;
}

double constraint_violation_integral(const Trajectory& traj, const StateLimits& limits) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < traj.states.size(); ++i) {
    const HesState& x = traj.states[i];
    const double dt = traj.times[i + 1] - traj.times[i];
    const double excess_A = std::max(0.0, x.A - limits.A_max) / limits.A_max;
    const double deficit_Y = std::max(0.0, limits.Y_min - x.Y) / limits.Y_min;
    sum += dt * (excess_A + deficit_Y);
  }
  return sum;
}

InnerLoopResult run_inner_demo(const InnerDemoConfig& demo) {
  check_inner(demo);
  Box box(to_vector(demo.lower), to_vector(demo.upper));
  const ActuatorMap map = make_identity_actuator(std::move(box), demo.plant_gain);
  return run_inner_loop(to_vector(demo.u_star), to_vector(demo.r0), map, demo.loop);
}

InnerLoopResult run_sai_demo(const SaiDemoConfig& demo) {
  check_sai(demo);
  Box box(to_vector(demo.lower), to_vector(demo.upper));
  const ActuatorMap map =
      make_sai_actuator(demo.phi, demo.xi, demo.plant_phi, demo.plant_xi, std::move(box));
  return run_inner_loop(demo.target.as_vector(), to_vector(demo.r0), map, demo.loop);
}

}  // namespace hes
