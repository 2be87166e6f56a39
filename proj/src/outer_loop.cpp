#include "hes/outer_loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace hes {

void CostWeights::validate() const {
  const bool inverse_ok = lambda > 0.0 && mu > 0.0 && nu > 0.0 && std::isfinite(lambda) &&
                          std::isfinite(mu) && std::isfinite(nu);
  if (!inverse_ok) throw DomainError("CostWeights: lambda, mu, nu must be finite and > 0");
  if (!(w_beta >= 0.0 && w_sigma >= 0.0) || !std::isfinite(w_beta) || !std::isfinite(w_sigma)) {
    throw DomainError("CostWeights: w_beta, w_sigma must be finite and >= 0");
  }
}

void ControlBox::validate() const {
  if (!is_finite(lower) || !is_finite(upper)) throw DomainError("ControlBox: non-finite bound");
  if (lower.beta > upper.beta || lower.sigma > upper.sigma) {
    throw DomainError("ControlBox: empty box");
  }
}

bool ControlBox::contains(const HesControl& u) const {
  return u.beta >= lower.beta && u.beta <= upper.beta && u.sigma >= lower.sigma &&
         u.sigma <= upper.sigma;
}

HesControl ControlBox::clamp(const HesControl& u) const {
  return {std::clamp(u.beta, lower.beta, upper.beta),
          std::clamp(u.sigma, lower.sigma, upper.sigma)};
}

void OcpSpec::validate() const {
  if (horizon_T < 1) throw DomainError("OcpSpec: horizon_T must be >= 1");
  if (!(step_h > 0.0) || !std::isfinite(step_h)) throw DomainError("OcpSpec: step_h must be > 0");
  if (!is_finite(x0)) throw DomainError("OcpSpec: x0 must be finite");
  if (!(penalty_weight >= 0.0) || !std::isfinite(penalty_weight)) {
    throw DomainError("OcpSpec: penalty_weight must be >= 0");
  }
  if (!(penalty_scales.A > 0.0 && penalty_scales.Y > 0.0 && penalty_scales.S > 0.0)) {
    throw DomainError("OcpSpec: penalty scales must be > 0");
  }
  weights.validate();
  bounds.validate();
  params.validate();
}

double stage_cost_ays(const HesState& x, const HesControl& u, const CostWeights& w,
                      const HesControl& u_ref) {
  const double d_sigma = u.sigma - u_ref.sigma;
  const double d_beta = u.beta - u_ref.beta;
  return x.A * x.A / w.lambda + d_sigma * d_sigma / w.mu + d_beta * d_beta / w.nu +
         w.w_beta * u.beta * u.beta + w.w_sigma * u.sigma * u.sigma;
}

double welfare_stage_cost(double pi, double gamma, double eta, double Psi) {
  if (!(pi > 0.0)) throw DomainError("welfare_stage_cost: population must be > 0");
  if (!(gamma >= 0.0)) throw DomainError("welfare_stage_cost: consumption must be >= 0");
  if (eta == 1.0) throw DomainError("welfare_stage_cost: eta = 1 is the log-utility singularity");
  if (!(Psi > 0.0 && Psi <= 1.0)) throw DomainError("welfare_stage_cost: Psi must lie in (0, 1]");
  const double one_minus_eta = 1.0 - eta;
  return pi * std::pow(gamma / pi, one_minus_eta) / one_minus_eta * Psi;
}

StageCost make_welfare_stage_cost(std::vector<double> population, std::vector<double> discount,
                                  double eta) {
  if (population.empty() || population.size() != discount.size()) {
    throw DomainError("welfare cost: population and discount sequences must match and be non-empty");
  }
  return [population = std::move(population), discount = std::move(discount), eta](
             const HesState& x, const HesControl&, std::size_t stage) {
    const std::size_t i = std::min(stage == 0 ? 0 : stage - 1, population.size() - 1);
    return -welfare_stage_cost(population[i], std::max(x.Y, 0.0), eta, discount[i]);
  };
}

double constraint_penalty(const HesState& x, const OcpSpec& spec) {
  const auto sq = [](double v) { return v * v; };
  const PenaltyScales& s = spec.penalty_scales;
  double sum = sq(std::max(0.0, x.A - spec.state_limits.A_max) / s.A) +
               sq(std::max(0.0, spec.state_limits.Y_min - x.Y) / s.Y);
  sum += sq(std::max(0.0, -x.A) / s.A) + sq(std::max(0.0, -x.Y) / s.Y) +
         sq(std::max(0.0, -x.S) / s.S);
  return spec.penalty_weight * sum;
}

namespace {

double stage_term(const OcpSpec& spec, const HesState& x, const HesControl& u, std::size_t t) {
  const double j = spec.stage_cost ? spec.stage_cost(x, u, spec.stage_offset + t)
                                   : stage_cost_ays(x, u, spec.weights, spec.u_ref);
  return j + constraint_penalty(x, spec);
}

HesState advance(const OcpSpec& spec, const HesState& x, const HesControl& u, std::size_t k) {
  const AysField field{spec.params};
  return detail::rk4([&](const HesState& s) { return field(s, u); }, x, spec.step_h, k);
}

// Cost of stages k+1..T given the state before stage k+1 and the cost already
// accumulated over stages 1..k. `probe` replaces useq[k].
double suffix_cost(const OcpSpec& spec, std::span<const HesControl> useq, std::size_t k,
                   HesState x, double accumulated, const HesControl& probe) {
  double sum = accumulated;
  for (std::size_t j = k; j < useq.size(); ++j) {
    const HesControl& u = j == k ? probe : useq[j];
    x = advance(spec, x, u, j);
    sum += stage_term(spec, x, u, j + 1);
  }
  return sum;
}

double fd_step(double v, double rel_step, double floor) {
  return rel_step * std::max(std::abs(v), floor);
}

}  // namespace

double total_cost(const OcpSpec& spec, std::span<const HesControl> useq) {
  if (useq.size() != spec.horizon_T) {
    throw DomainError("total_cost: control sequence length must equal horizon_T");
  }
  double sum = 0.0;
  HesState x = spec.x0;
  for (std::size_t k = 0; k < useq.size(); ++k) {
    x = advance(spec, x, useq[k], k);
    sum += stage_term(spec, x, useq[k], k + 1);
  }
  return sum;
}

Trajectory rollout(const OcpSpec& spec, std::span<const HesControl> useq) {
  return simulate(AysField{spec.params}, spec.x0, useq, spec.step_h,
                  static_cast<double>(spec.stage_offset) * spec.step_h);
}

ControlSequence grad_fd(const SequenceCost& cost, std::span<const HesControl> useq,
                        double rel_step, HesControl scale_floor) {
  if (!(rel_step > 0.0)) throw DomainError("grad_fd: rel_step must be > 0");
  ControlSequence probe(useq.begin(), useq.end());
  ControlSequence grad(useq.size());
  const auto eval = [&](std::size_t k) {
    const double f = cost(probe);
    if (!std::isfinite(f)) {
      throw DomainError("grad_fd: non-finite cost at probe for stage " + std::to_string(k));
    }
    return f;
  };
  for (std::size_t k = 0; k < useq.size(); ++k) {
    for (double HesControl::*field : {&HesControl::beta, &HesControl::sigma}) {
      const double v = useq[k].*field;
      const double h = fd_step(v, rel_step, scale_floor.*field);
      probe[k].*field = v + h;
      const double up = eval(k);
      probe[k].*field = v - h;
      const double down = eval(k);
      probe[k].*field = v;
      grad[k].*field = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

ControlSequence total_cost_gradient(const OcpSpec& spec, std::span<const HesControl> useq,
                                    double rel_step, HesControl scale_floor) {
  if (!(rel_step > 0.0)) throw DomainError("total_cost_gradient: rel_step must be > 0");
  if (useq.size() != spec.horizon_T) {
    throw DomainError("total_cost_gradient: control sequence length must equal horizon_T");
  }
  const std::size_t n = useq.size();
  // states[k] is the state before stage k+1, prefix[k] the cost of stages 1..k
  std::vector<HesState> states(n + 1);
  std::vector<double> prefix(n + 1, 0.0);
  states[0] = spec.x0;
  for (std::size_t k = 0; k < n; ++k) {
    states[k + 1] = advance(spec, states[k], useq[k], k);
    prefix[k + 1] = prefix[k] + stage_term(spec, states[k + 1], useq[k], k + 1);
  }

  ControlSequence grad(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (double HesControl::*field : {&HesControl::beta, &HesControl::sigma}) {
      const double v = useq[k].*field;
      const double h = fd_step(v, rel_step, scale_floor.*field);
      HesControl probe = useq[k];
      probe.*field = v + h;
      const double up = suffix_cost(spec, useq, k, states[k], prefix[k], probe);
      probe.*field = v - h;
      const double down = suffix_cost(spec, useq, k, states[k], prefix[k], probe);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw DomainError("total_cost_gradient: non-finite cost at probe for stage " +
                          std::to_string(k));
      }
      grad[k].*field = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

ControlSequence project_box(std::span<const HesControl> useq, const ControlBox& bounds) {
  bounds.validate();
  ControlSequence out;
  out.reserve(useq.size());
  for (const HesControl& u : useq) out.push_back(bounds.clamp(u));
  return out;
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::GradientTolerance: return "gradient_tolerance";
    case StopReason::CostTolerance: return "cost_tolerance";
    case StopReason::LineSearchStalled: return "line_search_stalled";
    case StopReason::IterationCap: return "iteration_cap";
  }
  return "unknown";
}

namespace {

using Gradient = std::function<ControlSequence(std::span<const HesControl>)>;

// Differencing steps below the variable scale drown in cost roundoff once a
// component sits near zero.
HesControl solver_fd_floor(const SolverOptions& opts) {
  return {std::max(kFdScaleFloor.beta, opts.variable_scale.beta),
          std::max(kFdScaleFloor.sigma, opts.variable_scale.sigma)};
}

SolveResult projected_descent(const SequenceCost& cost, const Gradient& gradient,
                              std::span<const HesControl> init, const ControlBox& bounds,
                              const SolverOptions& opts) {
  const HesControl scale = opts.variable_scale;
  if (!(scale.beta > 0.0 && scale.sigma > 0.0)) {
    throw DomainError("SolverOptions: variable_scale must be > 0");
  }
  for (const HesControl& u : init) {
    if (!bounds.contains(u)) throw DomainError("solve_open_loop: init outside control bounds");
  }

  // Work in scaled coordinates z = u / scale, flattened as (beta, sigma) pairs.
  const std::size_t n = init.size();
  const auto to_controls = [&](const std::vector<double>& z) {
    ControlSequence u(n);
    for (std::size_t k = 0; k < n; ++k) {
      u[k] = bounds.clamp({z[2 * k] * scale.beta, z[2 * k + 1] * scale.sigma});
    }
    return u;
  };
  const auto to_scaled = [&](std::span<const HesControl> u) {
    std::vector<double> z(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      z[2 * k] = u[k].beta / scale.beta;
      z[2 * k + 1] = u[k].sigma / scale.sigma;
    }
    return z;
  };
  const auto scaled_gradient = [&](std::span<const HesControl> u) {
    const ControlSequence g = gradient(u);
    std::vector<double> gz(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      gz[2 * k] = g[k].beta * scale.beta;
      gz[2 * k + 1] = g[k].sigma * scale.sigma;
    }
    return gz;
  };
  const std::vector<double> lo = to_scaled(ControlSequence(n, bounds.lower));
  const std::vector<double> hi = to_scaled(ControlSequence(n, bounds.upper));
  const auto project_step = [&](const std::vector<double>& z, const std::vector<double>& g,
                                double alpha) {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      out[i] = std::clamp(z[i] - alpha * g[i], lo[i], hi[i]);
    }
    return out;
  };
  const auto inf_norm = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
  };

  SolveResult result;
  ControlSequence u(init.begin(), init.end());
  std::vector<double> z = to_scaled(u);
  double f = cost(u);
  if (!std::isfinite(f)) throw DomainError("solve_open_loop: non-finite initial cost");
  result.cost_history.push_back(f);
  if (n == 0) {
    result.converged = true;
    result.reason = StopReason::GradientTolerance;
    return result;
  }
  std::vector<double> g = scaled_gradient(u);
  std::optional<double> bb_step;
  std::size_t small_decreases = 0;

  for (;;) {
    std::vector<double> pg = project_step(z, g, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i) pg[i] = z[i] - pg[i];
    if (inf_norm(pg) < opts.grad_tol) {
      result.converged = true;
      result.reason = StopReason::GradientTolerance;
      break;
    }
    if (result.iterations >= opts.max_iters) {
      result.reason = StopReason::IterationCap;
      break;
    }

    // A BB step can overshoot by many orders of magnitude when the curvature
    // estimate is tiny; fall back to the conservative step before giving up.
    const double safe_step = 0.1 / std::max(inf_norm(g), 1e-300);
    std::vector<double> starts{safe_step};
    if (bb_step) starts.insert(starts.begin(), *bb_step);
    bool accepted = false;
    std::vector<double> z_new;
    ControlSequence u_new;
    double f_new = f;
    for (double alpha : starts) {
      for (std::size_t halving = 0; halving <= opts.max_halvings; ++halving, alpha *= 0.5) {
        z_new = project_step(z, g, alpha);
        u_new = to_controls(z_new);
        f_new = cost(u_new);
        if (std::isfinite(f_new) && f_new < f) {
          accepted = true;
          break;
        }
      }
      if (accepted) break;
    }
    ++result.iterations;
    if (!accepted) {
      result.converged = true;
      result.reason = StopReason::LineSearchStalled;
      break;
    }

    const double decrease = (f - f_new) / std::max(1.0, std::abs(f));
    std::vector<double> g_new = scaled_gradient(u_new);
    double ss = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = z_new[i] - z[i];
      ss += s * s;
      sy += s * (g_new[i] - g[i]);
    }
    bb_step = sy > 0.0 ? std::optional<double>(std::clamp(ss / sy, 1e-12, 1e12)) : std::nullopt;

    z = std::move(z_new);
    u = std::move(u_new);
    f = f_new;
    g = std::move(g_new);
    result.cost_history.push_back(f);

    small_decreases = decrease < opts.cost_tol ? small_decreases + 1 : 0;
    if (small_decreases >= std::max<std::size_t>(opts.stall_window, 1)) {
      result.converged = true;
      result.reason = StopReason::CostTolerance;
      break;
    }
  }
  result.controls = std::move(u);
  return result;
}

}  // namespace

SolveResult solve_open_loop(const OcpSpec& spec, std::span<const HesControl> init,
                            const SolverOptions& opts) {
  spec.validate();
  if (init.size() != spec.horizon_T) {
    throw DomainError("solve_open_loop: init length must equal horizon_T");
  }
  const SequenceCost cost = [&spec](std::span<const HesControl> u) { return total_cost(spec, u); };
  const Gradient gradient = [&](std::span<const HesControl> u) {
    return total_cost_gradient(spec, u, opts.fd_rel_step, solver_fd_floor(opts));
  };
  return projected_descent(cost, gradient, init, spec.bounds, opts);
}

SolveResult minimize_projected(const SequenceCost& cost, std::span<const HesControl> init,
                               const ControlBox& bounds, const SolverOptions& opts) {
  bounds.validate();
  const Gradient gradient = [&](std::span<const HesControl> u) {
    return grad_fd(cost, u, opts.fd_rel_step, solver_fd_floor(opts));
  };
  return projected_descent(cost, gradient, init, bounds, opts);
}

std::string to_string(HorizonMode m) {
  return m == HorizonMode::Shrinking ? "shrinking" : "receding";
}

HorizonMode horizon_mode_from_string(const std::string& s) {
  if (s == "shrinking") return HorizonMode::Shrinking;
  if (s == "receding") return HorizonMode::Receding;
  throw DomainError("unknown horizon mode '" + s + "' (expected shrinking|receding)");
}

OuterController::OuterController(OcpSpec base, HorizonMode mode, SolverOptions opts)
    : base_(std::move(base)), mode_(mode), opts_(opts) {
  base_.validate();
}

void OuterController::set_plan(ControlSequence plan, std::size_t plan_stage) {
  plan_ = std::move(plan);
  plan_stage_ = plan_stage;
}

ControlSequence OuterController::warm_start(std::size_t stage, std::size_t horizon) const {
  ControlSequence warm;
  warm.reserve(horizon);
  const std::size_t shift = stage >= plan_stage_ ? stage - plan_stage_ : plan_.size();
  for (std::size_t k = shift; k < plan_.size() && warm.size() < horizon; ++k) {
    warm.push_back(plan_[k]);
  }
  const HesControl pad = warm.empty() ? base_.bounds.clamp(base_.u_ref) : warm.back();
  warm.resize(horizon, pad);
  return warm;
}

OuterUpdate OuterController::update(const HesState& x_meas, std::size_t stage) {
  std::size_t horizon = base_.horizon_T;
  if (mode_ == HorizonMode::Shrinking) {
    if (stage >= base_.horizon_T) {
      throw DomainError("OuterController: shrinking horizon exhausted at stage " +
                        std::to_string(stage));
    }
    horizon = base_.horizon_T - stage;
  }
  if (final_stage_) {
    if (stage >= *final_stage_) {
      throw DomainError("OuterController: no stages left after stage " + std::to_string(stage));
    }
    horizon = std::min(horizon, *final_stage_ - stage);
  }
  OcpSpec spec = base_;
  spec.x0 = x_meas;
  spec.horizon_T = horizon;
  spec.stage_offset = base_.stage_offset + stage;

  const SolveResult solved = solve_open_loop(spec, warm_start(stage, horizon), opts_);
  plan_ = solved.controls;
  plan_stage_ = stage;
  return {plan_.front(), plan_, solved.converged, solved.iterations};
}

OuterUpdate c_out(const HesState& x_meas, const OcpSpec& spec, HorizonMode mode,
                  std::span<const HesControl> warm_start, const SolverOptions& opts) {
  OuterController controller(spec, mode, opts);
  controller.set_plan(ControlSequence(warm_start.begin(), warm_start.end()), 0);
  return controller.update(x_meas, 0);
}

}  // namespace hes
