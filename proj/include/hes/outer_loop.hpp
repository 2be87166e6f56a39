#pragma once

// Outer loop: the multi-stage optimal control problem over the AYS model,
// its single-shooting projected-gradient solver and the MPC wrapper.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hes/model.hpp"

namespace hes {

/// Weights of the quadratic AYS stage cost. lambda, mu and nu divide the
/// squared deviations; w_beta and w_sigma multiply the squared controls.
struct CostWeights {
  double lambda = 345.0 * 345.0;
  double mu = kInitialControl.sigma * kInitialControl.sigma;
  double nu = kInitialControl.beta * kInitialControl.beta;
  double w_beta = 0.0;
  double w_sigma = 0.0;

  friend bool operator==(const CostWeights&, const CostWeights&) = default;
  void validate() const;
};

/// Componentwise box on (beta, sigma).
struct ControlBox {
  HesControl lower{-0.05, 0.0};
  HesControl upper{0.05, 10.0 * kInitialControl.sigma};

  friend bool operator==(const ControlBox&, const ControlBox&) = default;
  void validate() const;
  bool contains(const HesControl& u) const;
  HesControl clamp(const HesControl& u) const;
};

/// Target region A <= A_max, Y >= Y_min.
struct StateLimits {
  double A_max = 345.0;
  double Y_min = 4e13;

  friend bool operator==(const StateLimits&, const StateLimits&) = default;
};

/// Divisors applied to each violation before squaring in constraint_penalty.
/// The unit defaults give the raw quadratic penalty.
struct PenaltyScales {
  double A = 1.0;
  double Y = 1.0;
  double S = 1.0;

  friend bool operator==(const PenaltyScales&, const PenaltyScales&) = default;
};

using ControlSequence = std::vector<HesControl>;

/// Stage cost J(x, u) at absolute stage index `stage` (1-based, counted from
/// the start of the experiment so time-varying costs survive replanning).
using StageCost = std::function<double(const HesState& x, const HesControl& u, std::size_t stage)>;

struct OcpSpec {
  std::size_t horizon_T = 50;
  double step_h = 1.0;
  HesState x0 = kInitialState;
  StageCost stage_cost;  ///< empty: quadratic AYS cost with `weights` and `u_ref`
  CostWeights weights;
  HesControl u_ref = kInitialControl;
  ControlBox bounds;
  StateLimits state_limits;
  PenaltyScales penalty_scales;
  double penalty_weight = 1.0;
  AysParams params;
  std::size_t stage_offset = 0;  ///< stages already elapsed before x0

  void validate() const;
};

double stage_cost_ays(const HesState& x, const HesControl& u, const CostWeights& w,
                      const HesControl& u_ref);

/// pi (gamma/pi)^(1-eta) / (1-eta) * Psi. This is a welfare to be maximized;
/// negate it before handing it to a minimizer.
double welfare_stage_cost(double pi, double gamma, double eta, double Psi);

/// Welfare stage cost on exogenous population and discount sequences (indexed
/// by stage - 1), with consumption taken as the gross world product Y.
/// Returned negated so that minimizing it maximizes welfare.
StageCost make_welfare_stage_cost(std::vector<double> population, std::vector<double> discount,
                                  double eta);

double constraint_penalty(const HesState& x, const OcpSpec& spec);

/// Sum over t = 1..T of J(x_t, u_t) + penalty(x_t), where x_t is the state
/// reached after applying u_t for one step from x_{t-1}.
double total_cost(const OcpSpec& spec, std::span<const HesControl> useq);

/// Nominal-model rollout of a control sequence from spec.x0.
Trajectory rollout(const OcpSpec& spec, std::span<const HesControl> useq);

/// Scale floors for finite-difference probes on (beta, sigma).
inline constexpr HesControl kFdScaleFloor{1e-4, 1e8};

using SequenceCost = std::function<double(std::span<const HesControl>)>;

/// Central finite-difference gradient with per-entry step
/// rel_step * max(|entry|, floor).
ControlSequence grad_fd(const SequenceCost& cost, std::span<const HesControl> useq,
                        double rel_step, HesControl scale_floor = kFdScaleFloor);

/// grad_fd specialised to total_cost: probes reuse the unperturbed prefix of
/// the rollout, so the result is identical to grad_fd(total_cost) at a
/// fraction of the work.
ControlSequence total_cost_gradient(const OcpSpec& spec, std::span<const HesControl> useq,
                                    double rel_step, HesControl scale_floor = kFdScaleFloor);

ControlSequence project_box(std::span<const HesControl> useq, const ControlBox& bounds);

struct SolverOptions {
  std::size_t max_iters = 500;
  /// Converged once the scaled projected-gradient infinity norm drops below this.
  double grad_tol = 1e-6;
  /// Converged once the relative cost decrease stays below this for
  /// `stall_window` consecutive accepted steps.
  double cost_tol = 1e-13;
  std::size_t stall_window = 5;
  std::size_t max_halvings = 40;
  /// Relative finite-difference step. The solver floors each step at
  /// fd_rel_step * max(kFdScaleFloor, variable_scale) so probes of entries
  /// near zero stay above cost roundoff.
  double fd_rel_step = 1e-6;
  /// Variables are optimized as u / variable_scale (diagonal preconditioning).
  HesControl variable_scale{0.01, 1e12};

  friend bool operator==(const SolverOptions&, const SolverOptions&) = default;
};

enum class StopReason { GradientTolerance, CostTolerance, LineSearchStalled, IterationCap };

std::string to_string(StopReason r);

struct SolveResult {
  ControlSequence controls;
  std::vector<double> cost_history;  ///< cost of every accepted iterate, starting with init
  std::size_t iterations = 0;
  bool converged = false;
  StopReason reason = StopReason::IterationCap;
};

/// Projected gradient descent on total_cost with halving backtracking.
/// Iterates stay inside spec.bounds and the cost history never increases.
/// With a custom `cost` the generic grad_fd path is used instead.
SolveResult solve_open_loop(const OcpSpec& spec, std::span<const HesControl> init,
                            const SolverOptions& opts = {});
SolveResult minimize_projected(const SequenceCost& cost, std::span<const HesControl> init,
                               const ControlBox& bounds, const SolverOptions& opts);

enum class HorizonMode { Shrinking, Receding };

std::string to_string(HorizonMode m);
HorizonMode horizon_mode_from_string(const std::string& s);

struct OuterUpdate {
  HesControl control;    ///< first input of the new plan
  ControlSequence plan;  ///< full new plan, plan.front() == control
  bool converged = false;
  std::size_t iterations = 0;
};

/// The outer controller c_out: re-solves the OCP from each measured state and
/// returns the first control of the new plan. Keeps the previous plan as a
/// warm start.
class OuterController {
 public:
  /// `base` fixes the full horizon (shrinking) or window length (receding).
  OuterController(OcpSpec base, HorizonMode mode, SolverOptions opts = {});

  /// Never plan past this absolute stage; receding windows are clipped.
  void set_final_stage(std::size_t stage) { final_stage_ = stage; }

  /// Seed the warm start, e.g. with an already-computed open-loop plan.
  void set_plan(ControlSequence plan, std::size_t plan_stage);

  /// Replan from `x_meas` measured after `stage` stages since the start.
  OuterUpdate update(const HesState& x_meas, std::size_t stage);

  const OcpSpec& base() const { return base_; }
  HorizonMode mode() const { return mode_; }

 private:
  ControlSequence warm_start(std::size_t stage, std::size_t horizon) const;

  OcpSpec base_;
  HorizonMode mode_;
  SolverOptions opts_;
  ControlSequence plan_;
  std::size_t plan_stage_ = 0;
  std::optional<std::size_t> final_stage_;
};

/// Functional form of the outer controller for one-off calls.
OuterUpdate c_out(const HesState& x_meas, const OcpSpec& spec, HorizonMode mode,
                  std::span<const HesControl> warm_start, const SolverOptions& opts = {});

}  // namespace hes
