#pragma once

// Open-loop vs closed-loop experiment under plant parameter uncertainty.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hes/inner_loop.hpp"
#include "hes/model.hpp"
#include "hes/outer_loop.hpp"

namespace hes {

/// What the closed-loop MPC minimizes when it replans.
///  - Tracking: squared deviation from the nominal plan (A-reference and
///    planned controls); the nominal plan is its optimum when plant = model.
///  - Regulation: the planning cost itself, re-solved from the measured state.
enum class ClosedLoopObjective { Tracking, Regulation };

std::string to_string(ClosedLoopObjective o);
ClosedLoopObjective closed_loop_objective_from_string(const std::string& s);

enum class RunModes { Open, Closed, Both };

std::string to_string(RunModes m);
RunModes run_modes_from_string(const std::string& s);

/// Exogenous inputs of the welfare stage cost.
struct WelfareInputs {
  double eta = 0.0;
  std::vector<double> population;
  std::vector<double> discount;

  friend bool operator==(const WelfareInputs&, const WelfareInputs&) = default;
};

/// Settings of the inner-loop demos.
struct InnerDemoConfig {
  InnerLoopConfig loop{0.1, std::nullopt, 10000, 1e-10};
  double plant_gain = 1.2;                 ///< identity demo: plant = gain * r
  std::vector<double> u_star{1.0};
  std::vector<double> r0{0.0};
  std::vector<double> lower{-10.0};
  std::vector<double> upper{10.0};

  friend bool operator==(const InnerDemoConfig&, const InnerDemoConfig&) = default;
};

struct SaiDemoConfig {
  Matrix phi = default_sai_phi();
  Matrix xi = default_sai_xi();
  Matrix plant_phi = 1.15 * default_sai_phi();
  Matrix plant_xi = default_sai_xi();
  std::vector<double> lower{0.0, 0.0, 0.0, 0.0};
  std::vector<double> upper{10.0, 10.0, 10.0, 10.0};
  std::vector<double> r0{0.0, 0.0, 0.0, 0.0};
  LegendreCoeffs target{-1.0, 0.1, 0.2};  ///< desired temperature change components [K]
  InnerLoopConfig loop{0.0, std::nullopt, 20000, 1e-10};

  friend bool operator==(const SaiDemoConfig& a, const SaiDemoConfig& b);
};

struct ExperimentConfig {
  AysParams nominal_params;
  double delta_max = 0.2;
  std::uint64_t seed = 42;
  HesState x0 = kInitialState;
  HesControl u_ref = kInitialControl;

  double step_h = 1.0;
  double span_years = 100.0;
  double measurement_period = 2.0;  ///< [yr], a positive multiple of step_h

  std::size_t mpc_horizon = 50;  ///< MPC window in stages (receding mode)
  HorizonMode mode = HorizonMode::Receding;
  ClosedLoopObjective objective = ClosedLoopObjective::Tracking;
  double tracking_lambda = 1.0;  ///< divisor of (A - A_ref)^2 in the tracking cost [GtC^2]

  CostWeights weights;
  ControlBox bounds;
  StateLimits state_limits;
  PenaltyScales penalty_scales{1.0, 1e11, 1e9};
  double penalty_weight = 1e-3;
  std::optional<WelfareInputs> welfare;  ///< set: plan with the welfare stage cost

  SolverOptions plan_solver{20000, 1e-6, 1e-13, 5, 40, 1e-6, {0.01, 1e12}};
  SolverOptions mpc_solver{2000, 1e-6, 1e-13, 5, 40, 1e-6, {0.01, 1e12}};

  RunModes modes = RunModes::Both;
  std::size_t delay_max_lag = 15;  ///< [samples]
  std::uint64_t compare_first_seed = 1;
  std::uint64_t compare_last_seed = 20;
  std::string output_dir = "out";

  InnerDemoConfig inner_demo;
  SaiDemoConfig sai_demo;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const;
  std::size_t span_steps() const;
  std::size_t measurement_steps() const;

  /// Planning problem over the whole span under nominal parameters.
  OcpSpec planning_spec() const;
};

/// The nominal open-loop optimum over the span; its A-series is the reference.
struct NominalPlan {
  ControlSequence controls;
  Trajectory rollout;
  std::vector<double> cost_history;
  bool converged = false;
  std::size_t iterations = 0;

  std::vector<double> reference() const;
};

NominalPlan make_nominal_plan(const ExperimentConfig& config);

/// A-component of the nominal optimal rollout.
std::vector<double> make_reference(const ExperimentConfig& config);

struct RunMetrics {
  double rmse_A = 0.0;                       ///< [GtC]
  double delay_years = 0.0;
  double constraint_violation_integral = 0.0;  ///< relative violation of the target region integrated over time [yr]
};

struct RunResult {
  std::vector<double> reference;
  Trajectory plant_trajectory;
  ControlSequence applied_controls;
  std::vector<bool> replanned;      ///< per state sample; true where the MPC replanned
  std::vector<bool> step_converged; ///< per MPC replan
  AysParams plant_params;
  RunMetrics metrics;

  std::size_t unconverged_steps() const;
};

/// Applies the nominal plan to the perturbed plant without feedback.
RunResult run_open_loop(const ExperimentConfig& config);
RunResult run_open_loop(const ExperimentConfig& config, const NominalPlan& plan);

/// Measures the perturbed plant every measurement_period, replans with the
/// outer controller and follows the latest plan until the next measurement.
RunResult run_closed_loop(const ExperimentConfig& config);
RunResult run_closed_loop(const ExperimentConfig& config, const NominalPlan& plan);

double rmse(std::span<const double> traj, std::span<const double> ref);

/// Lag in [0, max_lag] samples that best aligns traj shifted back with ref,
/// scored by the sum of squared differences over a common window. Ties go to
/// the smaller lag.
std::size_t delay_estimate(std::span<const double> traj, std::span<const double> ref,
                           std::size_t max_lag);

/// Relative violation of A <= A_max and Y >= Y_min integrated over the
/// trajectory with the rectangle rule [yr].
double constraint_violation_integral(const Trajectory& traj, const StateLimits& limits);

/// Identity actuator whose plant realizes plant_gain * r, driven to u_star.
InnerLoopResult run_inner_demo(const InnerDemoConfig& demo);

/// SAI actuator driven to the target temperature Legendre components.
InnerLoopResult run_sai_demo(const SaiDemoConfig& demo);

}  // namespace hes
