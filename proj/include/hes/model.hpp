#pragma once

// AYS climate-economy model: state, control and parameter types, the model
// right-hand side, a fixed-step RK4 integrator and plant parameter
// perturbation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hes/error.hpp"

namespace hes {

/// AYS state. A: excess atmospheric carbon [GtC], Y: gross world product
/// [$/yr], S: renewable knowledge stock [GJ]. Also used for state rates.
struct HesState {
  double A = 0.0;
  double Y = 0.0;
  double S = 0.0;

  friend bool operator==(const HesState&, const HesState&) = default;
};

inline HesState operator+(const HesState& a, const HesState& b) {
  return {a.A + b.A, a.Y + b.Y, a.S + b.S};
}
inline HesState operator-(const HesState& a, const HesState& b) {
  return {a.A - b.A, a.Y - b.Y, a.S - b.S};
}
inline HesState operator*(double k, const HesState& a) { return {k * a.A, k * a.Y, k * a.S}; }

inline bool is_finite(double v) { return std::isfinite(v); }
inline bool is_finite(const HesState& x) {
  return std::isfinite(x.A) && std::isfinite(x.Y) && std::isfinite(x.S);
}

/// Throws DomainError unless all fields are finite and non-negative.
void validate(const HesState& x);

/// AYS control. beta: growth index change [1/yr], sigma: break-even knowledge
/// level [GJ].
struct HesControl {
  double beta = 0.0;
  double sigma = 0.0;

  friend bool operator==(const HesControl&, const HesControl&) = default;
};

inline bool is_finite(const HesControl& u) {
  return std::isfinite(u.beta) && std::isfinite(u.sigma);
}

void validate(const HesControl& u);

/// Initial conditions of the reference scenario.
inline constexpr HesState kInitialState{840.0, 7e13, 5e11};
inline constexpr HesControl kInitialControl{0.03, 5e12};

struct AysParams {
  double theta = 8.57e-5;     ///< climate damage [1/(yr GtC)]
  double eps_energy = 147.0;  ///< energy efficiency [$/GJ]
  double phi_fossil = 4.7e10; ///< fossil combustion efficiency [GJ/GtC]
  double tau_A = 50.0;        ///< carbon decay time [yr]
  double tau_S = 50.0;        ///< knowledge decay time [yr]
  double rho = 2.0;           ///< knowledge substitution exponent

  friend bool operator==(const AysParams&, const AysParams&) = default;

  /// Throws DomainError unless every field is finite and strictly positive.
  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<HesState> states;
  std::vector<HesControl> controls;  // controls[i] acts on [times[i], times[i+1])

  /// Throws DomainError if times are not strictly increasing or the lengths
  /// disagree.
  void validate() const;
};

/// AYS vector field f(x, u). Throws DomainError on non-finite input or when
/// sigma^rho + S^rho vanishes.
HesState ays_rhs(const HesState& x, const HesControl& u, const AysParams& p);

/// Type-erased dynamics, mainly for tests and alternate models.
using Dynamics = std::function<HesState(const HesState&, const HesControl&)>;

/// Piecewise-constant control schedule indexed by integrator step.
using ControlSchedule = std::function<HesControl(std::size_t step)>;

namespace detail {

template <class State, class Field>
State rk4(const Field& f, const State& x, double h, std::size_t step_index) {
  using hes::is_finite;
  const auto check = [step_index](const State& k, int stage) {
    if (!is_finite(k)) {
      throw IntegrationError(step_index, stage,
                             "non-finite RK4 stage " + std::to_string(stage) + " at step " +
                                 std::to_string(step_index));
    }
  };
  const State k1 = f(x);
  check(k1, 1);
  const State k2 = f(x + (0.5 * h) * k1);
  check(k2, 2);
  const State k3 = f(x + (0.5 * h) * k2);
  check(k3, 3);
  const State k4 = f(x + h * k3);
  check(k4, 4);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// One classical RK4 step of an autonomous field `f(x)`. Works for any state
/// type closed under `+` and scalar `*` (double, HesState, ...).
template <class State, class Field>
State rk4_step(const Field& f, const State& x, double h) {
  if (!(h > 0.0)) throw DomainError("rk4_step: step size must be positive");
  return detail::rk4(f, x, h, 0);
}

/// One RK4 step of `rhs(x, u)` with u held constant over the step.
template <class Rhs>
HesState rk4_step(const Rhs& rhs, const HesState& x, const HesControl& u, double h) {
  return rk4_step([&](const HesState& s) { return rhs(s, u); }, x, h);
}

/// Rolls `rhs` forward `n_steps` steps from x0 under a zero-order-hold
/// schedule. Integration failures carry the offending step index.
template <class Rhs>
Trajectory simulate(const Rhs& rhs, const HesState& x0, const ControlSchedule& schedule,
                    double h, std::size_t n_steps, double t0 = 0.0) {
  if (!(h > 0.0)) throw DomainError("simulate: step size must be positive");
  Trajectory traj;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  traj.controls.reserve(n_steps);
  traj.times.push_back(t0);
  traj.states.push_back(x0);
  HesState x = x0;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const HesControl u = schedule(k);
    x = detail::rk4([&](const HesState& s) { return rhs(s, u); }, x, h, k);
    traj.controls.push_back(u);
    traj.states.push_back(x);
    traj.times.push_back(t0 + static_cast<double>(k + 1) * h);
  }
  return traj;
}

/// Overload for an explicit control list; runs one step per control.
template <class Rhs>
Trajectory simulate(const Rhs& rhs, const HesState& x0, std::span<const HesControl> controls,
                    double h, double t0 = 0.0) {
  return simulate(
      rhs, x0, [controls](std::size_t k) { return controls[k]; }, h, controls.size(), t0);
}

/// Field object binding a parameter set, usable wherever a `Rhs` is expected.
struct AysField {
  AysParams params;
  HesState operator()(const HesState& x, const HesControl& u) const {
    return ays_rhs(x, u, params);
  }
};

/// Returns a copy of p with theta, eps_energy and phi_fossil each scaled by
/// an independent factor uniform in [1 - delta_max, 1 + delta_max]. The time
/// constants and rho are left alone. Deterministic in `seed`.
AysParams perturb_params(const AysParams& p, double delta_max, std::uint64_t seed);

}  // namespace hes
