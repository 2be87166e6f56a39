#pragma once

// Inner loop: feedback-based optimization of actuator references. The
// reference r is updated by projected gradient descent on
//   phi(u*, u, r) = |u* - u|^2 + alpha |r|^2
// where u is the measured actuator output, so model errors in the actuator
// map are corrected by feedback.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hes/error.hpp"

namespace hes {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned box in reference space.
struct Box {
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi);

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Vector& r) const;
  Vector project(const Vector& r) const;
};

/// Actuator map a: R -> U. `behavior` and `model_jacobian` are the
/// controller's model; `plant_behavior` is what the simulated actuator
/// actually does.
struct ActuatorMap {
  std::function<Vector(const Vector&)> behavior;
  std::function<Vector(const Vector&)> plant_behavior;
  std::function<Matrix(const Vector&)> model_jacobian;
  Box reference_set;
};

/// a(r) = r on the box, with a plant that realizes `plant_gain * r`.
ActuatorMap make_identity_actuator(Box reference_set, double plant_gain = 1.0);

/// a(r) = M r + b with a plant (plant_M, plant_b).
ActuatorMap make_affine_actuator(Matrix model_M, Vector model_b, Matrix plant_M, Vector plant_b,
                                 Box reference_set);

/// Stratospheric aerosol injection actuator a = xi . phi. `phi_matrix` (3x4)
/// maps injection rates at (30N, 15N, 15S, 30S) to AOD Legendre components,
/// `xi_matrix` (3x3) maps those to temperature Legendre components.
ActuatorMap make_sai_actuator(const Matrix& phi_matrix, const Matrix& xi_matrix,
                              const Matrix& plant_phi, const Matrix& plant_xi, Box bounds);

/// Synthetic full-rank SAI matrices, used as defaults.
Matrix default_sai_phi();
Matrix default_sai_xi();

struct InnerLoopConfig {
  double alpha = 0.0;
  /// PGD step. Unset: 0.4 / L with L the largest eigenvalue of J^T J + alpha I.
  std::optional<double> step_size;
  std::size_t max_iters = 10000;
  double tol = 1e-10;

  friend bool operator==(const InnerLoopConfig&, const InnerLoopConfig&) = default;
  void validate() const;
};

/// |u* - u|^2 + alpha |r|^2
double inner_cost(const Vector& u_star, const Vector& u, const Vector& r, double alpha);

/// Largest eigenvalue of J^T J + alpha I at r by power iteration.
double lipschitz_estimate(const ActuatorMap& map, const Vector& r, double alpha);

/// The step the update will use: cfg.step_size or 0.4 / lipschitz_estimate.
double resolve_step_size(const ActuatorMap& map, const Vector& r, const InnerLoopConfig& cfg);

/// c_in: one projected gradient step
///   r+ = P_R[r - eps (-2 J(r)^T (u* - u_meas) + 2 alpha r)]
/// with J the nominal model Jacobian and u_meas the measured output.
Vector pgd_update(const Vector& r, const Vector& u_star, const Vector& u_meas,
                  const ActuatorMap& map, const InnerLoopConfig& cfg);

struct InnerIterate {
  std::size_t iteration = 0;
  Vector r;
  Vector u_meas;
  double cost = 0.0;
};

struct InnerLoopResult {
  Vector r_final;
  std::vector<InnerIterate> history;
  bool converged = false;
};

/// Iterates pgd_update against the plant until |r+ - r| < tol or max_iters.
/// history[i] holds the reference applied at iteration i and the plant's
/// response to it.
InnerLoopResult run_inner_loop(const Vector& u_star, const Vector& r0, const ActuatorMap& map,
                               const InnerLoopConfig& cfg);

// ---- zonal Legendre decomposition ----

/// Coefficients on L0 = 1, L1 = sin(psi), L2 = (3 sin^2(psi) - 1) / 2.
struct LegendreCoeffs {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  friend bool operator==(const LegendreCoeffs&, const LegendreCoeffs&) = default;
  Vector as_vector() const { return Vector{{c0, c1, c2}}; }
  static LegendreCoeffs from_vector(const Vector& v);
};

struct LatitudeSample {
  double psi = 0.0;  ///< latitude [rad]
  double value = 0.0;
};

/// (L0, L1, L2) at latitude psi.
std::array<double, 3> legendre_basis(double psi);

double legendre_eval(double psi, const LegendreCoeffs& c);

/// Unweighted least-squares fit in the L0, L1, L2 basis. Needs at least three
/// distinct values of sin(psi).
LegendreCoeffs legendre_project(std::span<const LatitudeSample> samples);

}  // namespace hes
