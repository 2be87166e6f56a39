#include "hes/inner_loop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hes {

Box::Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw DomainError("Box: bound dimension mismatch");
  if (!lower.allFinite() || !upper.allFinite()) throw DomainError("Box: non-finite bound");
  if ((lower.array() > upper.array()).any()) throw DomainError("Box: empty box");
}

bool Box::contains(const Vector& r) const {
  return r.size() == lower.size() && (r.array() >= lower.array()).all() &&
         (r.array() <= upper.array()).all();
}

Vector Box::project(const Vector& r) const {
  if (r.size() != lower.size()) throw DomainError("Box::project: dimension mismatch");
  return r.cwiseMax(lower).cwiseMin(upper);
}

ActuatorMap make_identity_actuator(Box reference_set, double plant_gain) {
  const Eigen::Index n = reference_set.dim();
  return make_affine_actuator(Matrix::Identity(n, n), Vector::Zero(n),
                              plant_gain * Matrix::Identity(n, n), Vector::Zero(n),
                              std::move(reference_set));
}

ActuatorMap make_affine_actuator(Matrix model_M, Vector model_b, Matrix plant_M, Vector plant_b,
                                 Box reference_set) {
  const Eigen::Index n = reference_set.dim();
  if (model_M.cols() != n || plant_M.cols() != n || model_M.rows() != plant_M.rows() ||
      model_b.size() != model_M.rows() || plant_b.size() != plant_M.rows()) {
    throw DomainError("make_affine_actuator: dimension mismatch");
  }
  if (!model_M.allFinite() || !plant_M.allFinite() || !model_b.allFinite() || !plant_b.allFinite()) {
    throw DomainError("make_affine_actuator: non-finite matrix entry");
  }
  ActuatorMap map;
  map.behavior = [M = model_M, b = model_b](const Vector& r) -> Vector { return M * r + b; };
  map.plant_behavior = [M = std::move(plant_M), b = std::move(plant_b)](const Vector& r) -> Vector {
    return M * r + b;
  };
  map.model_jacobian = [M = std::move(model_M)](const Vector&) -> Matrix { return M; };
  map.reference_set = std::move(reference_set);
  return map;
}

ActuatorMap make_sai_actuator(const Matrix& phi_matrix, const Matrix& xi_matrix,
                              const Matrix& plant_phi, const Matrix& plant_xi, Box bounds) {
  const auto check = [](const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
      throw DomainError(std::string("make_sai_actuator: ") + name + " must be " +
                        std::to_string(rows) + "x" + std::to_string(cols));
    }
  };
  check(phi_matrix, 3, 4, "phi_matrix");
  check(plant_phi, 3, 4, "plant_phi");
  check(xi_matrix, 3, 3, "xi_matrix");
  check(plant_xi, 3, 3, "plant_xi");
  if (bounds.dim() != 4) throw DomainError("make_sai_actuator: injection box must be 4-dimensional");
  return make_affine_actuator(xi_matrix * phi_matrix, Vector::Zero(3), plant_xi * plant_phi,
                              Vector::Zero(3), std::move(bounds));
}

Matrix default_sai_phi() {
  // rows: D0 global mean, D1 north-south asymmetry, D2 equator-to-pole
  // cols: 30N, 15N, 15S, 30S  [AOD per Tg/yr]
  Matrix phi(3, 4);
  phi << 0.010, 0.010, 0.010, 0.010,
         0.012, 0.004, -0.004, -0.012,
         0.006, -0.003, -0.003, 0.006;
  return phi;
}

Matrix default_sai_xi() {
  // temperature Legendre components [K] per unit AOD component
  Matrix xi(3, 3);
  xi << -8.0, 0.0, 0.5,
        0.0, -5.0, 0.0,
        1.0, 0.0, -4.0;
  return xi;
}

void InnerLoopConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("InnerLoopConfig: alpha must be >= 0");
  if (step_size && (!(*step_size > 0.0) || !std::isfinite(*step_size))) {
    throw DomainError("InnerLoopConfig: step_size must be > 0");
  }
  if (!(tol > 0.0)) throw DomainError("InnerLoopConfig: tol must be > 0");
}

double inner_cost(const Vector& u_star, const Vector& u, const Vector& r, double alpha) {
  if (u_star.size() != u.size()) throw DomainError("inner_cost: dimension mismatch");
  return (u_star - u).squaredNorm() + alpha * r.squaredNorm();
}

double lipschitz_estimate(const ActuatorMap& map, const Vector& r, double alpha) {
  const Matrix J = map.model_jacobian(r);
  const Matrix H = J.transpose() * J + alpha * Matrix::Identity(J.cols(), J.cols());
  Vector v = Vector::Ones(H.cols()).normalized();
  double eigenvalue = 0.0;
  for (int it = 0; it < 500; ++it) {
    const Vector w = H * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - eigenvalue) <= 1e-14 * std::abs(next)) return next;
    eigenvalue = next;
  }
  return eigenvalue;
}

double resolve_step_size(const ActuatorMap& map, const Vector& r, const InnerLoopConfig& cfg) {
  if (cfg.step_size) return *cfg.step_size;
  const double L = lipschitz_estimate(map, r, cfg.alpha);
  return L > 0.0 ? 0.4 / L : 1.0;
}

Vector pgd_update(const Vector& r, const Vector& u_star, const Vector& u_meas,
                  const ActuatorMap& map, const InnerLoopConfig& cfg) {
  cfg.validate();
  if (!map.reference_set.contains(r)) throw DomainError("pgd_update: r outside the reference set");
  if (u_star.size() != u_meas.size()) throw DomainError("pgd_update: u_star/u_meas dimension mismatch");
  const Matrix J = map.model_jacobian(r);
  if (J.rows() != u_star.size() || J.cols() != r.size()) {
    throw DomainError("pgd_update: Jacobian dimension mismatch");
  }
  const Vector gradient = -2.0 * J.transpose() * (u_star - u_meas) + 2.0 * cfg.alpha * r;
  const double eps = resolve_step_size(map, r, cfg);
  return map.reference_set.project(r - eps * gradient);
}

InnerLoopResult run_inner_loop(const Vector& u_star, const Vector& r0, const ActuatorMap& map,
                               const InnerLoopConfig& cfg) {
  cfg.validate();
  if (!map.reference_set.contains(r0)) throw DomainError("run_inner_loop: r0 outside the reference set");
  InnerLoopConfig fixed = cfg;
  fixed.step_size = resolve_step_size(map, r0, cfg);

  InnerLoopResult result;
  Vector r = r0;
  for (std::size_t it = 0;; ++it) {
    const Vector u = map.plant_behavior(r);
    result.history.push_back({it, r, u, inner_cost(u_star, u, r, cfg.alpha)});
    if (result.converged || it >= cfg.max_iters) break;
    const Vector next = pgd_update(r, u_star, u, map, fixed);
    result.converged = (next - r).norm() < cfg.tol;
    r = next;
  }
  result.r_final = r;
  return result;
}

LegendreCoeffs LegendreCoeffs::from_vector(const Vector& v) {
  if (v.size() != 3) throw DomainError("LegendreCoeffs: expected 3 components");
  return {v[0], v[1], v[2]};
}

std::array<double, 3> legendre_basis(double psi) {
  const double s = std::sin(psi);
  return {1.0, s, 0.5 * (3.0 * s * s - 1.0)};
}

double legendre_eval(double psi, const LegendreCoeffs& c) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  if (!(psi >= -half_pi && psi <= half_pi)) {
    throw DomainError("legendre_eval: latitude outside [-pi/2, pi/2]");
  }
  const auto L = legendre_basis(psi);
  return c.c0 * L[0] + c.c1 * L[1] + c.c2 * L[2];
}

LegendreCoeffs legendre_project(std::span<const LatitudeSample> samples) {
  std::vector<double> sines;
  for (const LatitudeSample& s : samples) {
    if (!std::isfinite(s.psi) || !std::isfinite(s.value)) {
      throw DomainError("legendre_project: non-finite sample");
    }
    sines.push_back(std::sin(s.psi));
  }
  std::sort(sines.begin(), sines.end());
  const auto distinct = std::unique(sines.begin(), sines.end(), [](double a, double b) {
                          return std::abs(a - b) <= 1e-12;
                        }) - sines.begin();
  if (distinct < 3) {
    throw DomainError("legendre_project: rank-deficient samples, need 3 distinct sin(psi)");
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  Matrix basis(n, 3);
  Vector values(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto L = legendre_basis(samples[static_cast<std::size_t>(i)].psi);
    basis.row(i) << L[0], L[1], L[2];
    values[i] = samples[static_cast<std::size_t>(i)].value;
  }
  return LegendreCoeffs::from_vector(basis.colPivHouseholderQr().solve(values));
}

}  // namespace hes
