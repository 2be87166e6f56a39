#include "hes/model.hpp"

#include <random>

namespace hes {

void validate(const HesState& x) {
  if (!is_finite(x)) throw DomainError("HesState: non-finite field");
  if (x.A < 0.0 || x.Y < 0.0 || x.S < 0.0) throw DomainError("HesState: negative field");
}

void validate(const HesControl& u) {
  if (!is_finite(u)) throw DomainError("HesControl: non-finite field");
  if (u.sigma < 0.0) throw DomainError("HesControl: sigma must be >= 0");
}

void AysParams::validate() const {
  const double fields[] = {theta, eps_energy, phi_fossil, tau_A, tau_S, rho};
  for (double v : fields) {
    if (!std::isfinite(v) || v <= 0.0) {
      throw DomainError("AysParams: every parameter must be finite and > 0");
    }
  }
}

void Trajectory::validate() const {
  if (states.size() != times.size()) throw DomainError("Trajectory: states/times length mismatch");
  if (times.empty()) {
    if (!controls.empty()) throw DomainError("Trajectory: controls without states");
    return;
  }
  if (controls.size() + 1 != times.size()) {
    throw DomainError("Trajectory: expected one control per interval");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DomainError("Trajectory: times not strictly increasing");
  }
}

namespace {

double power(double base, double exponent) {
  // rho = 2 is the common case and worth the shortcut inside FD gradients
  if (exponent == 2.0) return base * base;
  return std::pow(base, exponent);
}

}  // namespace

HesState ays_rhs(const HesState& x, const HesControl& u, const AysParams& p) {
  if (!is_finite(x) || !is_finite(u)) throw DomainError("ays_rhs: non-finite input");
  const double sigma_pow = power(u.sigma, p.rho);
  const double s_pow = power(x.S, p.rho);
  const double denom = sigma_pow + s_pow;
  if (!(denom != 0.0) || !std::isfinite(denom)) {
    throw DomainError("ays_rhs: degenerate fraction, sigma^rho + S^rho = 0");
  }
  const double fossil_share = sigma_pow / denom;
  const double renewable_share = s_pow / denom;
  return {
      fossil_share * x.Y / (p.eps_energy * p.phi_fossil) - x.A / p.tau_A,
      (u.beta - p.theta * x.A) * x.Y,
      renewable_share * x.Y / p.eps_energy - x.S / p.tau_S,
  };
}

AysParams perturb_params(const AysParams& p, double delta_max, std::uint64_t seed) {
  if (!(delta_max >= 0.0 && delta_max < 1.0)) {
    throw DomainError("perturb_params: delta_max must lie in [0, 1)");
  }
  // mt19937_64 output is fixed by the standard; the uniform mapping is done by
  // hand because std::uniform_real_distribution is implementation-defined.
  std::mt19937_64 rng(seed);
  const auto factor = [&] {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    return 1.0 + delta_max * (2.0 * unit - 1.0);
  };
  AysParams out = p;
  out.theta *= factor();
  out.eps_energy *= factor();
  out.phi_fossil *= factor();
  return out;
}

}  // namespace hes
