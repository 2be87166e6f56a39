#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hes {

/// Violated precondition or type invariant on an input value.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The integrator produced a non-finite value. `step` is the index of the
/// integrator step within a rollout (0 for a single rk4_step call) and `stage`
/// the Runge-Kutta stage (1..4) that failed.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(std::size_t step, int stage, const std::string& what)
      : std::runtime_error(what), step_(step), stage_(stage) {}

  std::size_t step() const noexcept { return step_; }
  int stage() const noexcept { return stage_; }

 private:
  std::size_t step_;
  int stage_;
};

/// Malformed or invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hes
