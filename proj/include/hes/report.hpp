#pragma once

// CSV rendering of runs and demos, and atomic file output. Floating-point
// values are written with 17 significant digits so repeated runs diff
// byte-for-byte.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "hes/inner_loop.hpp"
#include "hes/model.hpp"
#include "hes/scenario.hpp"

namespace hes {

std::string format_double(double v);

/// time_yr,A,Y,S,beta,sigma. The last row repeats the last control.
std::string trajectory_csv(const Trajectory& traj);

/// time_yr,A_ref,A,Y,S,beta,sigma,replanned
std::string run_csv(const RunResult& run);

/// iteration,cost
std::string cost_history_csv(std::span<const double> history);

/// iteration,r_1..r_n,u_meas_1..u_meas_m,inner_cost
std::string inner_history_csv(const InnerLoopResult& result);

struct SummaryRow {
  std::uint64_t seed = 0;
  double rmse_open = 0.0;
  double rmse_closed = 0.0;
  double delay_open_yr = 0.0;
  double delay_closed_yr = 0.0;
};

/// seed,rmse_open,rmse_closed,delay_open_yr,delay_closed_yr, sorted by seed.
std::string summary_csv(std::span<const SummaryRow> rows);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace hes
