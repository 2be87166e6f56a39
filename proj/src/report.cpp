#include "hes/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace hes {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// Control applied from sample i; the final sample repeats the last one.
const HesControl& control_at(const std::vector<HesControl>& controls, std::size_t i) {
  static const HesControl none{};
  if (controls.empty()) return none;
  return controls[std::min(i, controls.size() - 1)];
}

}  // namespace

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << "time_yr,A,Y,S,beta,sigma\n";
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const HesState& x = traj.states[i];
    const HesControl& u = control_at(traj.controls, i);
    out << format_double(traj.times[i]) << ',' << format_double(x.A) << ','
        << format_double(x.Y) << ',' << format_double(x.S) << ',' << format_double(u.beta)
        << ',' << format_double(u.sigma) << '\n';
  }
  return out.str();
}

std::string run_csv(const RunResult& run) {
  const Trajectory& traj = run.plant_trajectory;
  if (run.reference.size() != traj.states.size()) {
    throw DomainError("run_csv: reference and trajectory are not time-aligned");
  }
  std::ostringstream out;
  out << "time_yr,A_ref,A,Y,S,beta,sigma,replanned\n";
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const HesState& x = traj.states[i];
    const HesControl& u = control_at(traj.controls, i);
    const bool replanned = i < run.replanned.size() && run.replanned[i];
    out << format_double(traj.times[i]) << ',' << format_double(run.reference[i]) << ','
        << format_double(x.A) << ',' << format_double(x.Y) << ',' << format_double(x.S) << ','
        << format_double(u.beta) << ',' << format_double(u.sigma) << ',' << (replanned ? 1 : 0)
        << '\n';
  }
  return out.str();
}

std::string cost_history_csv(std::span<const double> history) {
  std::ostringstream out;
  out << "iteration,cost\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << i << ',' << format_double(history[i]) << '\n';
  }
  return out.str();
}

std::string inner_history_csv(const InnerLoopResult& result) {
  std::ostringstream out;
  const Eigen::Index nr = result.history.empty() ? 0 : result.history.front().r.size();
  const Eigen::Index nu = result.history.empty() ? 0 : result.history.front().u_meas.size();
  out << "iteration";
  for (Eigen::Index i = 1; i <= nr; ++i) out << ",r_" << i;
  for (Eigen::Index i = 1; i <= nu; ++i) out << ",u_meas_" << i;
  out << ",inner_cost\n";
  for (const InnerIterate& it : result.history) {
    out << it.iteration;
    for (Eigen::Index i = 0; i < nr; ++i) out << ',' << format_double(it.r[i]);
    for (Eigen::Index i = 0; i < nu; ++i) out << ',' << format_double(it.u_meas[i]);
    out << ',' << format_double(it.cost) << '\n';
  }
  return out.str();
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::vector<SummaryRow> sorted(rows.begin(), rows.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const SummaryRow& a, const SummaryRow& b) { return a.seed < b.seed; });
  std::ostringstream out;
  out << "seed,rmse_open,rmse_closed,delay_open_yr,delay_closed_yr\n";
  for (const SummaryRow& r : sorted) {
    out << r.seed << ',' << format_double(r.rmse_open) << ',' << format_double(r.rmse_closed)
        << ',' << format_double(r.delay_open_yr) << ',' << format_double(r.delay_closed_yr)
        << '\n';
  }
  return out.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hes
