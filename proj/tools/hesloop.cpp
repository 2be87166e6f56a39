// hesloop: run the AYS open-loop / MPC experiment and the inner-loop demos
// from a JSON configuration and write CSV results.
//
// Exit codes: 0 success, 1 usage error, 2 configuration error, 3 numerical
// failure (outputs that could be computed are still written).

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "hes/config.hpp"
#include "hes/report.hpp"
#include "hes/scenario.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Log {
 public:
  explicit Log(int verbosity) : verbosity_(verbosity) {}

  void info(const std::string& msg) const { emit(1, "info", msg); }
  void debug(const std::string& msg) const { emit(2, "debug", msg); }
  void warn(const std::string& msg) const { emit(0, "warning", msg); }
  int verbosity() const { return verbosity_; }

 private:
  void emit(int level, const char* tag, const std::string& msg) const {
    if (verbosity_ < level) return;
    std::lock_guard lock(mutex_);
    std::cerr << "hesloop: " << tag << ": " << msg << '\n';
  }

  int verbosity_;
  mutable std::mutex mutex_;
};

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string mode;
  int verbosity = 0;
};

hes::ExperimentConfig load_config(const Options& opts, const Log& log) {
  hes::ExperimentConfig config;
  if (opts.config_path.empty()) {
    log.info("no --config given, using built-in defaults");
  } else {
    std::size_t defaults = 0;
    config = hes::parse_config(opts.config_path, [&](const std::string& line) {
      ++defaults;
      log.info(line);
    });
    if (log.verbosity() < 1 && defaults > 0) {
      std::cerr << "hesloop: " << defaults << " defaults applied to " << opts.config_path
                << " (-v lists them)\n";
    }
  }
  if (opts.seed) config.seed = *opts.seed;
  if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
  if (!opts.mode.empty()) {
    try {
      config.modes = hes::run_modes_from_string(opts.mode);
    } catch (const hes::DomainError& e) {
      throw UsageError(std::string("--mode: ") + e.what());
    }
  }
  return config;
}

fs::path prepare_output_dir(const hes::ExperimentConfig& config) {
  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw UsageError("output directory '" + dir.string() + "' is not writable");
  }
  return dir;
}

void write(const fs::path& path, const std::string& content, const Log& log) {
  try {
    hes::write_file_atomic(path, content);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  log.info("wrote " + path.string());
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  static const std::regex pattern(R"(^\s*(\d+)\s*(?:\.\.\s*(\d+))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw UsageError("--seeds expects N..M, got '" + text + "'");
  }
  try {
    const std::uint64_t first = std::stoull(m[1].str());
    const std::uint64_t last = m[2].matched ? std::stoull(m[2].str()) : first;
    if (first > last) throw UsageError("--seeds: first seed exceeds last seed");
    return {first, last};
  } catch (const std::out_of_range&) {
    throw UsageError("--seeds: seed out of range");
  }
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HES_LOOP_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap < 1) throw std::invalid_argument(env);
      n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      throw UsageError(std::string("HES_LOOP_THREADS must be a positive integer, got '") + env +
                       "'");
    }
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

hes::NominalPlan plan_or_warn(const hes::ExperimentConfig& config, const Log& log, bool& failed) {
  log.info("solving the nominal plan over " + std::to_string(config.span_steps()) + " stages");
  hes::NominalPlan plan = hes::make_nominal_plan(config);
  log.info("plan: " + std::to_string(plan.iterations) + " iterations, cost " +
           hes::format_double(plan.cost_history.empty() ? 0.0 : plan.cost_history.back()));
  if (!plan.converged) {
    log.warn("nominal plan did not converge within plan_solver.max_iters");
    failed = true;
  }
  return plan;
}

bool check_run(const hes::RunResult& run, const std::string& what, const Log& log) {
  if (run.unconverged_steps() == 0) return true;
  log.warn(what + ": " + std::to_string(run.unconverged_steps()) + " MPC solves did not converge");
  return false;
}

int cmd_simulate(const hes::ExperimentConfig& config, const Log& log) {
  const fs::path dir = prepare_output_dir(config);
  const hes::AysParams plant =
      hes::perturb_params(config.nominal_params, config.delta_max, config.seed);
  const std::size_t n = config.span_steps();
  const hes::HesControl u = config.u_ref;
  const hes::Trajectory traj = hes::simulate(
      hes::AysField{plant}, config.x0, [u](std::size_t) { return u; }, config.step_h, n);
  write(dir / ("simulate_" + seed_tag(config.seed) + ".csv"), hes::trajectory_csv(traj), log);
  return kOk;
}

int cmd_plan(const hes::ExperimentConfig& config, const Log& log) {
  const fs::path dir = prepare_output_dir(config);
  bool failed = false;
  const hes::NominalPlan plan = plan_or_warn(config, log, failed);
  write(dir / "plan.csv", hes::trajectory_csv(plan.rollout), log);
  write(dir / "plan_cost.csv", hes::cost_history_csv(plan.cost_history), log);
  return failed ? kNumerical : kOk;
}

int cmd_mpc(const hes::ExperimentConfig& config, const Log& log) {
  const fs::path dir = prepare_output_dir(config);
  bool failed = false;
  const hes::NominalPlan plan = plan_or_warn(config, log, failed);
  const std::string tag = seed_tag(config.seed);
  if (config.modes != hes::RunModes::Closed) {
    const hes::RunResult open = hes::run_open_loop(config, plan);
    write(dir / ("run_open_" + tag + ".csv"), hes::run_csv(open), log);
    log.info("open loop: rmse_A " + hes::format_double(open.metrics.rmse_A) + " GtC");
  }
  if (config.modes != hes::RunModes::Open) {
    const hes::RunResult closed = hes::run_closed_loop(config, plan);
    write(dir / ("run_closed_" + tag + ".csv"), hes::run_csv(closed), log);
    log.info("closed loop: rmse_A " + hes::format_double(closed.metrics.rmse_A) + " GtC");
    failed = !check_run(closed, "closed loop", log) || failed;
  }
  return failed ? kNumerical : kOk;
}

int cmd_compare(hes::ExperimentConfig config, const Options& opts, const Log& log) {
  if (!opts.seeds.empty()) {
    std::tie(config.compare_first_seed, config.compare_last_seed) = parse_seed_range(opts.seeds);
  }
  const fs::path dir = prepare_output_dir(config);
  bool failed = false;
  const hes::NominalPlan plan = plan_or_warn(config, log, failed);

  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = config.compare_first_seed;; ++s) {
    seeds.push_back(s);
    if (s == config.compare_last_seed) break;
  }
  const bool want_open = config.modes != hes::RunModes::Closed;
  const bool want_closed = config.modes != hes::RunModes::Open;

  std::vector<hes::SummaryRow> rows(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::vector<char> seed_failed(seeds.size(), 0);
  std::atomic<std::size_t> next{0};
  const std::size_t workers = worker_count(seeds.size());
  log.info("running " + std::to_string(seeds.size()) + " seeds on " + std::to_string(workers) +
           " threads");

  auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      hes::ExperimentConfig c = config;
      c.seed = seeds[i];
      hes::SummaryRow& row = rows[i];
      row.seed = c.seed;
      try {
        if (want_open) {
          const hes::RunResult open = hes::run_open_loop(c, plan);
          hes::write_file_atomic(dir / ("run_open_" + seed_tag(c.seed) + ".csv"),
                                 hes::run_csv(open));
          row.rmse_open = open.metrics.rmse_A;
          row.delay_open_yr = open.metrics.delay_years;
        }
        if (want_closed) {
          const hes::RunResult closed = hes::run_closed_loop(c, plan);
          hes::write_file_atomic(dir / ("run_closed_" + seed_tag(c.seed) + ".csv"),
                                 hes::run_csv(closed));
          row.rmse_closed = closed.metrics.rmse_A;
          row.delay_closed_yr = closed.metrics.delay_years;
          if (!check_run(closed, seed_tag(c.seed), log)) seed_failed[i] = 1;
        }
        log.info(seed_tag(c.seed) + ": rmse open " + hes::format_double(row.rmse_open) +
                 ", closed " + hes::format_double(row.rmse_closed));
      } catch (const std::exception& e) {
        errors[i] = e.what();
        seed_failed[i] = 1;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();

  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!errors[i].empty()) log.warn(seed_tag(seeds[i]) + " failed: " + errors[i]);
    if (seed_failed[i]) failed = true;
  }
  write(dir / "summary.csv", hes::summary_csv(rows), log);
  return failed ? kNumerical : kOk;
}

int demo_exit(const hes::InnerLoopResult& result, const char* name, const Log& log) {
  const hes::InnerIterate& last = result.history.back();
  log.info(std::string(name) + ": " + std::to_string(last.iteration) + " iterations, inner cost " +
           hes::format_double(last.cost));
  if (!result.converged) {
    log.warn(std::string(name) + " did not converge within max_iters");
    return kNumerical;
  }
  return kOk;
}

int cmd_inner_demo(const hes::ExperimentConfig& config, const Log& log) {
  const fs::path dir = prepare_output_dir(config);
  const hes::InnerLoopResult result = hes::run_inner_demo(config.inner_demo);
  write(dir / "inner_demo.csv", hes::inner_history_csv(result), log);
  return demo_exit(result, "inner-demo", log);
}

int cmd_sai_demo(const hes::ExperimentConfig& config, const Log& log) {
  const fs::path dir = prepare_output_dir(config);
  const hes::InnerLoopResult result = hes::run_sai_demo(config.sai_demo);
  write(dir / "sai_demo.csv", hes::inner_history_csv(result), log);
  return demo_exit(result, "sai-demo", log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested feedback control of the AYS human-earth model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Options opts;
  app.add_option("--config", opts.config_path, "JSON experiment configuration")
      ->check(CLI::ExistingFile);
  app.add_option("--out", opts.out_dir, "output directory (overrides output_dir)");
  app.add_option("--seed", opts.seed, "plant perturbation seed (overrides seed)");
  app.add_flag("-v", opts.verbosity, "more logging; repeat for debug output");

  auto* simulate = app.add_subcommand("simulate", "roll out the perturbed plant at u_ref");
  auto* plan = app.add_subcommand("plan", "solve the nominal open-loop plan");
  auto* mpc = app.add_subcommand("mpc", "open- and/or closed-loop run for one seed");
  auto* compare = app.add_subcommand("compare", "both modes over a seed range plus summary.csv");
  auto* inner = app.add_subcommand("inner-demo", "identity actuator with gain error");
  auto* sai = app.add_subcommand("sai-demo", "stratospheric aerosol injection actuator");

  for (auto* sub : {mpc, compare}) {
    sub->add_option("--mode", opts.mode, "open|closed|both")
        ->check(CLI::IsMember({"open", "closed", "both"}));
  }
  compare->add_option("--seeds", opts.seeds, "seed range N..M");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands({});
    if (argc > 1 && argv[1][0] != '-' &&
        std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == argv[1]; })) {
      std::cerr << "hesloop: unknown subcommand '" << argv[1] << "'\n" << app.help();
      return kUsage;
    }
    app.exit(e);
    return kUsage;
  }

  const Log log(opts.verbosity);
  try {
    const hes::ExperimentConfig config = load_config(opts, log);
    if (log.verbosity() >= 2) log.debug("effective configuration:\n" + hes::serialize_config(config));
    if (*simulate) return cmd_simulate(config, log);
    if (*plan) return cmd_plan(config, log);
    if (*mpc) return cmd_mpc(config, log);
    if (*compare) return cmd_compare(config, opts, log);
    if (*inner) return cmd_inner_demo(config, log);
    if (*sai) return cmd_sai_demo(config, log);
  } catch (const UsageError& e) {
    std::cerr << "hesloop: error: " << e.what() << '\n';
    return kUsage;
  } catch (const hes::ConfigError& e) {
    std::cerr << "hesloop: config error: " << e.what() << '\n';
    return kConfig;
  } catch (const hes::IntegrationError& e) {
    std::cerr << "hesloop: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const hes::DomainError& e) {
    std::cerr << "hesloop: numerical failure: " << e.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}
