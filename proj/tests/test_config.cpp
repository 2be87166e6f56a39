#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hes/config.hpp"
#include "hes/report.hpp"

using namespace hes;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, {}, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("minimal config falls back to defaults and logs them") {
  std::vector<std::string> log;
  const ExperimentConfig c =
      parse_config_text(R"({"seed": 7})", [&](const std::string& m) { log.push_back(m); });
  CHECK(c.seed == 7);
  CHECK(c.x0.A == 840.0);
  CHECK(c.delta_max == 0.2);
  ExperimentConfig expected;
  expected.seed = 7;
  CHECK(c == expected);

  CHECK_FALSE(log.empty());
  CHECK(std::any_of(log.begin(), log.end(),
                    [](const std::string& m) { return m.rfind("default delta_max = ", 0) == 0; }));
  CHECK(std::none_of(log.begin(), log.end(),
                     [](const std::string& m) { return m.rfind("default seed ", 0) == 0; }));
}

TEST_CASE("empty object is the built-in default") {
  CHECK(parse_config_text("{}") == ExperimentConfig{});
}

TEST_CASE("range and type errors name the key") {
  const std::string e = error_of(R"({"delta_max": 1.5})");
  CHECK(e.find("delta_max") != std::string::npos);
  CHECK(e.find("[0, 1)") != std::string::npos);

  CHECK(error_of(R"({"model": {"tau_A": -1}})").find("model.tau_A") != std::string::npos);
  CHECK(error_of(R"({"seed": "x"})").find("seed") != std::string::npos);
  CHECK(error_of(R"({"seed": -3})").find("seed") != std::string::npos);
  CHECK(error_of(R"({"bounds": {"beta": [0.1, -0.1]}})").find("bounds.beta") != std::string::npos);
  CHECK(error_of(R"({"mpc": {"mode": "sideways"}})").find("mpc.mode") != std::string::npos);
}

TEST_CASE("unknown keys are rejected") {
  CHECK(error_of(R"({"sede": 1})").find("sede") != std::string::npos);
  CHECK(error_of(R"({"plan_solver": {"grad_toll": 1}})").find("plan_solver.grad_toll") !=
        std::string::npos);
}

TEST_CASE("syntax errors report line and column") {
  const std::string e = error_of("{\n  \"seed\": 1,\n  \"delta_max\" 0.1\n}");
  CHECK(e.rfind("cfg.json:3:", 0) == 0);
  CHECK(e.find("syntax") != std::string::npos);
}

TEST_CASE("cross-field validation is reported as a config error") {
  const std::string e = error_of(R"({"measurement_period": 1.5})");
  CHECK(e.find("measurement_period") != std::string::npos);
}

TEST_CASE("serialize and parse round trip") {
  ExperimentConfig c;
  c.seed = 123;
  c.delta_max = 0.15;
  c.span_years = 40;
  c.mode = HorizonMode::Shrinking;
  c.objective = ClosedLoopObjective::Regulation;
  c.weights.mu = 3.5e24;
  c.plan_solver.fd_rel_step = 1e-7;
  c.inner_demo.loop.step_size = 0.05;
  c.sai_demo.plant_phi(1, 2) = 0.123456789;
  c.output_dir = "results/run 1";
  CHECK(parse_config_text(serialize_config(c)) == c);

  SUBCASE("with welfare inputs") {
    c.welfare = WelfareInputs{2.0, std::vector<double>(40, 7.5), std::vector<double>(40, 0.97)};
    const ExperimentConfig back = parse_config_text(serialize_config(c));
    REQUIRE(back.welfare.has_value());
    CHECK(back == c);
  }
  SUBCASE("serialization is stable") {
    CHECK(serialize_config(parse_config_text(serialize_config(c))) == serialize_config(c));
  }
}

TEST_CASE("parse_config reads files") {
  const auto dir = std::filesystem::temp_directory_path() / "hes_config_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.json";
  write_file_atomic(path, R"({"seed": 9, "span_years": 30})");
  const ExperimentConfig c = parse_config(path);
  CHECK(c.seed == 9);
  CHECK(c.span_years == 30.0);
  CHECK_THROWS_AS(parse_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CSV rendering") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(840) == "840");

  Trajectory t{{0.0, 1.0}, {{840, 7e13, 5e11}, {830, 7.1e13, 5.2e11}}, {{0.03, 5e12}}};
  const std::string csv = trajectory_csv(t);
  CHECK(first_line(csv) == "time_yr,A,Y,S,beta,sigma");
  CHECK(line_count(csv) == 3);

  const std::vector<double> hist{3.0, 2.0, 1.5};
  const std::string cost = cost_history_csv(hist);
  CHECK(first_line(cost) == "iteration,cost");
  CHECK(cost.find("\n2,1.5\n") != std::string::npos);

  InnerLoopResult inner;
  inner.history = {{0, Vector{{0.0, 1.0}}, Vector{{0.5}}, 0.25}};
  CHECK(first_line(inner_history_csv(inner)) == "iteration,r_1,r_2,u_meas_1,inner_cost");

  const std::vector<SummaryRow> rows{{3, 1, 0.5, 0, 0}, {1, 2, 0.25, 1, 0}};
  const std::string summary = summary_csv(rows);
  CHECK(first_line(summary) == "seed,rmse_open,rmse_closed,delay_open_yr,delay_closed_yr");
  CHECK(summary.find("\n1,") < summary.find("\n3,"));
}

TEST_CASE("write_file_atomic replaces content and leaves no temporary") {
  const auto dir = std::filesystem::temp_directory_path() / "hes_atomic_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / "out.csv";
  write_file_atomic(path, "first\n");
  write_file_atomic(path, "second\n");
  CHECK(slurp(path) == "second\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& entry : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  std::filesystem::remove_all(dir);
}
