#include "hes/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

namespace hes {

namespace {

using json = nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Allowed interval for a scalar field.
struct Range {
  double lo = -kInf;
  double hi = kInf;
  bool lo_closed = true;
  bool hi_closed = true;

  bool contains(double v) const {
    return std::isfinite(v) && (lo_closed ? v >= lo : v > lo) && (hi_closed ? v <= hi : v < hi);
  }
  std::string describe() const {
    std::ostringstream out;
    out << (lo_closed ? '[' : '(');
    if (std::isinf(lo)) out << "-inf"; else out << lo;
    out << ", ";
    if (std::isinf(hi)) out << "inf"; else out << hi;
    out << (hi_closed ? ']' : ')');
    return out.str();
  }
};

const Range kAny{};
const Range kPositive{0.0, kInf, false, false};
const Range kNonNegative{0.0, kInf, true, false};

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

void check_range(double v, const Range& range, const std::string& path) {
  if (!range.contains(v)) {
    fail(path, json(v).dump() + " is outside the allowed range " + range.describe());
  }
}

// ---- leaf decoding ----

void decode(const json& j, double& out, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number, got " + std::string(j.type_name()));
  out = j.get<double>();
}

template <class T>
  requires std::is_unsigned_v<T>
void decode(const json& j, T& out, const std::string& path) {
  if (!j.is_number_unsigned()) fail(path, "expected a non-negative integer");
  const auto v = j.get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) fail(path, "integer too large");
  out = static_cast<T>(v);
}

void decode(const json& j, std::string& out, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string, got " + std::string(j.type_name()));
  out = j.get<std::string>();
}

template <class T>
void decode(const json& j, std::vector<T>& out, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T v{};
    decode(j[i], v, path + "[" + std::to_string(i) + "]");
    out.push_back(v);
  }
}

void decode(const json& j, Matrix& out, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row;
    decode(j[r], row, path + "[" + std::to_string(r) + "]");
    if (r == 0) {
      cols = row.size();
      if (cols == 0) fail(path, "rows must not be empty");
      out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      fail(path, "all rows must have the same length");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
  }
}

void decode(const json& j, std::optional<double>& out, const std::string& path) {
  if (j.is_null()) {
    out.reset();
    return;
  }
  double v = 0.0;
  decode(j, v, path);
  out = v;
}

json encode(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json encode(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

template <class T>
json encode(const T& v) {
  return json(v);
}

// One JSON object being read. Every key read is remembered so leftovers can
// be reported as unknown. An absent object reads as empty: every field
// keeps its default, which is logged.
class Section {
 public:
  Section(const json* node, std::string path, const ConfigLog& log)
      : node_(node), path_(std::move(path)), log_(log) {
    if (node_ && !node_->is_object()) fail(display_path(), "expected an object");
  }

  template <class T>
  void read(const char* key, T& out, const Range& range = kAny) {
    const json* v = take(key);
    if (!v) {
      if (log_) log_("default " + child_path(key) + " = " + encode(out).dump());
      return;
    }
    decode(*v, out, child_path(key));
    if constexpr (std::is_same_v<T, double>) check_range(out, range, child_path(key));
  }

  template <class T>
  void require(const char* key, T& out) {
    const json* v = take(key);
    if (!v) fail(child_path(key), "required key is missing");
    decode(*v, out, child_path(key));
  }

  // Enum stored as a string and converted with `from_string`.
  template <class E, class FromString>
  void read_enum(const char* key, E& out, FromString from_string) {
    const json* v = take(key);
    if (!v) {
      if (log_) log_("default " + child_path(key) + " = \"" + to_string(out) + "\"");
      return;
    }
    std::string s;
    decode(*v, s, child_path(key));
    try {
      out = from_string(s);
    } catch (const DomainError& e) {
      fail(child_path(key), e.what());
    }
  }

  // [lo, hi] pair.
  void read_interval(const char* key, double& lo, double& hi) {
    const json* v = take(key);
    if (!v) {
      if (log_) log_("default " + child_path(key) + " = " + json::array({lo, hi}).dump());
      return;
    }
    std::vector<double> pair;
    decode(*v, pair, child_path(key));
    if (pair.size() != 2) fail(child_path(key), "expected [lower, upper]");
    if (pair[0] > pair[1]) fail(child_path(key), "lower bound exceeds upper bound");
    lo = pair[0];
    hi = pair[1];
  }

  Section section(const char* key) { return Section(take(key), child_path(key), log_); }

  void note_default(const char* key, const std::string& text) {
    used_.insert(key);
    if (log_) log_("default " + child_path(key) + " = " + text);
  }

  bool has(const char* key) const { return node_ && node_->contains(key); }

  void finish() const {
    if (!node_) return;
    for (const auto& item : node_->items()) {
      if (!used_.contains(item.key())) fail(child_path(item.key()), "unknown key");
    }
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    if (!node_) return nullptr;
    const auto it = node_->find(key);
    return it == node_->end() ? nullptr : &*it;
  }
  std::string child_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  std::string display_path() const { return path_.empty() ? "<root>" : path_; }

  const json* node_;
  std::string path_;
  ConfigLog log_;
  std::set<std::string> used_;
};

void read_solver(Section s, SolverOptions& o) {
  s.read("max_iters", o.max_iters);
  s.read("grad_tol", o.grad_tol, kPositive);
  s.read("cost_tol", o.cost_tol, kNonNegative);
  s.read("stall_window", o.stall_window);
  s.read("max_halvings", o.max_halvings);
  s.read("fd_rel_step", o.fd_rel_step, kPositive);
  Section scale = s.section("variable_scale");
  scale.read("beta", o.variable_scale.beta, kPositive);
  scale.read("sigma", o.variable_scale.sigma, kPositive);
  scale.finish();
  s.finish();
}

void read_loop(Section& s, InnerLoopConfig& loop, const std::string& prefix) {
  s.read("alpha", loop.alpha, kNonNegative);
  s.read("step_size", loop.step_size);
  if (loop.step_size) check_range(*loop.step_size, kPositive, prefix + ".step_size");
  s.read("max_iters", loop.max_iters);
  s.read("tol", loop.tol, kPositive);
}

void read_config(Section root, ExperimentConfig& c) {
  root.read("seed", c.seed);
  root.read("delta_max", c.delta_max, Range{0.0, 1.0, true, false});

  {
    Section s = root.section("model");
    s.read("theta", c.nominal_params.theta, kPositive);
    s.read("eps_energy", c.nominal_params.eps_energy, kPositive);
    s.read("phi_fossil", c.nominal_params.phi_fossil, kPositive);
    s.read("tau_A", c.nominal_params.tau_A, kPositive);
    s.read("tau_S", c.nominal_params.tau_S, kPositive);
    s.read("rho", c.nominal_params.rho, kPositive);
    s.finish();
  }
  {
    Section s = root.section("initial_state");
    s.read("A", c.x0.A, kNonNegative);
    s.read("Y", c.x0.Y, kNonNegative);
    s.read("S", c.x0.S, kNonNegative);
    s.finish();
  }
  {
    Section s = root.section("reference_control");
    s.read("beta", c.u_ref.beta);
    s.read("sigma", c.u_ref.sigma, kNonNegative);
    s.finish();
  }

  root.read("step_h", c.step_h, kPositive);
  root.read("span_years", c.span_years, kNonNegative);
  root.read("measurement_period", c.measurement_period, kPositive);

  {
    Section s = root.section("mpc");
    s.read("horizon_T", c.mpc_horizon);
    if (c.mpc_horizon < 1) fail("mpc.horizon_T", "must be >= 1");
    s.read_enum("mode", c.mode, horizon_mode_from_string);
    s.read_enum("objective", c.objective, closed_loop_objective_from_string);
    s.read("tracking_lambda", c.tracking_lambda, kPositive);
    s.finish();
  }
  {
    Section s = root.section("weights");
    s.read("lambda", c.weights.lambda, kPositive);
    s.read("mu", c.weights.mu, kPositive);
    s.read("nu", c.weights.nu, kPositive);
    s.read("w_beta", c.weights.w_beta, kNonNegative);
    s.read("w_sigma", c.weights.w_sigma, kNonNegative);
    s.finish();
  }
  {
    Section s = root.section("bounds");
    s.read_interval("beta", c.bounds.lower.beta, c.bounds.upper.beta);
    s.read_interval("sigma", c.bounds.lower.sigma, c.bounds.upper.sigma);
    if (c.bounds.lower.sigma < 0.0) fail("bounds.sigma", "lower bound must be >= 0");
    s.finish();
  }
  {
    Section s = root.section("state_limits");
    s.read("A_max", c.state_limits.A_max, kNonNegative);
    s.read("Y_min", c.state_limits.Y_min, kNonNegative);
    s.finish();
  }
  {
    Section s = root.section("penalty");
    s.read("weight", c.penalty_weight, kNonNegative);
    s.read("scale_A", c.penalty_scales.A, kPositive);
    s.read("scale_Y", c.penalty_scales.Y, kPositive);
    s.read("scale_S", c.penalty_scales.S, kPositive);
    s.finish();
  }
  if (root.has("welfare")) {
    Section s = root.section("welfare");
    WelfareInputs w;
    s.require("eta", w.eta);
    if (w.eta == 1.0) fail("welfare.eta", "must differ from 1");
    s.require("population", w.population);
    s.require("discount", w.discount);
    s.finish();
    c.welfare = std::move(w);
  } else {
    root.note_default("welfare", "none (quadratic stage cost)");
    c.welfare.reset();
  }

  read_solver(root.section("plan_solver"), c.plan_solver);
  read_solver(root.section("mpc_solver"), c.mpc_solver);

  root.read_enum("modes", c.modes, run_modes_from_string);
  root.read("delay_max_lag", c.delay_max_lag);
  {
    std::vector<std::uint64_t> seeds{c.compare_first_seed, c.compare_last_seed};
    root.read("compare_seeds", seeds);
    if (seeds.size() != 2) fail("compare_seeds", "expected [first, last]");
    if (seeds[0] > seeds[1]) fail("compare_seeds", "first seed exceeds last seed");
    c.compare_first_seed = seeds[0];
    c.compare_last_seed = seeds[1];
  }
  root.read("output_dir", c.output_dir);

  {
    Section s = root.section("inner_demo");
    read_loop(s, c.inner_demo.loop, "inner_demo");
    s.read("plant_gain", c.inner_demo.plant_gain);
    s.read("u_star", c.inner_demo.u_star);
    s.read("r0", c.inner_demo.r0);
    s.read("lower", c.inner_demo.lower);
    s.read("upper", c.inner_demo.upper);
    s.finish();
  }
  {
    Section s = root.section("sai_demo");
    read_loop(s, c.sai_demo.loop, "sai_demo");
    s.read("phi", c.sai_demo.phi);
    s.read("xi", c.sai_demo.xi);
    s.read("plant_phi", c.sai_demo.plant_phi);
    s.read("plant_xi", c.sai_demo.plant_xi);
    s.read("lower", c.sai_demo.lower);
    s.read("upper", c.sai_demo.upper);
    s.read("r0", c.sai_demo.r0);
    std::vector<double> target{c.sai_demo.target.c0, c.sai_demo.target.c1, c.sai_demo.target.c2};
    s.read("target", target);
    if (target.size() != 3) fail("sai_demo.target", "expected 3 Legendre components");
    c.sai_demo.target = {target[0], target[1], target[2]};
    s.finish();
  }
  root.finish();
}

json solver_json(const SolverOptions& o) {
  return {{"max_iters", o.max_iters},
          {"grad_tol", o.grad_tol},
          {"cost_tol", o.cost_tol},
          {"stall_window", o.stall_window},
          {"max_halvings", o.max_halvings},
          {"fd_rel_step", o.fd_rel_step},
          {"variable_scale", {{"beta", o.variable_scale.beta}, {"sigma", o.variable_scale.sigma}}}};
}

json loop_json(const InnerLoopConfig& l) {
  return {{"alpha", l.alpha},
          {"step_size", encode(l.step_size)},
          {"max_iters", l.max_iters},
          {"tol", l.tol}};
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const ConfigLog& log,
                                   const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points at the offending character
    const std::size_t offset = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < offset; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string detail = e.what();
    if (const auto colon = detail.rfind(": "); colon != std::string::npos) {
      detail = detail.substr(colon + 2);
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                      ": JSON syntax error: " + detail);
  }

  ExperimentConfig config;
  try {
    read_config(Section(&doc, "", log), config);
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(source + ": invalid configuration: " + e.what());
  }
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const ConfigLog& log) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open configuration file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), log, path.string());
}

std::string serialize_config(const ExperimentConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["delta_max"] = c.delta_max;
  doc["model"] = {{"theta", c.nominal_params.theta},
                  {"eps_energy", c.nominal_params.eps_energy},
                  {"phi_fossil", c.nominal_params.phi_fossil},
                  {"tau_A", c.nominal_params.tau_A},
                  {"tau_S", c.nominal_params.tau_S},
                  {"rho", c.nominal_params.rho}};
  doc["initial_state"] = {{"A", c.x0.A}, {"Y", c.x0.Y}, {"S", c.x0.S}};
  doc["reference_control"] = {{"beta", c.u_ref.beta}, {"sigma", c.u_ref.sigma}};
  doc["step_h"] = c.step_h;
  doc["span_years"] = c.span_years;
  doc["measurement_period"] = c.measurement_period;
  doc["mpc"] = {{"horizon_T", c.mpc_horizon},
                {"mode", to_string(c.mode)},
                {"objective", to_string(c.objective)},
                {"tracking_lambda", c.tracking_lambda}};
  doc["weights"] = {{"lambda", c.weights.lambda},
                    {"mu", c.weights.mu},
                    {"nu", c.weights.nu},
                    {"w_beta", c.weights.w_beta},
                    {"w_sigma", c.weights.w_sigma}};
  doc["bounds"] = {{"beta", {c.bounds.lower.beta, c.bounds.upper.beta}},
                   {"sigma", {c.bounds.lower.sigma, c.bounds.upper.sigma}}};
  doc["state_limits"] = {{"A_max", c.state_limits.A_max}, {"Y_min", c.state_limits.Y_min}};
  doc["penalty"] = {{"weight", c.penalty_weight},
                    {"scale_A", c.penalty_scales.A},
                    {"scale_Y", c.penalty_scales.Y},
                    {"scale_S", c.penalty_scales.S}};
  if (c.welfare) {
    doc["welfare"] = {{"eta", c.welfare->eta},
                      {"population", c.welfare->population},
                      {"discount", c.welfare->discount}};
  }
  doc["plan_solver"] = solver_json(c.plan_solver);
  doc["mpc_solver"] = solver_json(c.mpc_solver);
  doc["modes"] = to_string(c.modes);
  doc["delay_max_lag"] = c.delay_max_lag;
  doc["compare_seeds"] = {c.compare_first_seed, c.compare_last_seed};
  doc["output_dir"] = c.output_dir;

  json inner = loop_json(c.inner_demo.loop);
  inner["plant_gain"] = c.inner_demo.plant_gain;
  inner["u_star"] = c.inner_demo.u_star;
  inner["r0"] = c.inner_demo.r0;
  inner["lower"] = c.inner_demo.lower;
  inner["upper"] = c.inner_demo.upper;
  doc["inner_demo"] = std::move(inner);

  json sai = loop_json(c.sai_demo.loop);
  sai["phi"] = encode(c.sai_demo.phi);
  sai["xi"] = encode(c.sai_demo.xi);
  sai["plant_phi"] = encode(c.sai_demo.plant_phi);
  sai["plant_xi"] = encode(c.sai_demo.plant_xi);
  sai["lower"] = c.sai_demo.lower;
  sai["upper"] = c.sai_demo.upper;
  sai["r0"] = c.sai_demo.r0;
  sai["target"] = {c.sai_demo.target.c0, c.sai_demo.target.c1, c.sai_demo.target.c2};
  doc["sai_demo"] = std::move(sai);

  return doc.dump(2) + "\n";
}

}  // namespace hes
