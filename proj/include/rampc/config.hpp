#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "rampc/closed_loop.hpp"
#include "rampc/gbf.hpp"
#include "rampc/poly.hpp"

namespace rampc {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything one run of the iterative scheme needs.
struct ExampleConfig {
  std::string name;
  DiscreteSystem system;
  double dt = 0.0;  // documentation only; dynamics are already discrete
  ReachAvoidSets sets;
  Box control_box;
  Eigen::VectorXd x0;
  QuadraticCost cost;
  LinearFeedback initial_controller;
  double lambda = 1.001;
  double M = 1.0;
  int N = 4;
  int K = 8;
  double xi = 0.1;
  double epsilon = 0.1;
  double beta = 0.1;
  std::vector<Monomial> cost_template;
  std::optional<int> n_samples;  // overrides the sample-count formula
  double coef_bound = 1e4;
  std::vector<int> gbf_degrees{2, 4, 6};
  std::uint64_t seed = 1;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError(field + ": " + msg); };
    try {
      system.validate();
    } catch (const std::invalid_argument& e) {
      fail("system", e.what());
    }
    const int n = system.n, m = system.m;
    for (const auto& [name, p] : {std::pair{"sets.w", &sets.w}, {"sets.g", &sets.g}, {"sets.w0", &sets.w0}})
      if (p->nvars() != n) fail(name, "must be a polynomial over " + std::to_string(n) + " variables");
    if (control_box.dim() != m) fail("U", "dimension must equal m");
    if (x0.size() != n) fail("x0", "dimension must equal n");
    if (cost.q.size() != n || cost.r.size() != m) fail("cost", "weights have wrong dimension");
    if ((cost.q.array() <= 0.0).any() || (cost.r.array() < 0.0).any()) fail("cost", "weights must be positive");
    if (initial_controller.K.rows() != m || initial_controller.K.cols() != n || initial_controller.k0.size() != m)
      fail("initial_controller", "K must be m x n and k0 of length m");
    if (!(lambda > 1.0)) fail("lambda", "must be > 1");
    if (!(M > 0.0)) fail("M", "must be > 0");
    if (N < 1) fail("N", "must be >= 1");
    if (K < 0) fail("K", "must be >= 0");
    if (!(xi >= 0.0)) fail("xi", "must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon", "must lie in (0, 1)");
    if (!(beta > 0.0 && beta < 1.0)) fail("beta", "must lie in (0, 1)");
    if (cost_template.empty()) fail("template", "must not be empty");
    bool has_const = false;
    for (const auto& mono : cost_template) {
      if (static_cast<int>(mono.size()) != n) fail("template", "monomials must have n exponents");
      if (total_degree(mono) == 0) has_const = true;
    }
    if (!has_const) fail("template", "must contain the constant monomial");
    if (n_samples && *n_samples < 1) fail("n_samples", "must be >= 1");
    if (!(coef_bound > 0.0)) fail("coef_bound", "must be > 0");
    if (gbf_degrees.empty()) fail("gbf_degrees", "must not be empty");
    for (int d : gbf_degrees)
      if (d < 2 || d % 2) fail("gbf_degrees", "entries must be even and >= 2");
    if (sets.w.eval(x0) > 0.0) fail("x0", "must lie in the safe set");
  }
};

namespace detail {

inline Box box_1d(double lo, double hi) { return Box(Eigen::VectorXd::Constant(1, lo), Eigen::VectorXd::Constant(1, hi)); }

inline Polynomial sum_squares(int n) {
  Polynomial r(n);
  for (int i = 0; i < n; ++i) r += Polynomial::variable(n, i) * Polynomial::variable(n, i);
  return r;
}

inline void finish(ExampleConfig& c) {
  c.sets.y_box = quadratic_bounding_box(c.sets.w0);
  c.cost = QuadraticCost::identity(c.system.n, c.system.m);
  c.initial_controller.clip_box = c.control_box;
  c.cost_template = monomial_basis(c.system.n, 2);
  c.validate();
}

// p+ = p + 0.1 v, v+ = v + u.
inline ExampleConfig example1() {
  ExampleConfig c;
  c.name = "ex1";
  c.system.n = 2;
  c.system.m = 1;
  const auto p = Polynomial::variable(3, 0), v = Polynomial::variable(3, 1), u = Polynomial::variable(3, 2);
  c.system.f = {p + 0.1 * v, v + u};
  const auto r = sum_squares(2);
  c.sets.w = r * (1.0 / 64) - Polynomial::constant(2, 1.0);
  c.sets.g = r - Polynomial::constant(2, 0.25);
  c.sets.w0 = r * (1.0 / 64) - Polynomial::constant(2, 2.0);
  c.control_box = box_1d(-0.5, 0.5);
  c.x0 = Eigen::Vector2d(4.0, -6.0);
  c.initial_controller.K = Eigen::MatrixXd(1, 2);
  c.initial_controller.K << -0.04, -0.1;
  c.initial_controller.k0 = Eigen::VectorXd::Zero(1);
  c.N = 4;
  c.K = 8;
  c.xi = 0.1;
  c.epsilon = 0.1;
  c.beta = 0.1;
  c.n_samples = 207;
  finish(c);
  return c;
}

// Euler-discretized Van der Pol in reverse time with step dt.
inline ExampleConfig example2(double dt) {
  ExampleConfig c;
  c.name = "ex2";
  c.dt = dt;
  c.system.n = 2;
  c.system.m = 1;
  const auto a = Polynomial::variable(3, 0), b = Polynomial::variable(3, 1), u = Polynomial::variable(3, 2);
  c.system.f = {a - dt * b, b - dt * (b - a * a * b - a) + u};
  const auto r = sum_squares(2);
  c.sets.w = r * 0.25 - Polynomial::constant(2, 1.0);
  c.sets.g = r - Polynomial::constant(2, 0.04);
  c.sets.w0 = r * 0.25 - Polynomial::constant(2, 2.0);
  c.control_box = box_1d(-0.5, 0.5);
  c.x0 = Eigen::Vector2d(1.2, 1.0);
  c.initial_controller.K = Eigen::MatrixXd::Zero(1, 2);
  c.initial_controller.k0 = Eigen::VectorXd::Zero(1);
  c.N = 3;
  c.K = 8;
  c.xi = 0.1;
  c.epsilon = 0.05;
  c.beta = 0.05;
  c.n_samples = 428;
  return c;
}

inline ExampleConfig example3() {
  ExampleConfig c;
  c.name = "ex3";
  c.dt = 0.1;
  c.system.n = 3;
  c.system.m = 1;
  const auto a = Polynomial::variable(4, 0), b = Polynomial::variable(4, 1), d = Polynomial::variable(4, 2),
             u = Polynomial::variable(4, 3);
  c.system.f = {a - 0.2 * b, b + 0.1 * (0.8 * a - 2.1 * b + d + 10.0 * a * a * b),
                d + 0.1 * (-1.0 * d + d * d * d) + u};
  const auto r = sum_squares(3);
  c.sets.w = r - Polynomial::constant(3, 0.25);
  c.sets.g = r - Polynomial::constant(3, 0.01);
  c.sets.w0 = r - Polynomial::constant(3, 0.5);
  c.control_box = box_1d(-2.0, 2.0);
  c.x0 = Eigen::Vector3d(0.2, 0.4, 0.1);
  c.initial_controller.K = Eigen::MatrixXd::Zero(1, 3);
  c.initial_controller.k0 = Eigen::VectorXd::Zero(1);
  c.N = 4;
  c.K = 6;
  c.xi = 0.002;
  c.epsilon = 0.1;
  c.beta = 0.1;
  finish(c);
  return c;
}

}  // namespace detail

/// Names accepted by builtin_config.
inline std::vector<std::string> builtin_names() { return {"ex1", "ex2", "ex3", "ex2-dt01", "ex1-N2"}; }

inline ExampleConfig builtin_config(const std::string& name) {
  if (name == "ex1") return detail::example1();
  if (name == "ex2") {
    auto c = detail::example2(0.05);
    detail::finish(c);
    return c;
  }
  if (name == "ex3") return detail::example3();
  if (name == "ex2-dt01") {
    auto c = detail::example2(0.1);
    c.name = "ex2-dt01";
    c.N = 2;
    c.K = 10;
    c.xi = 0.01;
    c.n_samples.reset();
    detail::finish(c);
    return c;
  }
  if (name == "ex1-N2") {
    auto c = detail::example1();
    c.name = "ex1-N2";
    c.N = 2;
    c.K = 10;
    c.xi = 0.01;
    c.validate();
    return c;
  }
  throw ConfigError("unknown example '" + name + "'");
}

inline const std::vector<int>& sweep_horizons() {
  static const std::vector<int> h{2, 4, 6, 8, 10, 12};
  return h;
}

/**
 * Horizon study on the dt = 0.1 Van der Pol system: K = 3, xi = 0.01 and
 * epsilon = beta = 0.05 (variant 'a') or 0.1 (variant 'b').
 */
inline std::vector<ExampleConfig> horizon_sweep(char variant, const std::vector<int>& horizons = sweep_horizons()) {
  if (variant != 'a' && variant != 'b') throw ConfigError("sweep variant must be 'a' or 'b'");
  std::vector<ExampleConfig> out;
  for (int N : horizons) {
    auto c = builtin_config("ex2-dt01");
    c.N = N;
    c.K = 3;
    c.xi = 0.01;
    c.epsilon = c.beta = variant == 'a' ? 0.05 : 0.1;
    c.name = std::string("sweep-") + variant + "-N" + std::to_string(N);
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json to_json(const ExampleConfig& c) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json K = json::array();
  for (Eigen::Index i = 0; i < c.initial_controller.K.rows(); ++i)
    K.push_back(vec(c.initial_controller.K.row(i).transpose()));
  json j = {
      {"name", c.name},
      {"system", {{"n", c.system.n}, {"m", c.system.m}, {"f", c.system.f}}},
      {"dt", c.dt},
      {"sets", {{"w", c.sets.w}, {"g", c.sets.g}, {"w0", c.sets.w0}}},
      {"U", {{"lo", vec(c.control_box.lo)}, {"hi", vec(c.control_box.hi)}}},
      {"x0", vec(c.x0)},
      {"cost", {{"q", vec(c.cost.q)}, {"r", vec(c.cost.r)}}},
      {"initial_controller", {{"K", K}, {"k0", vec(c.initial_controller.k0)}}},
      {"lambda", c.lambda},
      {"M", c.M},
      {"N", c.N},
      {"K", c.K},
      {"xi", c.xi},
      {"epsilon", c.epsilon},
      {"beta", c.beta},
      {"template", c.cost_template},
      {"coef_bound", c.coef_bound},
      {"gbf_degrees", c.gbf_degrees},
      {"seed", c.seed},
  };
  if (c.n_samples) j["n_samples"] = *c.n_samples;
  return j;
}

/// Parses and validates a config; errors name the offending field.
inline ExampleConfig config_from_json(const nlohmann::json& j) {
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw ConfigError(std::string(key) + ": missing");
    return j.at(key);
  };
  auto vec = [](const nlohmann::json& a, const std::string& name) {
    try {
      const auto v = a.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(name + ": expected an array of numbers");
    }
  };
  auto get = [&](const char* key, auto& out) {
    try {
      out = field(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type");
    }
  };
  auto poly = [](const nlohmann::json& p, const std::string& name) {
    try {
      return p.get<Polynomial>();
    } catch (const std::exception& e) {
      throw ConfigError(name + ": " + e.what());
    }
  };

  ExampleConfig c;
  if (j.contains("name")) get("name", c.name);
  const auto& sys = field("system");
  try {
    c.system.n = sys.at("n").get<int>();
    c.system.m = sys.at("m").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("system: needs integer n and m");
  }
  if (!sys.contains("f") || !sys.at("f").is_array()) throw ConfigError("system.f: expected an array of polynomials");
  for (std::size_t i = 0; i < sys.at("f").size(); ++i)
    c.system.f.push_back(poly(sys.at("f")[i], "system.f[" + std::to_string(i) + "]"));
  if (j.contains("dt")) get("dt", c.dt);
  const auto& sets = field("sets");
  for (const char* key : {"w", "g", "w0"})
    if (!sets.contains(key)) throw ConfigError(std::string("sets.") + key + ": missing");
  c.sets.w = poly(sets.at("w"), "sets.w");
  c.sets.g = poly(sets.at("g"), "sets.g");
  c.sets.w0 = poly(sets.at("w0"), "sets.w0");
  const auto& U = field("U");
  if (!U.contains("lo") || !U.contains("hi")) throw ConfigError("U: needs lo and hi");
  try {
    c.control_box = Box(vec(U.at("lo"), "U.lo"), vec(U.at("hi"), "U.hi"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("U: ") + e.what());
  }
  c.x0 = vec(field("x0"), "x0");
  if (j.contains("cost")) {
    const auto& h = j.at("cost");
    if (!h.contains("q") || !h.contains("r")) throw ConfigError("cost: needs q and r");
    c.cost = {vec(h.at("q"), "cost.q"), vec(h.at("r"), "cost.r")};
  } else {
    c.cost = QuadraticCost::identity(c.system.n, c.system.m);
  }
  const auto& ic = field("initial_controller");
  if (!ic.contains("K") || !ic.contains("k0")) throw ConfigError("initial_controller: needs K and k0");
  try {
    const auto rows = ic.at("K").get<std::vector<std::vector<double>>>();
    c.initial_controller.K = Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()),
                                             rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) throw ConfigError("initial_controller.K: ragged rows");
      for (std::size_t k = 0; k < rows[i].size(); ++k)
        c.initial_controller.K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("initial_controller.K: expected a matrix");
  }
  c.initial_controller.k0 = vec(ic.at("k0"), "initial_controller.k0");
  c.initial_controller.clip_box = c.control_box;
  get("lambda", c.lambda);
  get("M", c.M);
  get("N", c.N);
  get("K", c.K);
  get("xi", c.xi);
  get("epsilon", c.epsilon);
  get("beta", c.beta);
  if (j.contains("template")) {
    get("template", c.cost_template);
  } else {
    c.cost_template = monomial_basis(c.system.n, 2);
  }
  if (j.contains("n_samples") && !j.at("n_samples").is_null()) {
    int ns = 0;
    get("n_samples", ns);
    c.n_samples = ns;
  }
  if (j.contains("coef_bound")) get("coef_bound", c.coef_bound);
  if (j.contains("gbf_degrees")) get("gbf_degrees", c.gbf_degrees);
  if (j.contains("seed")) get("seed", c.seed);
  c.validate();
  try {
    c.sets.y_box = quadratic_bounding_box(c.sets.w0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("sets.w0: ") + e.what());
  }
  return c;
}

inline ExampleConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rampc
