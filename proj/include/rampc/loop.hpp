#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rampc/closed_loop.hpp"
#include "rampc/config.hpp"
#include "rampc/gbf.hpp"
#include "rampc/mpc.hpp"
#include "rampc/scenario.hpp"

namespace rampc {

/// How the feedback law handed to synthesis was obtained.
enum class ControllerSource { Initial, AffineFit, LinearFit, Previous };

inline const char* to_string(ControllerSource s) {
  switch (s) {
    case ControllerSource::Initial: return "initial";
    case ControllerSource::AffineFit: return "affine_fit";
    case ControllerSource::LinearFit: return "linear_fit";
    case ControllerSource::Previous: return "previous";
  }
  return "?";
}

struct IterationReport {
  int j = 0;
  double cost = 0.0;
  int episode_len = 0;
  double delta_star = 0.0;
  double t_interp_s = 0.0, t_gbf_s = 0.0, t_surrogate_s = 0.0, t_mpc_s = 0.0;
  // Iterations j >= 1 only.
  ControllerSource controller = ControllerSource::Initial;
  int barrier_degree = 0;
  double v_x0 = 0.0;
  long hitting_bound = 0;
  bool assumption2 = true;
  double assumption2_worst = 0.0;
  int dataset_size = 0;
  int dataset_excluded = 0;
  int warm_start_checks = 0;
  int warm_start_failures = 0;
  double max_state_violation = 0.0;
  std::string certificate_path, surrogate_path;
};

struct RunFailure {
  int j = 0;
  std::string phase;  // "synthesis", "surrogate", "mpc"
  std::string message;
};

struct RunResult {
  std::vector<IterationReport> reports;
  std::vector<Trajectory> trajectories;       // index j
  std::vector<GuidanceBarrier> barriers;      // index j-1: certificate used by episode j
  std::vector<CostSurrogate> surrogates;      // index j-1
  std::vector<LinearFeedback> controllers;    // index j-1
  std::optional<RunFailure> failure;
  bool converged = false;  // stopped on the cost-change test

  double final_cost() const { return reports.empty() ? 0.0 : reports.back().cost; }
};

struct RunOptions {
  std::optional<int> max_iters;          // overrides config K
  std::optional<std::uint64_t> seed;     // overrides config seed
  std::string out_dir;                   // empty: no files
  bool log_steps = false;
  GbfOptions gbf;                        // degrees are taken from the config
  NlpOptions nlp;
  int initial_max_steps = 100000;
  std::ostream* progress = nullptr;
};

struct AssumptionCheck {
  bool holds = true;
  double worst = std::numeric_limits<double>::infinity();  // min v over the trajectory
};

/// Whether v > 0 along every non-final state of the trajectory.
inline AssumptionCheck check_assumption2(const GuidanceBarrier& b, const Trajectory& tr) {
  AssumptionCheck out;
  for (int i = 0; i < tr.length(); ++i) out.worst = std::min(out.worst, b.v.eval(tr.states[static_cast<std::size_t>(i)]));
  out.holds = tr.length() == 0 || out.worst > 0.0;
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

}  // namespace detail

inline nlohmann::json controller_to_json(const LinearFeedback& u) {
  nlohmann::json K = nlohmann::json::array();
  for (Eigen::Index i = 0; i < u.K.rows(); ++i) {
    const Eigen::VectorXd row = u.K.row(i).transpose();
    K.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  return {{"K", K}, {"k0", std::vector<double>(u.k0.data(), u.k0.data() + u.k0.size())}};
}

inline LinearFeedback controller_from_json(const nlohmann::json& j, const Box& clip_box) {
  const auto rows = j.at("K").get<std::vector<std::vector<double>>>();
  const auto k0 = j.at("k0").get<std::vector<double>>();
  LinearFeedback u;
  u.K = Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw std::invalid_argument("controller JSON: ragged K");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      u.K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  u.k0 = Eigen::Map<const Eigen::VectorXd>(k0.data(), static_cast<Eigen::Index>(k0.size()));
  if (u.k0.size() != u.K.rows()) throw std::invalid_argument("controller JSON: k0 length differs from rows of K");
  u.clip_box = clip_box;
  return u;
}

inline void write_iterations_csv(std::ostream& os, const std::vector<IterationReport>& reports) {
  os << "j,cost,episode_len,delta_star,t_interp_s,t_gbf_s,t_surrogate_s,t_mpc_s\n";
  os.precision(17);
  for (const auto& r : reports)
    os << r.j << ',' << r.cost << ',' << r.episode_len << ',' << r.delta_star << ',' << r.t_interp_s << ','
       << r.t_gbf_s << ',' << r.t_surrogate_s << ',' << r.t_mpc_s << '\n';
}

/// Reads back the columns written by write_iterations_csv.
inline std::vector<IterationReport> read_iterations_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "j,cost,episode_len,delta_star,t_interp_s,t_gbf_s,t_surrogate_s,t_mpc_s")
    throw CsvError("iterations CSV: unexpected header");
  std::vector<IterationReport> out;
  for (int row = 1; std::getline(is, line); ++row) {
    if (line.empty()) continue;
    const auto c = detail::split_csv(line);
    if (c.size() != 8) throw CsvError("iterations CSV: row " + std::to_string(row) + " has wrong width");
    IterationReport r;
    r.j = static_cast<int>(detail::parse_cell(c[0], row));
    r.cost = detail::parse_cell(c[1], row);
    r.episode_len = static_cast<int>(detail::parse_cell(c[2], row));
    r.delta_star = detail::parse_cell(c[3], row);
    r.t_interp_s = detail::parse_cell(c[4], row);
    r.t_gbf_s = detail::parse_cell(c[5], row);
    r.t_surrogate_s = detail::parse_cell(c[6], row);
    r.t_mpc_s = detail::parse_cell(c[7], row);
    out.push_back(r);
  }
  return out;
}

inline nlohmann::json to_json(const IterationReport& r) {
  return {{"j", r.j},
          {"cost", r.cost},
          {"episode_len", r.episode_len},
          {"delta_star", r.delta_star},
          {"controller", to_string(r.controller)},
          {"barrier_degree", r.barrier_degree},
          {"v_x0", r.v_x0},
          {"hitting_bound", r.hitting_bound},
          {"assumption2", r.assumption2},
          {"assumption2_worst", std::isfinite(r.assumption2_worst) ? nlohmann::json(r.assumption2_worst) : nlohmann::json()},
          {"dataset_size", r.dataset_size},
          {"dataset_excluded", r.dataset_excluded},
          {"warm_start_checks", r.warm_start_checks},
          {"warm_start_failures", r.warm_start_failures},
          {"max_state_violation", r.max_state_violation},
          {"certificate", r.certificate_path},
          {"surrogate", r.surrogate_path}};
}

/**
 * Iterates: pick a feedback law from the last trajectory, certify it, fit the
 * terminal-cost surrogate, run an MPC episode. Stops when the cost changes by
 * at most xi or after K iterations.
 */
inline RunResult run(const ExampleConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const int K = opt.max_iters.value_or(cfg.K);
  if (K < 0) throw std::invalid_argument("run: max_iters must be >= 0");
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);
  namespace fs = std::filesystem;
  const bool write = !opt.out_dir.empty();
  const fs::path out(opt.out_dir);
  if (write) {
    fs::create_directories(out);
    detail::write_json(out / "config.json", to_json(cfg));
  }

  RunResult res;
  auto log = [&](const std::string& s) {
    if (opt.progress) *opt.progress << s << std::endl;
  };
  auto finish = [&]() {
    if (!write) return;
    std::ofstream csv(out / "iterations.csv");
    write_iterations_csv(csv, res.reports);
    nlohmann::json summary = {{"config", cfg.name}, {"seed", seed}, {"converged", res.converged}};
    summary["iterations"] = nlohmann::json::array();
    for (const auto& r : res.reports) summary["iterations"].push_back(to_json(r));
    if (res.failure)
      summary["failure"] = {{"j", res.failure->j}, {"phase", res.failure->phase}, {"message", res.failure->message}};
    detail::write_json(out / "summary.json", summary);
  };
  auto save_trajectory = [&](const Trajectory& tr, int j) {
    if (!write) return;
    std::ofstream os(out / ("trajectory_" + std::to_string(j) + ".csv"));
    write_trajectory_csv(os, tr, j, cfg.cost);
  };

  // Iteration 0: the initial controller's own trajectory.
  {
    const auto r0 = simulate(cfg.system, cfg.initial_controller, cfg.x0, cfg.sets.g, cfg.sets.w, opt.initial_max_steps,
                             cfg.cost);
    const auto* tr = std::get_if<Trajectory>(&r0);
    if (!tr) {
      const auto& nr = std::get<NotReached>(r0);
      throw std::runtime_error(std::string("run: initial controller does not reach the target (") +
                               to_string(nr.cause) + " at step " + std::to_string(nr.step) + ")");
    }
    IterationReport rep;
    rep.j = 0;
    rep.cost = iteration_cost(*tr, cfg.cost);
    rep.episode_len = tr->length();
    res.reports.push_back(rep);
    res.trajectories.push_back(*tr);
    save_trajectory(*tr, 0);
    log("j 0 cost " + std::to_string(rep.cost));
  }

  GbfOptions gopt = opt.gbf;
  gopt.degrees = cfg.gbf_degrees;
  MpcOptions mopt;
  mopt.N = cfg.N;
  mopt.nlp = opt.nlp;
  mopt.log_steps = opt.log_steps;
  const int n_samples = cfg.n_samples.value_or(
      required_samples(cfg.epsilon, cfg.beta, static_cast<int>(cfg.cost_template.size())));

  for (int j = 1; j <= K; ++j) {
    IterationReport rep;
    rep.j = j;
    const Trajectory& prev = res.trajectories.back();

    // Feedback law: the configured one first, then fits of the last trajectory
    // with the previously certified law as the last resort.
    std::vector<std::pair<ControllerSource, LinearFeedback>> candidates;
    auto t0 = std::chrono::steady_clock::now();
    if (j == 1) {
      candidates.emplace_back(ControllerSource::Initial, cfg.initial_controller);
    } else if (prev.length() >= 1) {
      candidates.emplace_back(ControllerSource::AffineFit, fit_linear(prev, cfg.control_box, true));
      candidates.emplace_back(ControllerSource::LinearFit, fit_linear(prev, cfg.control_box, false));
      candidates.emplace_back(ControllerSource::Previous, res.controllers.back());
    } else {
      candidates.emplace_back(ControllerSource::Previous, res.controllers.back());
    }
    rep.t_interp_s = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::optional<GuidanceBarrier> barrier;
    std::string why;
    for (const auto& [src, ctrl] : candidates) {
      try {
        barrier = synthesize(cfg.system, ctrl, cfg.sets, cfg.lambda, cfg.M, cfg.x0, gopt);
        rep.controller = src;
        res.controllers.push_back(ctrl);
        break;
      } catch (const SynthesisFailure& e) {
        why += std::string(to_string(src)) + ": " + e.what() + "; ";
        log("j " + std::to_string(j) + " " + to_string(src) + " not certified");
      }
    }
    rep.t_gbf_s = detail::seconds_since(t0);
    if (!barrier) {
      res.failure = RunFailure{j, "synthesis", why};
      break;
    }
    const LinearFeedback& u = res.controllers.back();
    res.barriers.push_back(*barrier);
    rep.barrier_degree = barrier->degree;
    rep.v_x0 = barrier->v.eval(cfg.x0);
    rep.hitting_bound = hitting_time_bound(*barrier, cfg.x0);
    const auto a2 = check_assumption2(*barrier, prev);
    rep.assumption2 = a2.holds;
    rep.assumption2_worst = a2.worst;
    if (!a2.holds) log("j " + std::to_string(j) + " previous trajectory leaves the reach-avoid set (min v " +
                       std::to_string(a2.worst) + ")");
    if (write) {
      rep.certificate_path = "cert_" + std::to_string(j - 1) + ".json";
      nlohmann::json cj = *barrier;
      cj["controller"] = controller_to_json(u);
      detail::write_json(out / rep.certificate_path, cj);
    }

    t0 = std::chrono::steady_clock::now();
    CostSurrogate surrogate;
    try {
      const Dataset ds = collect_dataset(*barrier, cfg.sets, cfg.system, u, cfg.cost, n_samples,
                                         seed * 1000003ULL + static_cast<std::uint64_t>(j));
      rep.dataset_size = static_cast<int>(ds.samples.size());
      rep.dataset_excluded = ds.excluded;
      surrogate = fit(ds.samples, cfg.cost_template, cfg.coef_bound, cfg.epsilon, cfg.beta);
    } catch (const std::runtime_error& e) {
      rep.t_surrogate_s = detail::seconds_since(t0);
      res.failure = RunFailure{j, "surrogate", e.what()};
      break;
    }
    rep.t_surrogate_s = detail::seconds_since(t0);
    rep.delta_star = surrogate.delta_star;
    res.surrogates.push_back(surrogate);
    if (write) {
      rep.surrogate_path = "surrogate_" + std::to_string(j - 1) + ".json";
      nlohmann::json sj = surrogate;
      detail::write_json(out / rep.surrogate_path, sj);
    }

    t0 = std::chrono::steady_clock::now();
    EpisodeResult ep;
    try {
      ep = run_episode(cfg.system, cfg.sets, cfg.cost, cfg.control_box, cfg.x0, *barrier, surrogate, u, mopt);
    } catch (const EpisodeAbort& e) {
      rep.t_mpc_s = detail::seconds_since(t0);
      save_trajectory(e.partial, j);
      res.failure = RunFailure{j, "mpc", e.what()};
      break;
    }
    rep.t_mpc_s = detail::seconds_since(t0);
    rep.cost = ep.cost;
    rep.episode_len = ep.trajectory.length();
    rep.warm_start_checks = ep.warm_start_checks;
    rep.warm_start_failures = ep.warm_start_failures;
    rep.max_state_violation = ep.max_state_violation;
    if (write && opt.log_steps) detail::write_json(out / ("steps_" + std::to_string(j) + ".json"), ep.log);
    save_trajectory(ep.trajectory, j);
    res.trajectories.push_back(ep.trajectory);
    const double prev_cost = res.reports.back().cost;
    res.reports.push_back(rep);
    log("j " + std::to_string(j) + " cost " + std::to_string(rep.cost) + " len " + std::to_string(rep.episode_len) +
        " delta* " + std::to_string(rep.delta_star) + " controller " + to_string(rep.controller));
    if (std::abs(rep.cost - prev_cost) <= cfg.xi) {
      res.converged = true;
      break;
    }
  }
  finish();
  return res;
}

}  // namespace rampc
