#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rampc/rampc.hpp"

namespace fs = std::filesystem;
using namespace rampc;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kRunFailed = 1;
constexpr int kUsage = 2;
constexpr int kBadConfig = 3;
constexpr int kCheckFailed = 4;

ExampleConfig resolve_config(const std::string& arg) {
  if (fs::exists(arg)) return load_config(arg);
  for (const auto& n : builtin_names())
    if (n == arg) return builtin_config(arg);
  throw ConfigError("config '" + arg + "' is neither a file nor a built-in example");
}

struct RunArgs {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iters;
  bool log_steps = false;
  bool quiet = false;
};

int do_run(const ExampleConfig& cfg, const RunArgs& a) {
  RunOptions opt;
  opt.out_dir = a.out;
  opt.seed = a.seed;
  opt.max_iters = a.max_iters;
  opt.log_steps = a.log_steps;
  if (!a.quiet) opt.progress = &std::cerr;
  const RunResult res = run(cfg, opt);
  std::cout << cfg.name << ": " << res.reports.size() - 1 << " iteration(s), final cost " << std::setprecision(10)
            << res.final_cost() << (res.converged ? " (converged)" : "") << '\n';
  if (res.failure) {
    std::cerr << "failure at iteration " << res.failure->j << " [" << res.failure->phase << "]: " << res.failure->message
              << '\n';
    return kRunFailed;
  }
  return kOk;
}

int do_sweep(char variant, const RunArgs& a) {
  fs::create_directories(a.out);
  const auto cfgs = horizon_sweep(variant);
  // Horizons are independent runs with their own output directories.
  std::vector<std::future<RunResult>> jobs;
  for (const auto& cfg : cfgs) {
    RunOptions opt;
    opt.out_dir = (fs::path(a.out) / ("N" + std::to_string(cfg.N))).string();
    opt.seed = a.seed;
    opt.max_iters = a.max_iters;
    opt.log_steps = a.log_steps;
    jobs.push_back(std::async(std::launch::async, [cfg, opt] { return run(cfg, opt); }));
  }
  std::ofstream csv(fs::path(a.out) / "sweep.csv");
  csv << "N,iterations,final_cost,converged\n";
  csv.precision(17);
  int rc = kOk;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const RunResult res = jobs[i].get();
    csv << cfgs[i].N << ',' << res.reports.size() - 1 << ',' << res.final_cost() << ',' << (res.converged ? 1 : 0)
        << '\n';
    std::cout << cfgs[i].name << ": final cost " << std::setprecision(10) << res.final_cost() << '\n';
    if (res.failure) {
      std::cerr << cfgs[i].name << " failed at iteration " << res.failure->j << ": " << res.failure->message << '\n';
      rc = kRunFailed;
    }
  }
  return rc;
}

int do_verify(const std::string& cert_path, const std::string& config, int samples, int rollouts,
              std::uint64_t seed) {
  const ExampleConfig cfg = resolve_config(config);
  std::ifstream in(cert_path);
  if (!in) throw ConfigError("cannot open certificate '" + cert_path + "'");
  nlohmann::json j;
  in >> j;
  GuidanceBarrier b;
  try {
    b = j.get<GuidanceBarrier>();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("certificate: ") + e.what());
  }
  if (b.v.nvars() != cfg.system.n) throw ConfigError("certificate: polynomial dimension differs from the config");
  const LinearFeedback u =
      j.contains("controller") ? controller_from_json(j.at("controller"), cfg.control_box) : cfg.initial_controller;
  if (b.x0.size() == 0) b.x0 = cfg.x0;

  std::mt19937_64 rng(seed);
  const auto rep = verify_certificate(b, cfg.system.closed_loop(u.polynomial()), cfg.sets, samples, rng);
  int reached = 0, bad = 0;
  if (rollouts > 0 && rep.value_at_x0 > 0.0) {
    try {
      const Dataset ds = collect_dataset(b, cfg.sets, cfg.system, u, cfg.cost, rollouts, seed + 1);
      reached = static_cast<int>(ds.samples.size());
      bad = ds.excluded;
    } catch (const SamplingError& e) {
      std::cerr << e.what() << '\n';
      bad = rollouts;
    }
  }
  const bool ok = rep.passed(1e-6) && bad == 0 && (rollouts == 0 || reached == rollouts);
  nlohmann::json out = {{"decrease", rep.decrease},   {"outside_safe", rep.outside_safe},
                        {"target_bound", rep.target_bound}, {"value_at_x0", rep.value_at_x0},
                        {"worst", rep.worst()},       {"samples_per_region", samples},
                        {"rollouts_reached", reached}, {"rollouts_failed", bad},
                        {"passed", ok}};
  std::cout << out.dump(2) << '\n';
  return ok ? kOk : kCheckFailed;
}

int do_rollout(const ExampleConfig& cfg, const std::string& controller, const std::string& out) {
  LinearFeedback u = cfg.initial_controller;
  if (controller != "init") {
    std::ifstream in(controller);
    if (!in) throw ConfigError("--controller must be 'init' or a certificate/controller JSON file");
    nlohmann::json j;
    in >> j;
    u = controller_from_json(j.contains("controller") ? j.at("controller") : j, cfg.control_box);
  }
  const auto r = simulate(cfg.system, u, cfg.x0, cfg.sets.g, cfg.sets.w, 100000, cfg.cost);
  const auto* tr = std::get_if<Trajectory>(&r);
  if (!tr) {
    const auto& nr = std::get<NotReached>(r);
    std::cerr << "target not reached: " << to_string(nr.cause) << " at step " << nr.step << '\n';
    return kRunFailed;
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "trajectory_0.csv");
    write_trajectory_csv(os, *tr, 0, cfg.cost);
  }
  std::cout << std::setprecision(10) << "cost " << iteration_cost(*tr, cfg.cost) << " steps " << tr->length()
            << " stage_cost_sum " << trajectory_cost(*tr) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reach-avoid model predictive control"};
  app.require_subcommand(1);

  RunArgs ra;
  std::string config_path;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--out", ra.out, "Output directory")->required();
    sub->add_option("--seed", ra.seed, "Root random seed");
    sub->add_option("--max-iters", ra.max_iters, "Override the iteration limit K")->check(CLI::NonNegativeNumber);
    sub->add_flag("--log-steps", ra.log_steps, "Write per-step MPC logs");
    sub->add_flag("-q,--quiet", ra.quiet, "No progress output");
  };

  auto* run_cmd = app.add_subcommand("run", "Run the iterative scheme on a config file");
  run_cmd->add_option("--config", config_path, "Config JSON or built-in name")->required();
  add_run_flags(run_cmd);

  std::string example_name;
  auto* ex_cmd = app.add_subcommand("example", "Run a built-in example (ex1, ex2, ex3, ex2-dt01, ex1-N2, sweep, sweep-b)");
  ex_cmd->add_option("name", example_name, "Example name")->required();
  add_run_flags(ex_cmd);

  std::string cert_path;
  int samples = 10000, rollouts = 100;
  std::uint64_t verify_seed = 2024;
  auto* ver_cmd = app.add_subcommand("verify-cert", "Sample-check a certificate");
  ver_cmd->add_option("--cert", cert_path, "Certificate JSON")->required();
  ver_cmd->add_option("--config", config_path, "Config JSON or built-in name")->required();
  ver_cmd->add_option("--samples", samples, "Samples per region")->check(CLI::PositiveNumber);
  ver_cmd->add_option("--rollouts", rollouts, "Closed-loop rollouts from the reach-avoid set")->check(CLI::NonNegativeNumber);
  ver_cmd->add_option("--seed", verify_seed, "Sampling seed");

  std::string controller = "init";
  std::string rollout_out;
  auto* roll_cmd = app.add_subcommand("rollout", "Simulate a feedback law and report its cost");
  roll_cmd->add_option("--config", config_path, "Config JSON or built-in name")->required();
  roll_cmd->add_option("--controller", controller, "'init' or a certificate/controller JSON");
  roll_cmd->add_option("--out", rollout_out, "Write trajectory_0.csv here");

  std::string dump_name;
  auto* dump_cmd = app.add_subcommand("dump-config", "Print a built-in config as JSON");
  dump_cmd->add_option("name", dump_name, "Example name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*run_cmd) return do_run(resolve_config(config_path), ra);
    if (*ex_cmd) {
      if (example_name == "sweep" || example_name == "sweep-a") return do_sweep('a', ra);
      if (example_name == "sweep-b") return do_sweep('b', ra);
      return do_run(builtin_config(example_name), ra);
    }
    if (*ver_cmd) return do_verify(cert_path, config_path, samples, rollouts, verify_seed);
    if (*roll_cmd) return do_rollout(resolve_config(config_path), controller, rollout_out);
    if (*dump_cmd) {
      std::cout << to_json(builtin_config(dump_name)).dump(2) << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "malformed JSON: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailed;
  }
  return kUsage;
}
