#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "rampc/config.hpp"

using namespace rampc;

namespace {

Trajectory rollout_or_fail(const ExampleConfig& c) {
  const auto r = simulate(c.system, c.initial_controller, c.x0, c.sets.g, c.sets.w, 100000, c.cost);
  const auto* tr = std::get_if<Trajectory>(&r);
  if (!tr) throw std::runtime_error("initial controller did not reach the target");
  return *tr;
}

}  // namespace

TEST(ClosedLoop, InitialCostsOfBuiltins) {
  const std::vector<std::pair<std::string, double>> want{
      {"ex1", 369.8267}, {"ex2", 64.3087}, {"ex3", 1.3489}, {"ex2-dt01", 36.0724}};
  for (const auto& [name, J0] : want) {
    const auto c = builtin_config(name);
    EXPECT_NEAR(iteration_cost(rollout_or_fail(c), c.cost), J0, 5e-5) << name;
  }
}

TEST(ClosedLoop, HandWrittenRolloutAgrees) {
  const auto c = builtin_config("ex1");
  double p = 4.0, v = -6.0, J = 0.0;
  int steps = 0;
  while (p * p + v * v > 0.25) {
    const double u = std::clamp(-0.04 * p - 0.1 * v, -0.5, 0.5);
    J += p * p + v * v + u * u;
    const double pn = p + 0.1 * v;
    v = v + u;
    p = pn;
    ++steps;
    ASSERT_LT(steps, 100000);
  }
  J += p * p + v * v;
  const Trajectory tr = rollout_or_fail(c);
  EXPECT_EQ(tr.length(), steps);
  EXPECT_NEAR(iteration_cost(tr, c.cost), J, 1e-9 * J);
}

TEST(ClosedLoop, StartInTargetGivesEmptyTrajectory) {
  auto c = builtin_config("ex1");
  const auto r = simulate(c.system, c.initial_controller, Eigen::Vector2d(0.1, 0.1), c.sets.g, c.sets.w, 10, c.cost);
  const auto& tr = std::get<Trajectory>(r);
  EXPECT_EQ(tr.length(), 0);
  EXPECT_DOUBLE_EQ(trajectory_cost(tr), 0.0);
  EXPECT_NEAR(iteration_cost(tr, c.cost), 0.02, 1e-15);
}

TEST(ClosedLoop, ReportsTimeoutAndUnsafeExit) {
  auto c = builtin_config("ex1");
  const auto r = simulate(c.system, c.initial_controller, c.x0, c.sets.g, c.sets.w, 3, c.cost);
  ASSERT_TRUE(std::holds_alternative<NotReached>(r));
  EXPECT_EQ(std::get<NotReached>(r).cause, NotReachedCause::Timeout);

  const Controller push = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, 0.5); };
  const auto r2 = simulate(c.system, push, Eigen::Vector2d(4.0, 6.0), c.sets.g, c.sets.w, 100000, c.cost);
  ASSERT_TRUE(std::holds_alternative<NotReached>(r2));
  EXPECT_EQ(std::get<NotReached>(r2).cause, NotReachedCause::LeftSafeSet);
}

TEST(ClosedLoop, FitRecoversExactAffineLaw) {
  Trajectory tr;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N01;
  for (int k = 0; k < 20; ++k) {
    const Eigen::Vector2d x(N01(rng), N01(rng));
    tr.states.push_back(x);
    tr.controls.push_back(Eigen::VectorXd::Constant(1, 0.3 * x(0) - 1.1 * x(1) + 0.2));
    tr.stage_costs.push_back(0.0);
  }
  tr.states.push_back(Eigen::Vector2d::Zero());
  const Box box(Eigen::VectorXd::Constant(1, -5), Eigen::VectorXd::Constant(1, 5));
  const auto u = fit_linear(tr, box);
  EXPECT_NEAR(u.K(0, 0), 0.3, 1e-10);
  EXPECT_NEAR(u.K(0, 1), -1.1, 1e-10);
  EXPECT_NEAR(u.k0(0), 0.2, 1e-10);
}

TEST(ClosedLoop, FitMatchesNormalEquations) {
  Trajectory tr;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N01;
  const int L = 30;
  Eigen::MatrixXd A(L, 3);
  Eigen::VectorXd b(L);
  for (int k = 0; k < L; ++k) {
    const Eigen::Vector2d x(N01(rng), N01(rng));
    const double u = N01(rng);
    tr.states.push_back(x);
    tr.controls.push_back(Eigen::VectorXd::Constant(1, u));
    tr.stage_costs.push_back(0.0);
    A.row(k) << x(0), x(1), 1.0;
    b(k) = u;
  }
  tr.states.push_back(Eigen::Vector2d::Zero());
  const Eigen::Vector3d theta = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  const Box box(Eigen::VectorXd::Constant(1, -5), Eigen::VectorXd::Constant(1, 5));
  const auto u = fit_linear(tr, box);
  EXPECT_NEAR(u.K(0, 0), theta(0), 1e-10);
  EXPECT_NEAR(u.K(0, 1), theta(1), 1e-10);
  EXPECT_NEAR(u.k0(0), theta(2), 1e-10);

  const Eigen::Vector2d lin = A.leftCols(2).colPivHouseholderQr().solve(b);
  const auto u0 = fit_linear(tr, box, false);
  EXPECT_NEAR(u0.K(0, 0), lin(0), 1e-10);
  EXPECT_NEAR(u0.K(0, 1), lin(1), 1e-10);
  EXPECT_EQ(u0.k0(0), 0.0);
}

TEST(ClosedLoop, ControllerClipsToBox) {
  const auto c = builtin_config("ex1");
  EXPECT_DOUBLE_EQ(c.initial_controller(Eigen::Vector2d(-100.0, 0.0))(0), 0.5);
  EXPECT_DOUBLE_EQ(c.initial_controller(Eigen::Vector2d(100.0, 0.0))(0), -0.5);
}

TEST(ClosedLoop, TrajectoryCsvRoundTrip) {
  for (const char* name : {"ex2", "ex3"}) {
    const auto c = builtin_config(name);
    const Trajectory tr = rollout_or_fail(c);
    std::stringstream ss;
    write_trajectory_csv(ss, tr, 4, c.cost);
    const std::string header = ss.str().substr(0, ss.str().find('\n'));
    EXPECT_EQ(header, c.system.n == 2 ? "iter,t,x_1,x_2,u_1,stage_cost" : "iter,t,x_1,x_2,x_3,u_1,stage_cost");
    const auto rec = read_trajectory_csv(ss);
    EXPECT_EQ(rec.iter, 4);
    ASSERT_EQ(rec.trajectory.length(), tr.length());
    for (std::size_t t = 0; t < tr.states.size(); ++t) EXPECT_EQ(rec.trajectory.states[t], tr.states[t]);
    for (std::size_t t = 0; t < tr.controls.size(); ++t) EXPECT_EQ(rec.trajectory.controls[t], tr.controls[t]);
    EXPECT_EQ(rec.trajectory.stage_costs, tr.stage_costs);
    EXPECT_EQ(rec.terminal_cost, c.cost.terminal(tr.final_state()));

    std::stringstream again;
    write_trajectory_csv(again, rec.trajectory, rec.iter, c.cost);
    std::stringstream first;
    write_trajectory_csv(first, tr, 4, c.cost);
    EXPECT_EQ(again.str(), first.str());
  }
}

TEST(ClosedLoop, TrajectoryCsvRejectsMalformedInput) {
  std::stringstream no_header;
  EXPECT_THROW(read_trajectory_csv(no_header), CsvError);
  std::stringstream bad_cell("iter,t,x_1,u_1,stage_cost\n0,0,abc,0.1,1\n");
  EXPECT_THROW(read_trajectory_csv(bad_cell), CsvError);
  std::stringstream unterminated("iter,t,x_1,u_1,stage_cost\n0,0,1,0.1,1\n");
  EXPECT_THROW(read_trajectory_csv(unterminated), CsvError);
  std::stringstream ok("iter,t,x_1,u_1,stage_cost\n0,0,1,0.5,1.25\n0,1,0.5,,0.25\n");
  const auto rec = read_trajectory_csv(ok);
  EXPECT_EQ(rec.trajectory.length(), 1);
  EXPECT_DOUBLE_EQ(rec.terminal_cost, 0.25);
}
