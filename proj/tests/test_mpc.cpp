#include <gtest/gtest.h>

#include "rampc/config.hpp"
#include "rampc/mpc.hpp"

using namespace rampc;

namespace {

struct Ex2Episode : ::testing::Test {
  static void SetUpTestSuite() {
    cfg = new ExampleConfig(builtin_config("ex2"));
    GbfOptions gopt;
    gopt.degrees = cfg->gbf_degrees;
    barrier = new GuidanceBarrier(
        synthesize(cfg->system, cfg->initial_controller, cfg->sets, cfg->lambda, cfg->M, cfg->x0, gopt));
    const Dataset ds =
        collect_dataset(*barrier, cfg->sets, cfg->system, cfg->initial_controller, cfg->cost, *cfg->n_samples, 5);
    data = new Dataset(ds);
    surrogate = new CostSurrogate(fit(ds.samples, cfg->cost_template, cfg->coef_bound, cfg->epsilon, cfg->beta));
    MpcOptions mopt;
    mopt.N = cfg->N;
    episode = new EpisodeResult(run_episode(cfg->system, cfg->sets, cfg->cost, cfg->control_box, cfg->x0, *barrier,
                                            *surrogate, cfg->initial_controller, mopt));
  }
  static void TearDownTestSuite() {
    delete episode;
    delete surrogate;
    delete data;
    delete barrier;
    delete cfg;
  }
  static ExampleConfig* cfg;
  static GuidanceBarrier* barrier;
  static Dataset* data;
  static CostSurrogate* surrogate;
  static EpisodeResult* episode;
};

ExampleConfig* Ex2Episode::cfg = nullptr;
GuidanceBarrier* Ex2Episode::barrier = nullptr;
Dataset* Ex2Episode::data = nullptr;
CostSurrogate* Ex2Episode::surrogate = nullptr;
EpisodeResult* Ex2Episode::episode = nullptr;

}  // namespace

TEST(Mpc, TerminalBound) {
  EXPECT_NEAR(terminal_bound(0, 1.001, 0.3, 0.0, 4), 0.3 * std::pow(1.001, 4), 1e-15);
  EXPECT_NEAR(terminal_bound(0, 1.001, 0.3, 0.0, 4), 0.3012018012003, 1e-13);
  EXPECT_NEAR(terminal_bound(5, 1.001, 0.3, 0.5, 4), 0.5005, 1e-15);
  EXPECT_THROW(terminal_bound(0, 1.001, 0.0, 0.0, 4), std::invalid_argument);
}

TEST(Mpc, WarmStartShift) {
  const auto c = builtin_config("ex1");
  NlpSolution prev;
  prev.controls = Eigen::MatrixXd(3, 1);
  prev.controls << 0.1, 0.2, 0.3;
  prev.states = Eigen::MatrixXd::Zero(4, 2);
  prev.states.row(3) << 2.0, -1.0;
  EXPECT_THROW(warm_start_shift(prev, c.initial_controller), std::invalid_argument);
  prev.converged = true;
  const Eigen::MatrixXd U = warm_start_shift(prev, c.initial_controller);
  EXPECT_DOUBLE_EQ(U(0, 0), 0.2);
  EXPECT_DOUBLE_EQ(U(1, 0), 0.3);
  EXPECT_DOUBLE_EQ(U(2, 0), -0.04 * 2.0 - 0.1 * -1.0);
}

TEST_F(Ex2Episode, DatasetCostsMatchDirectRollouts) {
  EXPECT_EQ(static_cast<int>(data->samples.size()), *cfg->n_samples);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& s = data->samples[i];
    EXPECT_GT(barrier->v.eval(s.x), 0.0);
    const auto r = simulate(cfg->system, cfg->initial_controller, s.x, cfg->sets.g, cfg->sets.w, 100000, cfg->cost);
    ASSERT_TRUE(std::holds_alternative<Trajectory>(r));
    EXPECT_NEAR(trajectory_cost(std::get<Trajectory>(r)), s.cost, 1e-12);
  }
}

TEST_F(Ex2Episode, ReachesTargetSafely) {
  const Trajectory& tr = episode->trajectory;
  EXPECT_LE(cfg->sets.g.eval(tr.final_state()), 0.0);
  for (const auto& x : tr.states) EXPECT_LE(cfg->sets.w.eval(x), 0.0);
  for (const auto& u : tr.controls) EXPECT_TRUE(cfg->control_box.contains(u, 1e-12));
  EXPECT_LE(episode->max_state_violation, 0.0);
  EXPECT_LE(tr.length(), hitting_time_bound(*barrier, cfg->x0) + cfg->N);
}

TEST_F(Ex2Episode, CostImprovesOnInitialController) {
  EXPECT_NEAR(episode->cost, iteration_cost(episode->trajectory, cfg->cost), 1e-12);
  EXPECT_LT(episode->cost, 64.3087);
}

TEST_F(Ex2Episode, WarmStartsAlwaysFeasible) {
  EXPECT_EQ(episode->warm_start_failures, 0);
  EXPECT_EQ(episode->warm_start_checks, episode->solves - 1);
}

TEST_F(Ex2Episode, TerminalBoundsGrowGeometrically) {
  ASSERT_FALSE(episode->bounds.empty());
  const double v0 = barrier->v.eval(cfg->x0);
  EXPECT_NEAR(episode->bounds.front(), std::pow(barrier->lambda, cfg->N) * v0, 1e-12);
  for (std::size_t t = 1; t < episode->bounds.size(); ++t) EXPECT_GT(episode->bounds[t], 0.0);
}

TEST_F(Ex2Episode, StartInTargetIsTrivial) {
  MpcOptions mopt;
  mopt.N = cfg->N;
  const Eigen::Vector2d x(0.1, 0.05);
  const auto ep = run_episode(cfg->system, cfg->sets, cfg->cost, cfg->control_box, x, *barrier, *surrogate,
                              cfg->initial_controller, mopt);
  EXPECT_EQ(ep.trajectory.length(), 0);
  EXPECT_EQ(ep.solves, 0);
  EXPECT_NEAR(ep.cost, 0.0125, 1e-15);
}

TEST_F(Ex2Episode, StartOutsideReachAvoidSetAborts) {
  MpcOptions mopt;
  mopt.N = cfg->N;
  GuidanceBarrier neg = *barrier;
  neg.v = -1.0 * neg.v;
  EXPECT_THROW(run_episode(cfg->system, cfg->sets, cfg->cost, cfg->control_box, cfg->x0, neg, *surrogate,
                           cfg->initial_controller, mopt),
               EpisodeAbort);
}
