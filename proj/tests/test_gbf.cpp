#include <random>

#include <gtest/gtest.h>

#include "rampc/config.hpp"

using namespace rampc;

namespace {

struct Ex1Barrier : ::testing::Test {
  static void SetUpTestSuite() {
    cfg = new ExampleConfig(builtin_config("ex1"));
    GbfOptions opt;
    opt.degrees = cfg->gbf_degrees;
    barrier = new GuidanceBarrier(
        synthesize(cfg->system, cfg->initial_controller, cfg->sets, cfg->lambda, cfg->M, cfg->x0, opt));
  }
  static void TearDownTestSuite() {
    delete barrier;
    delete cfg;
  }
  static std::vector<Polynomial> closed_loop() {
    return cfg->system.closed_loop(cfg->initial_controller.polynomial());
  }
  static ExampleConfig* cfg;
  static GuidanceBarrier* barrier;
};

ExampleConfig* Ex1Barrier::cfg = nullptr;
GuidanceBarrier* Ex1Barrier::barrier = nullptr;

}  // namespace

TEST_F(Ex1Barrier, CertificatePassesIndependentSampling) {
  std::mt19937_64 rng(99);
  const auto rep = verify_certificate(*barrier, closed_loop(), cfg->sets, 10000, rng);
  EXPECT_TRUE(rep.passed(1e-6)) << "worst " << rep.worst();
  EXPECT_GT(rep.value_at_x0, 0.0);
  EXPECT_EQ(rep.samples_decrease, 10000);
}

TEST_F(Ex1Barrier, DecreaseConditionHoldsPointwise) {
  // Direct check of v(f(x)) >= lambda v(x) on a grid over X \ T.
  const auto cl = closed_loop();
  double worst = 0.0;
  for (double p = -8.0; p <= 8.0; p += 0.25)
    for (double v = -8.0; v <= 8.0; v += 0.25) {
      const Eigen::Vector2d x(p, v);
      if (cfg->sets.w.eval(x) > 0.0 || cfg->sets.g.eval(x) <= 0.0) continue;
      worst = std::min(worst, barrier->v.eval(eval_all(cl, x)) - barrier->lambda * barrier->v.eval(x));
    }
  EXPECT_GE(worst, -1e-6);
}

TEST_F(Ex1Barrier, NegatedCertificateFails) {
  GuidanceBarrier neg = *barrier;
  neg.v = -1.0 * neg.v;
  std::mt19937_64 rng(1);
  EXPECT_FALSE(verify_certificate(neg, closed_loop(), cfg->sets, 2000, rng).passed(1e-6));
}

TEST_F(Ex1Barrier, ScalingVAndMTogetherPreservesValidity) {
  GuidanceBarrier s = *barrier;
  s.v = 10.0 * s.v;
  s.M *= 10.0;
  std::mt19937_64 rng(3);
  EXPECT_TRUE(verify_certificate(s, closed_loop(), cfg->sets, 5000, rng).passed(1e-5));
  EXPECT_EQ(hitting_time_bound(s, cfg->x0), hitting_time_bound(*barrier, cfg->x0));
}

TEST_F(Ex1Barrier, HittingBoundCoversInitialRollout) {
  const auto r = simulate(cfg->system, cfg->initial_controller, cfg->x0, cfg->sets.g, cfg->sets.w, 100000, cfg->cost);
  ASSERT_TRUE(std::holds_alternative<Trajectory>(r));
  EXPECT_LE(std::get<Trajectory>(r).length(), hitting_time_bound(*barrier, cfg->x0));
}

TEST_F(Ex1Barrier, JsonRoundTrip) {
  const nlohmann::json j = *barrier;
  const auto back = j.get<GuidanceBarrier>();
  EXPECT_EQ(back.v, barrier->v);
  EXPECT_DOUBLE_EQ(back.lambda, barrier->lambda);
  EXPECT_DOUBLE_EQ(back.M, barrier->M);
}

TEST(Gbf, HittingTimeBound) {
  GuidanceBarrier b;
  b.v = Polynomial::constant(1, 0.5);
  b.lambda = 1.001;
  b.M = 1.0;
  // ln(2) / ln(1.001) = 693.49
  EXPECT_EQ(hitting_time_bound(b, Eigen::VectorXd::Zero(1)), 694);
  b.v = Polynomial::constant(1, 1.0);
  EXPECT_EQ(hitting_time_bound(b, Eigen::VectorXd::Zero(1)), 0);
  b.v = Polynomial::constant(1, -1.0);
  EXPECT_THROW(hitting_time_bound(b, Eigen::VectorXd::Zero(1)), DomainError);
}

TEST(Gbf, BoundingBoxOfDisc) {
  const auto c = builtin_config("ex1");
  const Box b = quadratic_bounding_box(c.sets.w0);
  const double r = std::sqrt(128.0);
  EXPECT_NEAR(b.lo(0), -r, 1e-12);
  EXPECT_NEAR(b.hi(1), r, 1e-12);
}

TEST(Gbf, RejectsBadInputs) {
  const auto c = builtin_config("ex1");
  EXPECT_THROW(synthesize(c.system, c.initial_controller, c.sets, 1.0, 1.0, c.x0), std::invalid_argument);
  EXPECT_THROW(synthesize(c.system, c.initial_controller, c.sets, 1.001, 1.0, Eigen::Vector2d(0, 0)),
               std::invalid_argument);
}

TEST(Gbf, UnstabilizableLoopHasNoCertificate) {
  // Control pushing outward: no state ever reaches T.
  auto c = builtin_config("ex1");
  LinearFeedback away = c.initial_controller;
  away.K << 0.0, 0.5;
  GbfOptions opt;
  opt.degrees = {2};
  EXPECT_THROW(synthesize(c.system, away, c.sets, 1.001, 1.0, c.x0, opt), SynthesisFailure);
}
