#include <random>

#include <gtest/gtest.h>

#include "rampc/scenario.hpp"

using namespace rampc;

namespace {

std::vector<CostSample> quadratic_data(int count, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<CostSample> out;
  for (int i = 0; i < count; ++i) {
    const Eigen::Vector2d x(U(rng), U(rng));
    out.push_back({x, 1.0 + 2.0 * x(0) * x(0) - x(0) * x(1) + 0.5 * x(1) + noise * U(rng)});
  }
  return out;
}

}  // namespace

TEST(Scenario, RequiredSamples) {
  EXPECT_EQ(required_samples(0.1, 0.1, 10), 267);
  EXPECT_EQ(required_samples(0.1, 0.1, 6), 187);
  EXPECT_EQ(required_samples(0.05, 0.05, 6), 400);
  for (int l : {1, 3, 6, 10, 20}) {
    const int n = required_samples(0.1, 0.05, l);
    EXPECT_GE(0.1, 2.0 * (std::log(20.0) + l + 1) / n);
    EXPECT_LT(0.1, 2.0 * (std::log(20.0) + l + 1) / (n - 1));
  }
  EXPECT_THROW(required_samples(0.0, 0.1, 3), std::invalid_argument);
  EXPECT_THROW(required_samples(0.1, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(required_samples(0.1, 0.1, 0), std::invalid_argument);
}

TEST(Scenario, TwoPointMinimaxFit) {
  // Same x with costs 1 and 3: best constant is 2 with residual 1.
  const std::vector<CostSample> data{{Eigen::VectorXd::Constant(1, 0.5), 1.0}, {Eigen::VectorXd::Constant(1, 0.5), 3.0}};
  const auto s = fit(data, {{0}}, 1e4, 0.1, 0.1);
  EXPECT_NEAR(s.c(0), 2.0, 1e-9);
  EXPECT_NEAR(s.delta_star, 1.0, 1e-9);
}

TEST(Scenario, RepresentableCostIsFitExactly) {
  const auto data = quadratic_data(50, 0.0, 7);
  const auto s = fit(data, monomial_basis(2, 2), 1e4, 0.1, 0.1);
  EXPECT_LE(s.delta_star, 1e-8);
  const Polynomial q = s.polynomial();
  EXPECT_NEAR(q.coefficient({0, 0}), 1.0, 1e-8);
  EXPECT_NEAR(q.coefficient({2, 0}), 2.0, 1e-8);
  EXPECT_NEAR(q.coefficient({1, 1}), -1.0, 1e-8);
  EXPECT_NEAR(q.coefficient({0, 1}), 0.5, 1e-8);
}

TEST(Scenario, TrainingResidualEqualsDeltaStar) {
  const auto data = quadratic_data(187, 0.2, 11);
  const auto s = fit(data, monomial_basis(2, 2), 1e4, 0.1, 0.1);
  const Eigen::VectorXd res = template_matrix(data, s.cost_template) * s.c;
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) worst = std::max(worst, std::abs(res(static_cast<Eigen::Index>(i)) - data[i].cost));
  EXPECT_NEAR(worst, s.delta_star, 1e-8);
  EXPECT_EQ(s.n_samples, 187);
}

TEST(Scenario, MinimaxIsOptimalAgainstPerturbations) {
  const auto data = quadratic_data(187, 0.2, 13);
  const auto s = fit(data, monomial_basis(2, 2), 1e4, 0.1, 0.1);
  const Eigen::MatrixXd Phi = template_matrix(data, s.cost_template);
  Eigen::VectorXd Q(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) Q(static_cast<Eigen::Index>(i)) = data[i].cost;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N01;
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd c = s.c;
    for (Eigen::Index k = 0; k < c.size(); ++k) c(k) += 1e-3 * N01(rng);
    EXPECT_GE((Phi * c - Q).cwiseAbs().maxCoeff(), s.delta_star - 1e-9);
  }
}

TEST(Scenario, HoldoutViolationBelowEpsilon) {
  const int n = required_samples(0.1, 0.1, 6);
  const auto s = fit(quadratic_data(n, 0.2, 17), monomial_basis(2, 2), 1e4, 0.1, 0.1);
  EXPECT_LE(holdout_validate(s, quadratic_data(2000, 0.2, 18)), 0.12);
}

TEST(Scenario, SurrogateJsonRoundTrip) {
  const auto s = fit(quadratic_data(30, 0.1, 3), monomial_basis(2, 2), 1e4, 0.05, 0.05);
  const nlohmann::json j = s;
  const auto back = j.get<CostSurrogate>();
  EXPECT_EQ(back.cost_template, s.cost_template);
  EXPECT_EQ(back.c, s.c);
  EXPECT_DOUBLE_EQ(back.delta_star, s.delta_star);
  EXPECT_DOUBLE_EQ(back.epsilon, 0.05);
  nlohmann::json bad = j;
  bad["c"].push_back(1.0);
  EXPECT_THROW(bad.get<CostSurrogate>(), std::invalid_argument);
}

TEST(Scenario, FitRejectsEmptyInputs) {
  EXPECT_THROW(fit({}, monomial_basis(2, 2), 1e4, 0.1, 0.1), std::invalid_argument);
  EXPECT_THROW(fit(quadratic_data(5, 0.0, 1), {}, 1e4, 0.1, 0.1), std::invalid_argument);
}
