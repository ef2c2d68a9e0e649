#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace ldcap;

namespace {

OuModel model_2d() {
  OuModel ou;
  ou.gamma = Eigen::Vector2d(0.5, 2.0);
  ou.vol = Eigen::Vector2d(1.0, 0.4);
  ou.mean = Eigen::Vector2d(0.3, -0.2);
  ou.noise_scale = 0.2;
  ou.horizon = 1.5;
  return ou;
}

}  // namespace

TEST(Injections, CounterNormalMoments) {
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = counter_normal(42, static_cast<std::uint64_t>(k), 0, 0);
    s += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(s4 / n, 3.0, 0.06);
  EXPECT_EQ(counter_normal(1, 2, 3, 4), counter_normal(1, 2, 3, 4));
  EXPECT_NE(counter_normal(1, 2, 3, 4), counter_normal(1, 2, 3, 5));
}

TEST(Injections, ExactTransitionMomentsAtHorizon) {
  OuModel ou;
  ou.gamma = Eigen::VectorXd::Constant(1, 0.8);
  ou.vol = Eigen::VectorXd::Constant(1, 1.3);
  ou.mean = Eigen::VectorXd::Constant(1, 0.4);
  ou.noise_scale = 0.5;
  ou.horizon = 2.0;
  // a single exact step and many small ones must share the same law
  for (std::size_t steps : {1u, 50u}) {
    const int reps = 40000;
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const auto path = simulate_ou(ou, steps, 9, static_cast<std::uint64_t>(r));
      const double x = path.values(static_cast<Eigen::Index>(steps), 0) - 0.4;
      s += x;
      s2 += x * x;
    }
    const double var = 0.5 * 1.3 * 1.3 * (1.0 - std::exp(-2.0 * 0.8 * 2.0)) / (2.0 * 0.8);
    EXPECT_NEAR(s / reps, 0.0, 4.0 * std::sqrt(var / reps));
    EXPECT_NEAR(s2 / reps / var, 1.0, 0.03);
  }
}

TEST(Injections, SimulationIsDeterministicAndStartsAtMean) {
  const auto ou = model_2d();
  const auto a = simulate_ou(ou, 100, 7, 3);
  const auto b = simulate_ou(ou, 100, 7, 3);
  const auto c = simulate_ou(ou, 100, 7, 4);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  EXPECT_EQ(Eigen::VectorXd(a.values.row(0).transpose()), ou.mean);
  EXPECT_DOUBLE_EQ(a.dt(), 0.015);
  EXPECT_DOUBLE_EQ(a.time(100), 1.5);
}

TEST(Injections, ZeroNoiseStaysAtMean) {
  auto ou = model_2d();
  ou.noise_scale = 0.0;
  const auto p = simulate_ou(ou, 20, 1);
  for (Eigen::Index k = 0; k < p.values.rows(); ++k) EXPECT_EQ(Eigen::VectorXd(p.values.row(k).transpose()), ou.mean);
}

TEST(Injections, EulerMaruyamaMatchesOuInLaw) {
  const auto ou = model_2d();
  const auto dm = as_diffusion(ou);
  const int reps = 20000;
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const auto p = simulate_diffusion(dm, 400, 5, static_cast<std::uint64_t>(r));
    const double x = p.values(400, 1) - ou.mean(1);
    s += x;
    s2 += x * x;
  }
  const double var = 0.2 * 0.16 * (1.0 - std::exp(-2.0 * 2.0 * 1.5)) / 4.0;
  EXPECT_NEAR(s / reps, 0.0, 4.0 * std::sqrt(var / reps));
  EXPECT_NEAR(s2 / reps / var, 1.0, 0.04);
}

TEST(Injections, RateFunctionalOfQuadraticPath) {
  // x(t) = mu + c t^2, one coordinate: integrand ((2 c t + g c t^2) / l)^2 / 2
  OuModel ou;
  ou.gamma = Eigen::VectorXd::Constant(1, 0.7);
  ou.vol = Eigen::VectorXd::Constant(1, 1.4);
  ou.mean = Eigen::VectorXd::Constant(1, 0.1);
  ou.horizon = 1.2;
  const double c = 0.9;
  const std::size_t n = 4000;
  SamplePath p{ou.horizon, Eigen::MatrixXd(n + 1, 1)};
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = p.time(k);
    p.values(static_cast<Eigen::Index>(k), 0) = 0.1 + c * t * t;
  }
  const double g = 0.7, l2 = 1.96, big_t = 1.2;
  // closed form of 1/2 int_0^T c^2 (2 t + g t^2)^2 / l^2 dt
  const double exact = 0.5 * c * c / l2 *
                       (4.0 * std::pow(big_t, 3) / 3.0 + g * std::pow(big_t, 4) + g * g * std::pow(big_t, 5) / 5.0);
  EXPECT_NEAR(rate_functional(p, ou), exact, 1e-6 * exact);
  // the mean path costs nothing
  p.values.setConstant(0.1);
  EXPECT_EQ(rate_functional(p, ou), 0.0);
}

TEST(Injections, ValidationErrors) {
  auto ou = model_2d();
  ou.vol(1) = 0.0;
  try {
    ou.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveVolatility);
  }
  ou = model_2d();
  ou.gamma(0) = -1.0;
  EXPECT_THROW(ou.validate(), Error);
  ou = model_2d();
  ou.horizon = 0.0;
  EXPECT_THROW(ou.validate(), Error);
  EXPECT_FALSE(model_2d().uniform_gamma());
  ou = model_2d();
  ou.gamma.setConstant(1.5);
  EXPECT_TRUE(ou.uniform_gamma());
}
