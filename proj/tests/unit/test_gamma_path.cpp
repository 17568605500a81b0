#include "catflow/gamma_path.hpp"
#include "catflow/rng.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace catflow;

TEST(GammaPath, MidpointIsBalanced) {
  const PathCoeffs c = coeffs(0.0);
  EXPECT_NEAR(c.alpha, 0.70710678118654752, 1e-15);
  EXPECT_NEAR(c.sigma, 0.70710678118654752, 1e-15);
}

TEST(GammaPath, SaturatedEndpoint) {
  const PathCoeffs c = coeffs(50.0);
  EXPECT_NEAR(c.sigma, 1.0, 1e-15);
  EXPECT_NEAR(c.alpha, std::exp(-25.0), 1e-20);
}

TEST(GammaPath, VariancePreservingAndRoundTrip) {
  for (double g = -50.0; g <= 50.0; g += 0.37) {
    const PathCoeffs c = coeffs(g);
    EXPECT_NEAR(c.alpha * c.alpha + c.sigma * c.sigma, 1.0, 1e-12);
    EXPECT_NEAR(gamma_of(c.alpha, c.sigma), g, 1e-9) << g;
  }
  const PathCoeffs c = coeffs(2.0);
  EXPECT_NEAR(std::log(c.sigma * c.sigma / (c.alpha * c.alpha)), 2.0, 1e-9);
}

TEST(GammaPath, RejectsNonFinite) {
  EXPECT_THROW(coeffs(std::numeric_limits<double>::quiet_NaN()), InvalidInput);
  EXPECT_THROW(coeffs(std::numeric_limits<double>::infinity()), InvalidInput);
}

TEST(GammaPath, PlotTime) {
  EXPECT_DOUBLE_EQ(t_ot_of_gamma(0.0), 0.5);
  EXPECT_NEAR(t_ot_of_gamma(-1e3), 0.0, 1e-15);
  EXPECT_NEAR(t_ot_of_gamma(1e3), 1.0, 1e-15);
  EXPECT_NEAR(t_ot_of_gamma(2.0), 0.73105857863000488, 1e-15);
}

TEST(GammaPath, NoiseLimits) {
  Rng rng(3);
  const Matrix z = rng.normal_matrix(3, 4);
  const Matrix eps = rng.normal_matrix(3, 4);
  const PathCoeffs c = coeffs(0.7);
  EXPECT_TRUE(noise(z, 0.7, Matrix::Zero(3, 4)).values.isApprox(c.alpha * z, 1e-15));
  EXPECT_TRUE(noise(Matrix::Zero(3, 4), 0.7, eps).values.isApprox(c.sigma * eps, 1e-15));
  EXPECT_THROW(noise(z, 0.7, Matrix::Zero(3, 3)), InvalidInput);
}

TEST(GammaPath, NoiseSecondMoment) {
  Rng rng(4);
  const Matrix z = rng.normal_matrix(2, 3);
  const double g = -0.4;
  const PathCoeffs c = coeffs(g);
  const int n = 100000;
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = noise(z, g, rng.normal_matrix(2, 3)).values.squaredNorm();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  const double expected = c.alpha * c.alpha * z.squaredNorm() + c.sigma * c.sigma * 6.0;
  EXPECT_LT(std::abs(mean - expected), 3.0 * se);
}

TEST(GammaPath, Velocity) {
  const double g = 0.3;
  const PathCoeffs c = coeffs(g);
  Matrix e(1, 2);
  e << 1.0, -2.0;
  const Matrix v0 = velocity_from_denoiser({Matrix::Zero(1, 2), g}, e);
  EXPECT_TRUE(v0.isApprox(-0.5 * c.alpha * e, 1e-15));

  Rng rng(5);
  const Matrix z = rng.normal_matrix(2, 2);
  const Matrix v1 = velocity_from_denoiser({z, g}, z / c.alpha);
  EXPECT_TRUE(v1.isApprox(-0.5 * c.sigma * c.sigma * z, 1e-12));
  EXPECT_THROW(velocity_from_denoiser({z, g}, e), InvalidInput);

  const Matrix zh = rng.normal_matrix(2, 2);
  EXPECT_TRUE(velocity_from_denoiser({z, g}, zh).isApprox(0.5 * c.alpha * c.alpha * z - 0.5 * c.alpha * zh, 1e-14));
}

TEST(GammaPath, FrozenVelocityMatchesClosedForm) {
  Rng rng(6);
  const Matrix z0 = rng.normal_matrix(2, 3);
  const Matrix zh = rng.normal_matrix(2, 3);
  const double g0 = 3.0;
  const double g1 = -1.5;
  const Matrix fine = oracle::rk4([&](const Matrix&, double) { return zh; }, z0, g0, g1, 2000);
  const PathCoeffs a = coeffs(g0);
  const PathCoeffs b = coeffs(g1);
  const Matrix closed = b.sigma * (z0 / a.sigma + (b.alpha / b.sigma - a.alpha / a.sigma) * zh);
  EXPECT_LT((fine - closed).cwiseAbs().maxCoeff(), 1e-9);
}
