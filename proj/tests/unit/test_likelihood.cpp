#include "catflow/bayes.hpp"
#include "catflow/likelihood.hpp"
#include "catflow/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace catflow;

namespace {

VectorField linear_field(const Matrix& a) {
  VectorField f;
  f.rows = 1;
  f.cols = static_cast<int>(a.rows());
  f.value = [a](const Matrix& z) { return Matrix(z * a); };
  f.vjp = [a](const Matrix&, const Matrix& u) { return Matrix(u * a.transpose()); };
  return f;
}

}  // namespace

TEST(Divergence, ExactCases) {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(5, 5);
  EXPECT_NEAR(divergence_exact(linear_field(a), rng.normal_matrix(1, 5)), a.trace(), 1e-12);
  EXPECT_EQ(divergence_exact(linear_field(Matrix::Zero(5, 5)), rng.normal_matrix(1, 5)), 0.0);

  VectorField sq;
  sq.cols = 3;
  sq.value = [](const Matrix& z) { return Matrix(z.array().square().matrix()); };
  sq.vjp = [](const Matrix& z, const Matrix& u) { return Matrix(2.0 * z.cwiseProduct(u)); };
  Matrix p(1, 3);
  p << 1.0, 2.0, 3.0;
  EXPECT_NEAR(divergence_exact(sq, p), 12.0, 1e-15);

  VectorField big = linear_field(Matrix::Identity(65, 65));
  EXPECT_THROW(divergence_exact(big, Matrix::Zero(1, 65)), CapacityError);
}

TEST(Divergence, Hutchinson) {
  Rng rng(2);
  const Matrix a = rng.normal_matrix(6, 6);
  const Matrix x = rng.normal_matrix(1, 6);
  const TraceEstimate big = divergence_hutchinson(linear_field(a), x, 100000, rng);
  EXPECT_LT(std::abs(big.estimate - a.trace()), 3.0 * big.std_error);

  Matrix d = Matrix::Zero(4, 4);
  d.diagonal() << 1.0, -2.0, 0.5, 3.0;
  const TraceEstimate one = divergence_hutchinson(linear_field(d), Matrix::Zero(1, 4), 1, rng);
  EXPECT_NEAR(one.estimate, 2.5, 1e-15);

  const double s2 = divergence_hutchinson(linear_field(a), x, 100, rng).std_error;
  const double s3 = divergence_hutchinson(linear_field(a), x, 1000, rng).std_error;
  const double s4 = divergence_hutchinson(linear_field(a), x, 10000, rng).std_error;
  EXPECT_NEAR(s2 / s3, std::sqrt(10.0), 0.2 * std::sqrt(10.0));
  EXPECT_NEAR(s3 / s4, std::sqrt(10.0), 0.2 * std::sqrt(10.0));
}

TEST(Divergence, BatchMatchesSingle) {
  Rng rng(3);
  const EmbeddingTable t = EmbeddingTable::random(3, 2, rng);
  Vector prior(3);
  prior << 0.2, 0.3, 0.5;
  const ContextFreeBayesDenoiser m(t, prior);
  const Matrix z = rng.normal_matrix(6, 2);
  const Matrix sc = Matrix::Zero(6, 2);
  const std::vector<double> g{0.5, -1.0};
  const Vector batch = divergence_exact_batch(m, z, g, sc, 3);
  for (int b = 0; b < 2; ++b) {
    const VectorField f = denoiser_field(m, g[static_cast<std::size_t>(b)], Matrix::Zero(3, 2));
    EXPECT_NEAR(batch(b), divergence_exact(f, z.middleRows(3 * b, 3)), 1e-12);
  }
}

TEST(Elbo, TermAccounting) {
  Rng rng(4);
  const EmbeddingTable t = EmbeddingTable::random(3, 2, rng);
  Vector prior(3);
  prior << 0.2, 0.3, 0.5;
  const ContextFreeBayesDenoiser m(t, prior);
  ElboOptions o;
  o.steps = 32;
  o.draws = 4;
  const TokenSeq x{2, 0};
  const ElboEstimate e = elbo(x, m, SchedulerParams::initial(3), o, rng);
  EXPECT_NEAR(e.total, e.constant + e.prior + e.decoder + e.divergence, 1e-9);
  EXPECT_NEAR(e.constant, 2.0, 1e-15);
  EXPECT_NEAR(e.nll_per_token, -e.total / 2.0, 1e-12);
  EXPECT_NEAR(e.perplexity, std::exp(-e.total / 2.0), 1e-9);
  EXPECT_EQ(e.length, 2);
}

TEST(Elbo, DegenerateVocabulary) {
  Rng rng(5);
  const ContextFreeBayesDenoiser m(EmbeddingTable::random(1, 3, rng), Vector::Ones(1));
  ElboOptions o;
  o.steps = 16;
  o.draws = 1000;
  const TokenSeq x{0, 0};
  EXPECT_LT(std::abs(elbo(x, m, SchedulerParams::initial(1), o, rng).total), 0.02);
}

// Near-coincident rows make the flow stiff at low gamma, and a 32-step
// estimate can then overshoot log p by more than its noise; this table has
// one close pair and is resolved at 32 steps.
TEST(Elbo, FinerQuadratureIsNotWorse) {
  Rng table_rng(802);
  const EmbeddingTable t = EmbeddingTable::random(4, 2, table_rng);
  Rng rng(6);
  Vector prior(4);
  prior << 0.4, 0.3, 0.2, 0.1;
  const ContextFreeBayesDenoiser m(t, prior);
  for (int x = 0; x < 4; ++x) {
    const TokenSeq tok{x};
    ElboOptions o;
    o.draws = 64;
    o.steps = 32;
    const ElboEstimate coarse = elbo(tok, m, SchedulerParams::initial(4), o, rng);
    o.steps = 512;
    const ElboEstimate fine = elbo(tok, m, SchedulerParams::initial(4), o, rng);
    EXPECT_GE(fine.total, coarse.total - 3.0 * std::hypot(fine.std_error, coarse.std_error)) << x;
  }
}

TEST(Elbo, RejectsBadTokens) {
  Rng rng(7);
  const ContextFreeBayesDenoiser m(EmbeddingTable::random(3, 2, rng), Vector::Constant(3, 1.0 / 3));
  const TokenSeq x{3};
  EXPECT_THROW(elbo(x, m, SchedulerParams::initial(3), {}, rng), InvalidInput);
}

TEST(Elbo, Perplexity) {
  EXPECT_DOUBLE_EQ(ppl(0.0), 1.0);
  EXPECT_NEAR(ppl(std::log(7.0)), 7.0, 1e-12);
  EXPECT_NEAR(ppl(3.4012), 30.0, 1e-3);
}
