#include "catflow/bayes.hpp"
#include "catflow/corpus.hpp"
#include "catflow/metrics.hpp"
#include "catflow/rng.hpp"
#include "catflow/scheduler.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

using namespace catflow;

namespace {

Matrix mixed_chain() {
  Matrix t(3, 3);
  t << 0.5, 0.5, 0.0, 0.1, 0.6, 0.3, 0.4, 0.0, 0.6;
  return t;
}

}  // namespace

TEST(Corpus, DeterministicChainIsConstant) {
  Matrix t(2, 2);
  t << 1.0, 0.0, 0.0, 1.0;
  Vector start(2);
  start << 0.0, 1.0;
  EXPECT_THROW(MarkovProcess::chain(start, t), InvalidInput);  // reducible

  Matrix cycle(2, 2);
  cycle << 0.0, 1.0, 1.0, 0.0;
  const MarkovProcess p = MarkovProcess::chain(start, cycle);
  Rng rng(1);
  for (const auto& s : generate(p, 6, 5, rng)) EXPECT_EQ(s, (TokenSeq{1, 0, 1, 0, 1, 0}));
  EXPECT_EQ(true_nll(p, TokenSeq{1, 0, 1}), 0.0);
  EXPECT_TRUE(std::isinf(true_nll(p, TokenSeq{1, 1})));
}

TEST(Corpus, UniformUnigramFrequencies) {
  const MarkovProcess p = MarkovProcess::iid(Vector::Constant(4, 0.25));
  Rng rng(2);
  Vector f = Vector::Zero(4);
  for (const auto& s : generate(p, 100, 1000, rng)) {
    for (int x : s) f(x) += 1.0;
  }
  f /= 1e5;
  const double sd = std::sqrt(0.25 * 0.75 / 1e5);
  for (int k = 0; k < 4; ++k) EXPECT_LT(std::abs(f(k) - 0.25), 3.0 * sd);
  EXPECT_NEAR(true_nll(p, TokenSeq{0, 3, 2}), std::log(4.0), 1e-15);
}

TEST(Corpus, TransitionCounts) {
  const MarkovProcess p = MarkovProcess::stationary_chain(mixed_chain());
  Rng rng(3);
  Matrix counts = Matrix::Zero(3, 3);
  for (const auto& s : generate(p, 200, 200, rng)) {
    for (std::size_t i = 1; i < s.size(); ++i) counts(s[i - 1], s[i]) += 1.0;
  }
  for (int a = 0; a < 3; ++a) {
    const double n = counts.row(a).sum();
    for (int b = 0; b < 3; ++b) {
      const double q = mixed_chain()(a, b);
      const double sd = std::sqrt(std::max(q * (1 - q), 1e-12) / n);
      EXPECT_LE(std::abs(counts(a, b) / n - q), 3.0 * sd + 1e-12);
    }
  }
}

TEST(Corpus, NllMatchesHandEvaluation) {
  Vector init(3);
  init << 0.2, 0.3, 0.5;
  const MarkovProcess p = MarkovProcess::chain(init, mixed_chain());
  const TokenSeq x{2, 0, 1, 1, 2};
  const double hand = -(std::log(0.5) + std::log(0.4) + std::log(0.5) + std::log(0.6) + std::log(0.3)) / 5.0;
  EXPECT_NEAR(true_nll(p, x), hand, 1e-14);
  EXPECT_NEAR(-p.log_prob(x) / 5.0, hand, 1e-14);
}

TEST(Corpus, StationaryAndExpectedNll) {
  const MarkovProcess p = MarkovProcess::stationary_chain(mixed_chain());
  const Vector pi = p.stationary();
  EXPECT_LT((pi.transpose() * mixed_chain() - pi.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  // Exact by enumeration for L = 3.
  double h = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) {
        const TokenSeq s{a, b, c};
        const double lp = p.log_prob(s);
        if (std::isfinite(lp)) h -= std::exp(lp) * lp;
      }
    }
  }
  EXPECT_NEAR(p.expected_nll(3), h / 3.0, 1e-12);
}

TEST(Corpus, Presets) {
  for (const std::string& name : task_preset_names()) {
    const TaskPreset t = task_preset(name);
    EXPECT_EQ(t.name, name);
  }
  EXPECT_EQ(task_preset("iid8").process.vocab_size(), 8);
  EXPECT_EQ(task_preset("markov16").length, 32);
  EXPECT_THROW(task_preset("nope"), InvalidInput);
}

TEST(Corpus, FileRoundTripAndErrors) {
  Corpus c;
  c.vocab_size = 5;
  c.order = 1;
  c.seed = 42;
  c.sequences = {{0, 1, 4}, {3, 3, 2}};
  std::stringstream ss;
  write_corpus(ss, c);
  const Corpus back = read_corpus(ss);
  EXPECT_EQ(back.vocab_size, 5);
  EXPECT_EQ(back.order, 1);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.sequences, c.sequences);

  std::stringstream bad_header("vocab=5\n0 1\n");
  EXPECT_THROW(read_corpus(bad_header), InvalidInput);
  std::stringstream out_of_range("# vocab=2 order=0 seed=0\n0 2\n");
  EXPECT_THROW(read_corpus(out_of_range), InvalidInput);
  std::stringstream ragged("# vocab=2 order=0 seed=0\n0 1\n1\n");
  EXPECT_THROW(read_corpus(ragged), InvalidInput);
  std::stringstream junk("# vocab=2 order=0 seed=0\n0 x\n");
  EXPECT_THROW(read_corpus(junk), InvalidInput);
}

TEST(Metrics, SequenceEntropy) {
  EXPECT_EQ(sequence_entropy(TokenSeq(128, 3)), 0.0);
  TokenSeq distinct(128);
  for (int i = 0; i < 128; ++i) distinct[static_cast<std::size_t>(i)] = i;
  EXPECT_NEAR(sequence_entropy(distinct), 4.8520302639196172, 1e-13);
}

TEST(Metrics, MeanAndStdError) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanStat m = mean_and_stderr(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std_error, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
}

// Conditional entropy H(X | z_gamma) for V = 2, D = 1, rows +-1 by quadrature.
TEST(Metrics, OracleProfileIsPosteriorEntropy) {
  Matrix rows(2, 1);
  rows << 1.0, -1.0;
  const EmbeddingTable t(rows);
  Vector prior(2);
  prior << 0.3, 0.7;
  const ContextFreeBayesDenoiser m(t, prior);
  const std::vector<double> grid{-1.0, 0.0, 2.0};
  std::vector<TokenSeq> eval;
  Rng rng(4);
  for (const auto& s : generate(MarkovProcess::iid(prior), 1, 20000, rng)) eval.push_back(s);
  const auto prof = loss_profile(m, grid, eval, rng);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto [a, s] = oracle::path(grid[i]);
    double h = 0.0;
    const double lo = -a - 12 * s;
    const double step = (24 * s + 2 * a) / 20000;
    for (int j = 0; j <= 20000; ++j) {
      Vector z(1);
      z << lo + j * step;
      const Vector post = oracle::gaussian_posterior(z, grid[i], rows, prior);
      double dens = 0.0;
      for (int k = 0; k < 2; ++k) dens += prior(k) * oracle::gauss_pdf(z, a * Vector(rows.row(k).transpose()), s);
      h += (j == 0 || j == 20000 ? 0.5 : 1.0) * step * dens * oracle::entropy(post);
    }
    EXPECT_LT(std::abs(prof[i].loss - h), 3.0 * prof[i].std_error + 1e-9) << grid[i];
  }
}

TEST(Metrics, ProfileDerivative) {
  std::vector<ProfilePoint> lin;
  for (int i = 0; i < 11; ++i) lin.push_back({-2.0 + 0.4 * i, 0.3 + 1.5 * (-2.0 + 0.4 * i), 0.0});
  for (const auto& d : profile_derivative(lin, 3)) EXPECT_NEAR(d.derivative, 1.5, 1e-12);

  const SchedulerParams p = SchedulerParams::from_values(2.0, 0.8, 1.2);
  std::vector<ProfilePoint> gum;
  for (int i = 0; i <= 400; ++i) {
    const double g = -6.0 + 0.04 * i;
    gum.push_back({g, entropy_model(g, p), 0.0});
  }
  const auto d = profile_derivative(gum, 3);
  std::size_t peak = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d[i].derivative > d[peak].derivative) peak = i;
  }
  EXPECT_NEAR(d[peak].gamma, 0.8, 0.04);
  double integral = 0.0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    integral += 0.5 * (d[i].derivative + d[i - 1].derivative) * (d[i].gamma - d[i - 1].gamma);
  }
  const double rise = gum.back().loss - gum.front().loss;
  EXPECT_NEAR(integral, rise, 0.02 * rise);

  EXPECT_THROW(profile_derivative(std::span(lin).first(2), 3), InvalidInput);
  EXPECT_THROW(profile_derivative(lin, 2), InvalidInput);
}
