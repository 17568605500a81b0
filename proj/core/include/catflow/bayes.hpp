#pragma once

// Closed-form Bayes posteriors E[1_x | z_gamma] for the Gaussian gamma-path
// observation model z_gamma^(i) ~ N(alpha e_{x_i}, sigma^2 I). These are the
// ground-truth denoisers for tests and oracle sampling.

#include "catflow/corpus.hpp"
#include "catflow/denoiser.hpp"
#include "catflow/gamma_path.hpp"

namespace catflow {

// softmax_k [log prior_k + (alpha/sigma^2) e_k.z - alpha^2 |e_k|^2 / (2 sigma^2)]
Vector bayes_posterior_contextfree(const Vector& z_row, double gamma, const EmbeddingTable& table,
                                   const Vector& prior);

inline constexpr double kEnumerationCap = 1e5;

// Marginal posteriors by enumerating all V^L sequences; CapacityError above
// kEnumerationCap sequences.
Matrix bayes_posterior_sequence(const NoisySequence& z_gamma, const EmbeddingTable& table,
                                const MarkovProcess& process);

// Same marginals by forward-backward message passing; exact for any L.
Matrix bayes_posterior_markov(const NoisySequence& z_gamma, const EmbeddingTable& table,
                              const MarkovProcess& process);

// Context-free oracle: each token uses the prior alone. Ignores z_sc.
class ContextFreeBayesDenoiser final : public Denoiser {
 public:
  ContextFreeBayesDenoiser(EmbeddingTable table, Vector prior);

  const EmbeddingTable& table() const override { return table_; }
  DenoiserOutput forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                         int seq_len) const override;
  Matrix z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len,
                   const Matrix& cotangent) const override;

 private:
  EmbeddingTable table_;
  Vector log_prior_;
};

// Sequence oracle for an order-0/1 process. Ignores z_sc.
class MarkovBayesDenoiser final : public Denoiser {
 public:
  MarkovBayesDenoiser(EmbeddingTable table, MarkovProcess process);

  const EmbeddingTable& table() const override { return table_; }
  DenoiserOutput forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                         int seq_len) const override;
  // Uses posterior covariances across positions (expectation-semiring
  // forward-backward), so cross-token Jacobian blocks are exact.
  Matrix z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len,
                   const Matrix& cotangent) const override;

 private:
  EmbeddingTable table_;
  MarkovProcess process_;
};

}  // namespace catflow
