#pragma once

// Denoisers predict per-token categorical distributions from noisy
// embeddings. Batches stack B sequences of length L row-wise ((B*L) x D) and
// carry one gamma per sequence.

#include "catflow/common.hpp"
#include "catflow/diffkit.hpp"
#include "catflow/embedding.hpp"

#include <span>
#include <vector>

namespace catflow {

class Rng;

struct DenoiserOutput {
  Matrix logits;  // (B*L) x V
  Matrix probs;   // (B*L) x V, rows stochastic
  Matrix z_hat;   // (B*L) x D, E^T probs rowwise
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const EmbeddingTable& table() const = 0;

  virtual DenoiserOutput forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                 int seq_len) const = 0;

  // cotangent^T (d z_hat / d z) with the self-conditioning input held fixed.
  // Sequences in the batch are independent, so the result is block-local.
  virtual Matrix z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len,
                           const Matrix& cotangent) const = 0;
};

// Checks batch geometry shared by every implementation; returns B.
int check_batch(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len, int dim);

// Per-row copy of per-sequence gammas.
Vector expand_gammas(std::span<const double> gammas, int seq_len);

struct NetworkShape {
  int vocab_size = 0;
  int dim = 0;
  int hidden = 128;
  int gamma_features = 16;
};

// Per-token two-layer tanh perceptron with mean-pool context mixing and
// sinusoidal gamma conditioning. W_in and W_SC start at zero so the fused
// input z + z W_in + z_sc W_SC equals z at initialization.
struct DenoiserParams {
  NetworkShape shape;
  diff::Parameter w_in;      // D x D
  diff::Parameter w_sc;      // D x D
  diff::Parameter w_hidden;  // D x H
  diff::Parameter w_gamma;   // F x H
  diff::Parameter b_hidden;  // 1 x H
  diff::Parameter w_mix;     // 2H x H
  diff::Parameter b_mix;     // 1 x H
  diff::Parameter w_out;     // H x V
  diff::Parameter b_out;     // 1 x V

  static DenoiserParams init(const NetworkShape& shape, Rng& rng);

  std::vector<diff::Parameter*> all();
  std::vector<const diff::Parameter*> all() const;
};

// Sinusoidal features of gamma, one row per entry.
Matrix gamma_features(const Vector& row_gammas, int features);

struct ForwardInputs {
  diff::Var z_gamma;
  diff::Var table;
  const Matrix* z_sc = nullptr;
  std::span<const double> gammas;
  int seq_len = 1;
  double r = 0.0;  // tokenwise bias weight
};

struct ForwardNodes {
  diff::Var logits;
  diff::Var probs;
  diff::Var z_hat;
};

// Parameters enter the tape as constants.
ForwardNodes build_forward(diff::Tape& tape, const DenoiserParams& params, const ForwardInputs& in);
// Parameters enter the tape as differentiable leaves.
ForwardNodes build_forward_tracked(diff::Tape& tape, DenoiserParams& params, const ForwardInputs& in);

class NetworkDenoiser final : public Denoiser {
 public:
  NetworkDenoiser(DenoiserParams params, EmbeddingTable table, double r);

  const EmbeddingTable& table() const override { return table_; }
  const DenoiserParams& params() const { return params_; }
  double bias_weight() const { return r_; }

  DenoiserOutput forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                         int seq_len) const override;
  Matrix z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len,
                   const Matrix& cotangent) const override;

 private:
  DenoiserParams params_;
  EmbeddingTable table_;
  double r_;
};

}  // namespace catflow
