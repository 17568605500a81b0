#pragma once

// ODE evidence lower bound on log p(x):
//   LD/2 - |z_b|^2 / (2 sigma_b^2) + sum_i log x_hat^(i, x_i)(z_a, a)
//        - int_a^b (alpha_gamma / 2) div z_hat(z_gamma, gamma) dgamma
// with z_a ~ N(alpha_a E^T x, sigma_a^2 I) carried to b by the model ODE.

#include "catflow/denoiser.hpp"
#include "catflow/sampler.hpp"
#include "catflow/scheduler.hpp"

#include <functional>
#include <utility>

namespace catflow {

class Rng;

inline constexpr int kExactDivergenceCap = 64;

// A map R^{rows x cols} -> R^{rows x cols} with reverse-mode products.
struct VectorField {
  int rows = 1;
  int cols = 1;
  std::function<Matrix(const Matrix&)> value;
  std::function<Matrix(const Matrix& point, const Matrix& cotangent)> vjp;  // cotangent^T J
};

// Trace of the Jacobian from rows*cols basis products; CapacityError above
// kExactDivergenceCap coordinates.
double divergence_exact(const VectorField& field, const Matrix& point);

struct TraceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

// Mean of v^T J v over Rademacher probes v.
TraceEstimate divergence_hutchinson(const VectorField& field, const Matrix& point, int probes, Rng& rng);

// Field z -> z_hat(z, gamma) of a single sequence with z_sc held fixed.
VectorField denoiser_field(const Denoiser& model, double gamma, Matrix z_sc);

// Batched variants over stacked independent sequences: one entry per sequence.
Vector divergence_exact_batch(const Denoiser& model, const Matrix& z, std::span<const double> gammas,
                              const Matrix& z_sc, int seq_len);
std::pair<Vector, Vector> divergence_hutchinson_batch(const Denoiser& model, const Matrix& z,
                                                      std::span<const double> gammas, const Matrix& z_sc,
                                                      int seq_len, int probes, Rng& rng);

enum class DivergenceMode { Exact, Hutchinson };

struct ElboOptions {
  int steps = 128;
  DivergenceMode mode = DivergenceMode::Exact;
  int probes = 1;
  int draws = 8;
  bool self_condition = true;
  bool quasi_random = true;  // RQMC z_a draws
  // Adds the zero-mean (|eps_a|^2 - LD) / 2 to the prior term per draw.
  bool control_variate = true;
};

struct ElboEstimate {
  double constant = 0.0;    // LD/2
  double prior = 0.0;       // -|z_b|^2 / (2 sigma_b^2), estimated
  double decoder = 0.0;     // sum_i log x_hat(z_a, a)
  double divergence = 0.0;  // -int (alpha/2) div z_hat
  double total = 0.0;       // nats, lower bound on log p(x)
  double nll_per_token = 0.0;
  double perplexity = 0.0;
  double std_error = 0.0;             // of total, across z_a draws
  double divergence_std_error = 0.0;  // probe noise of the divergence term (Hutchinson only)
  int length = 0;
};

ElboEstimate elbo(std::span<const int> tokens, const Denoiser& model, const SchedulerParams& schedule,
                  const ElboOptions& options, Rng& rng);

double ppl(double per_token_nll);

}  // namespace catflow
