#pragma once

// Learnable Gumbel noise scheduler. The entropy model
//   H(gamma) = H_inf * exp(-exp(-(gamma - mu) / beta))
// is H_inf times the Gumbel CDF, so gamma draws are Gumbel quantiles.

#include "catflow/common.hpp"

#include <span>
#include <utility>
#include <vector>

namespace catflow {

class Rng;

inline constexpr double kQuantileClip = 1e-5;

// Stored unconstrained: h_inf = softplus(raw_h_inf), beta = softplus(raw_beta).
struct SchedulerParams {
  double raw_h_inf = 0.0;
  double mu = 0.0;
  double raw_beta = 0.0;

  static SchedulerParams from_values(double h_inf, double mu, double beta);
  // H_inf = log V, mu = 0, beta = 2.
  static SchedulerParams initial(int vocab_size);

  double h_inf() const { return softplus(raw_h_inf); }
  double beta() const { return softplus(raw_beta); }

  // [a, b]: the lower and upper kQuantileClip quantiles, recomputed from the
  // current parameters at every use.
  double clip_lo() const;
  double clip_hi() const;

  friend bool operator==(const SchedulerParams&, const SchedulerParams&) = default;
};

double entropy_model(double gamma, const SchedulerParams& params);
double gumbel_cdf(double gamma, const SchedulerParams& params);
double gumbel_density(double gamma, const SchedulerParams& params);

double quantile(double q, const SchedulerParams& params);

// Shared-offset stratified quantiles q_i = ((i + u) / B) mod 1, clipped.
std::vector<double> training_quantiles(int batch, double offset);
std::vector<double> sample_training_gammas(int batch, Rng& rng, const SchedulerParams& params);

// N + 1 strictly decreasing values from clip_hi() down to clip_lo().
std::vector<double> sampling_grid(int steps, const SchedulerParams& params);

struct FitOptions {
  int iterations = 20000;
  double learning_rate = 0.02;
  double initial_h_inf = 0.0;  // <= 0 means: start at the largest observed loss
};

struct FitResult {
  SchedulerParams params;
  double rmse = 0.0;
  // Every sample sits on the saturated plateau: the curve's rise lies left
  // of the data and mu/beta are not identified.
  bool saturated = false;
};

// Least-squares fit of the entropy model to (gamma, loss) pairs by gradient
// descent from the default initialization.
FitResult fit_check(std::span<const std::pair<double, double>> pairs, const FitOptions& options = {});

}  // namespace catflow
