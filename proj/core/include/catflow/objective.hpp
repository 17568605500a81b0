#pragma once

#include "catflow/common.hpp"
#include "catflow/diffkit.hpp"
#include "catflow/embedding.hpp"
#include "catflow/gamma_path.hpp"
#include "catflow/scheduler.hpp"

#include <functional>
#include <span>

namespace catflow {

// Convex generator f on the probability simplex together with its gradient.
struct ConvexGenerator {
  std::function<double(const Vector&)> f;
  std::function<Vector(const Vector&)> grad_f;
  bool requires_positive_q = false;
};

// f(p) = sum p log p (with 0 log 0 = 0). Its Bregman divergence is KL(p || q).
ConvexGenerator negative_entropy();
// f(p) = |p|^2 / 2.
ConvexGenerator half_squared_norm();

// f(p) - f(q) - grad f(q) . (p - q). Returns +inf when the generator needs
// q > 0 and q vanishes somewhere p does not.
double bregman(const ConvexGenerator& gen, const Vector& p, const Vector& q);

// -(1/L) sum_i log probs[i, tokens[i]]; +inf if a target has zero mass.
double ce_loss(const Matrix& probs, std::span<const int> tokens);
// Same loss from unnormalized logits via a stable log-softmax.
double ce_loss_from_logits(const Matrix& logits, std::span<const int> tokens);

// (ell - H_gamma(params))^2 with ell treated as a constant.
double scheduler_loss(double ell_detached, double gamma, const SchedulerParams& params);

// Squared Frobenius norm |z - z_hat|^2 (weight lambda(gamma) = 1).
double mse_loss(const Matrix& z_hat, const Matrix& z);

// Tokenwise logit bias r * (alpha / sigma^2) * e_k^T z_gamma^(i), additive constant dropped.
Matrix bias_logits(const NoisySequence& z_gamma, const EmbeddingTable& table, double r);

// --- graph versions used by the trainer --------------------------------

// Differentiable scheduler parameters are a 1 x 3 row [raw_h_inf, mu, raw_beta].
diff::Parameter scheduler_parameter(const SchedulerParams& params);
SchedulerParams scheduler_from_parameter(const diff::Parameter& param);

// Per-sample entropy model H(gamma_b); gammas are constants (stop-gradient).
diff::Var entropy_model_node(diff::Tape& tape, diff::Var scheduler_row, const Vector& gammas);
// mean_b (ell_b - H(gamma_b))^2 with ell detached.
diff::Var scheduler_loss_node(diff::Tape& tape, diff::Var scheduler_row, const Vector& ell_detached,
                              const Vector& gammas);

// r * (alpha_row / sigma_row^2) * z_gamma E^T, one coefficient per row.
diff::Var bias_logits_node(diff::Tape& tape, diff::Var z_gamma, diff::Var table, const Vector& row_coef, double r);

}  // namespace catflow
