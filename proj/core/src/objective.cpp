#include "catflow/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace catflow {

ConvexGenerator negative_entropy() {
  ConvexGenerator g;
  g.f = [](const Vector& p) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (p(k) > 0.0) s += p(k) * std::log(p(k));
    }
    return s;
  };
  g.grad_f = [](const Vector& p) {
    Vector out(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) out(k) = std::log(p(k)) + 1.0;
    return out;
  };
  g.requires_positive_q = true;
  return g;
}

ConvexGenerator half_squared_norm() {
  ConvexGenerator g;
  g.f = [](const Vector& p) { return 0.5 * p.squaredNorm(); };
  g.grad_f = [](const Vector& p) { return p; };
  return g;
}

double bregman(const ConvexGenerator& gen, const Vector& p, const Vector& q) {
  require(p.size() == q.size() && p.size() > 0, "bregman: p and q must have the same positive length");
  if (gen.requires_positive_q) {
    bool p_positive_on_q_zero = false;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (q(k) <= 0.0 && p(k) > 0.0) p_positive_on_q_zero = true;
    }
    if (p_positive_on_q_zero) return std::numeric_limits<double>::infinity();
    // Coordinates with q = p = 0 contribute nothing; drop them to avoid 0 * log 0.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (q(k) > 0.0) keep.push_back(k);
    }
    Vector ps(static_cast<Eigen::Index>(keep.size()));
    Vector qs(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      ps(static_cast<Eigen::Index>(i)) = p(keep[i]);
      qs(static_cast<Eigen::Index>(i)) = q(keep[i]);
    }
    return std::max(0.0, gen.f(ps) - gen.f(qs) - gen.grad_f(qs).dot(ps - qs));
  }
  return std::max(0.0, gen.f(p) - gen.f(q) - gen.grad_f(q).dot(p - q));
}

double ce_loss(const Matrix& probs, std::span<const int> tokens) {
  require(static_cast<Eigen::Index>(tokens.size()) == probs.rows() && !tokens.empty(),
          "ce_loss: one token per probability row required");
  double s = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int k = tokens[i];
    require(k >= 0 && k < probs.cols(), "ce_loss: token id out of range");
    s -= std::log(probs(static_cast<Eigen::Index>(i), k));  // log 0 = -inf propagates
  }
  return s / static_cast<double>(tokens.size());
}

double ce_loss_from_logits(const Matrix& logits, std::span<const int> tokens) {
  require(static_cast<Eigen::Index>(tokens.size()) == logits.rows() && !tokens.empty(),
          "ce_loss_from_logits: one token per row required");
  double s = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const int k = tokens[i];
    require(k >= 0 && k < logits.cols(), "ce_loss_from_logits: token id out of range");
    const double m = row.maxCoeff();
    s += m + std::log((row.array() - m).exp().sum()) - row(k);
  }
  return s / static_cast<double>(tokens.size());
}

double scheduler_loss(double ell_detached, double gamma, const SchedulerParams& params) {
  const double r = ell_detached - entropy_model(gamma, params);
  return r * r;
}

double mse_loss(const Matrix& z_hat, const Matrix& z) {
  require(z_hat.rows() == z.rows() && z_hat.cols() == z.cols(), "mse_loss: shape mismatch");
  return (z - z_hat).squaredNorm();
}

Matrix bias_logits(const NoisySequence& z_gamma, const EmbeddingTable& table, double r) {
  require(r >= 0.0 && r <= 1.0, "bias_logits: r must lie in [0, 1]");
  require(z_gamma.values.cols() == table.dim(), "bias_logits: embedding dimension mismatch");
  const auto [alpha, sigma] = coeffs(z_gamma.gamma);
  return (r * alpha / (sigma * sigma)) * (z_gamma.values * table.rows().transpose());
}

diff::Parameter scheduler_parameter(const SchedulerParams& params) {
  Matrix row(1, 3);
  row << params.raw_h_inf, params.mu, params.raw_beta;
  return diff::Parameter("scheduler", std::move(row));
}

SchedulerParams scheduler_from_parameter(const diff::Parameter& param) {
  return {param.value(0, 0), param.value(0, 1), param.value(0, 2)};
}

diff::Var entropy_model_node(diff::Tape& tape, diff::Var scheduler_row, const Vector& gammas) {
  const Eigen::Index n = gammas.size();
  auto h_inf = tape.broadcast(tape.softplus(tape.col(scheduler_row, 0)), n, 1);
  auto mu = tape.broadcast(tape.col(scheduler_row, 1), n, 1);
  auto beta = tape.broadcast(tape.softplus(tape.col(scheduler_row, 2)), n, 1);
  auto g = tape.constant(Matrix(gammas));
  auto s = tape.div(tape.sub(g, mu), beta);
  auto cdf = tape.exp(tape.neg(tape.exp(tape.neg(s))));
  return tape.mul(h_inf, cdf);
}

diff::Var scheduler_loss_node(diff::Tape& tape, diff::Var scheduler_row, const Vector& ell_detached,
                              const Vector& gammas) {
  require(ell_detached.size() == gammas.size(), "scheduler_loss_node: size mismatch");
  auto h = entropy_model_node(tape, scheduler_row, gammas);
  auto ell = tape.constant(Matrix(ell_detached));
  return tape.mean(tape.square(tape.sub(ell, h)));
}

diff::Var bias_logits_node(diff::Tape& tape, diff::Var z_gamma, diff::Var table, const Vector& row_coef, double r) {
  require(r >= 0.0 && r <= 1.0, "bias_logits_node: r must lie in [0, 1]");
  return tape.scale_rows(tape.matmul_nt(z_gamma, table), r * row_coef);
}

}  // namespace catflow
