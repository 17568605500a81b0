#include "catflow/scheduler.hpp"

#include "catflow/rng.hpp"

#include <algorithm>
#include <cmath>

namespace catflow {

SchedulerParams SchedulerParams::from_values(double h_inf, double mu, double beta) {
  require(h_inf > 0.0 && beta > 0.0, "SchedulerParams: h_inf and beta must be positive");
  return {softplus_inverse(h_inf), mu, softplus_inverse(beta)};
}

SchedulerParams SchedulerParams::initial(int vocab_size) {
  require(vocab_size >= 1, "SchedulerParams::initial: vocab_size must be >= 1");
  // log 1 = 0 is not a valid H_inf; a single-token vocabulary gets a tiny positive one.
  const double h = vocab_size > 1 ? std::log(static_cast<double>(vocab_size)) : 1e-6;
  return from_values(h, 0.0, 2.0);
}

double SchedulerParams::clip_lo() const { return quantile(kQuantileClip, *this); }
double SchedulerParams::clip_hi() const { return quantile(1.0 - kQuantileClip, *this); }

double gumbel_cdf(double gamma, const SchedulerParams& p) {
  return std::exp(-std::exp(-(gamma - p.mu) / p.beta()));
}

double entropy_model(double gamma, const SchedulerParams& p) { return p.h_inf() * gumbel_cdf(gamma, p); }

double gumbel_density(double gamma, const SchedulerParams& p) {
  const double beta = p.beta();
  const double s = (gamma - p.mu) / beta;
  return std::exp(-(s + std::exp(-s))) / beta;
}

double quantile(double q, const SchedulerParams& p) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidInput("quantile: q must lie in (0, 1)");
  return p.mu - p.beta() * std::log(-std::log(q));
}

std::vector<double> training_quantiles(int batch, double offset) {
  require(batch >= 1, "training_quantiles: batch must be >= 1");
  std::vector<double> q(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const double raw = std::fmod((i + offset) / batch, 1.0);
    q[static_cast<std::size_t>(i)] = std::clamp(raw, kQuantileClip, 1.0 - kQuantileClip);
  }
  return q;
}

std::vector<double> sample_training_gammas(int batch, Rng& rng, const SchedulerParams& params) {
  auto q = training_quantiles(batch, rng.uniform());
  for (double& v : q) v = quantile(v, params);
  return q;
}

std::vector<double> sampling_grid(int steps, const SchedulerParams& params) {
  require(steps >= 1, "sampling_grid: need at least one step");
  std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const double q = std::clamp(1.0 - static_cast<double>(k) / steps, kQuantileClip, 1.0 - kQuantileClip);
    grid[static_cast<std::size_t>(k)] = quantile(q, params);
  }
  return grid;
}

namespace {

struct FitLoss {
  double value;
  double grad[3];  // raw_h_inf, mu, raw_beta
};

FitLoss fit_loss(std::span<const std::pair<double, double>> pairs, const SchedulerParams& p) {
  const double h = p.h_inf();
  const double beta = p.beta();
  const double dh_draw = sigmoid(p.raw_h_inf);
  const double dbeta_draw = sigmoid(p.raw_beta);
  FitLoss out{0.0, {0.0, 0.0, 0.0}};
  const double n = static_cast<double>(pairs.size());
  for (const auto& [gamma, ell] : pairs) {
    const double s = (gamma - p.mu) / beta;
    const double inner = std::exp(-s);
    const double cdf = std::exp(-inner);
    const double model = h * cdf;
    const double r = model - ell;
    out.value += r * r / n;
    // d model / d mu = -h cdf inner / beta ; d model / d beta = -h cdf inner s / beta
    const double dmu = -h * cdf * inner / beta;
    const double dbeta = -h * cdf * inner * s / beta;
    out.grad[0] += 2.0 * r * cdf * dh_draw / n;
    out.grad[1] += 2.0 * r * dmu / n;
    out.grad[2] += 2.0 * r * dbeta * dbeta_draw / n;
  }
  return out;
}

}  // namespace

FitResult fit_check(std::span<const std::pair<double, double>> pairs, const FitOptions& options) {
  require(pairs.size() >= 10, "fit_check: need at least 10 (gamma, loss) pairs");
  double gmin = pairs.front().first;
  double gmax = gmin;
  double lmax = pairs.front().second;
  for (const auto& [g, l] : pairs) {
    require(std::isfinite(g) && std::isfinite(l), "fit_check: non-finite sample");
    gmin = std::min(gmin, g);
    gmax = std::max(gmax, g);
    lmax = std::max(lmax, l);
  }
  if (!(gmax - gmin > 1e-9)) throw FitFailure("fit_check: all gamma values are equal");
  if (!(lmax > 0.0)) throw FitFailure("fit_check: losses are all non-positive");

  const double h0 = options.initial_h_inf > 0.0 ? options.initial_h_inf : lmax;
  SchedulerParams p = SchedulerParams::from_values(h0, 0.0, 2.0);

  // Adam with a cosine-decayed rate.
  double m[3] = {0, 0, 0};
  double v[3] = {0, 0, 0};
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-12;
  for (int it = 1; it <= options.iterations; ++it) {
    const FitLoss fl = fit_loss(pairs, p);
    const double lr = options.learning_rate * 0.5 *
                      (1.0 + std::cos(M_PI * static_cast<double>(it - 1) / options.iterations));
    double* raw[3] = {&p.raw_h_inf, &p.mu, &p.raw_beta};
    for (int j = 0; j < 3; ++j) {
      m[j] = b1 * m[j] + (1 - b1) * fl.grad[j];
      v[j] = b2 * v[j] + (1 - b2) * fl.grad[j] * fl.grad[j];
      const double mh = m[j] / (1 - std::pow(b1, it));
      const double vh = v[j] / (1 - std::pow(b2, it));
      *raw[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }

  FitResult result;
  result.params = p;
  result.rmse = std::sqrt(fit_loss(pairs, p).value);
  if (!std::isfinite(result.rmse)) throw FitFailure("fit_check: optimization diverged");

  // A flat plateau is the infimum along mu -> -inf, which descent only
  // approaches slowly; take it directly when it fits at least as well.
  double mean = 0.0;
  for (const auto& [g, l] : pairs) mean += l;
  mean /= static_cast<double>(pairs.size());
  const SchedulerParams plateau =
      SchedulerParams::from_values(mean, gmin - 20.0, 1.0);
  const double plateau_rmse = std::sqrt(fit_loss(pairs, plateau).value);
  if (plateau_rmse <= result.rmse) {
    result.params = plateau;
    result.rmse = plateau_rmse;
  }
  // Saturated when the modelled curve is already within 1% of H_inf at the
  // leftmost sample.
  result.saturated = gumbel_cdf(gmin, result.params) > 0.99;
  return result;
}

}  // namespace catflow
