#include "catflow/gamma_path.hpp"

#include <algorithm>
#include <cmath>

namespace catflow {

PathCoeffs coeffs(double gamma) {
  if (!std::isfinite(gamma)) throw InvalidInput("coeffs: gamma must be finite");
  const double g = std::clamp(gamma, -kGammaSaturation, kGammaSaturation);
  return {std::sqrt(sigmoid(-g)), std::sqrt(sigmoid(g))};
}

double gamma_of(double alpha, double sigma) {
  return 2.0 * (std::log(sigma) - std::log(alpha));
}

double t_ot_of_gamma(double gamma) { return sigmoid(0.5 * gamma); }

NoisySequence noise(const Matrix& z, double gamma, const Matrix& eps) {
  require(z.rows() == eps.rows() && z.cols() == eps.cols(), "noise: shape mismatch between z and eps");
  const auto [alpha, sigma] = coeffs(gamma);
  return {alpha * z + sigma * eps, gamma};
}

Matrix velocity_from_denoiser(const NoisySequence& z_gamma, const Matrix& z_hat) {
  require(z_gamma.values.rows() == z_hat.rows() && z_gamma.values.cols() == z_hat.cols(),
          "velocity_from_denoiser: shape mismatch");
  const double alpha = coeffs(z_gamma.gamma).alpha;
  return 0.5 * alpha * alpha * z_gamma.values - 0.5 * alpha * z_hat;
}

}  // namespace catflow
