#pragma once

// Variance-preserving path parameterized by the log noise-to-signal ratio
// gamma = log(sigma^2 / alpha^2), with sigma^2 = sigmoid(gamma).

#include "catflow/common.hpp"

namespace catflow {

// |gamma| beyond this saturates alpha or sigma; sigmoid is flat long before it.
inline constexpr double kGammaSaturation = 50.0;

struct PathCoeffs {
  double alpha;
  double sigma;
};

struct NoisySequence {
  Matrix values;  // L x D
  double gamma;
};

PathCoeffs coeffs(double gamma);

// Inverse of coeffs: log(sigma^2 / alpha^2).
double gamma_of(double alpha, double sigma);

// OT flow-matching time used only for plot axes.
double t_ot_of_gamma(double gamma);

NoisySequence noise(const Matrix& z, double gamma, const Matrix& eps);

// dz/dgamma = (alpha^2 / 2) z - (alpha / 2) z_hat on the VP gamma-path.
Matrix velocity_from_denoiser(const NoisySequence& z_gamma, const Matrix& z_hat);

}  // namespace catflow
