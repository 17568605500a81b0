#pragma once

#include "catflow/common.hpp"

#include <span>
#include <vector>

namespace catflow {

class Denoiser;
class Rng;

// Entropy of the within-sequence unigram frequencies count / L.
double sequence_entropy(std::span<const int> tokens);

struct ProfilePoint {
  double gamma = 0.0;
  double loss = 0.0;  // mean per-token CE
  double std_error = 0.0;
};

// Monte-Carlo per-token CE of the denoiser (self-conditioning zero) at each
// grid gamma. Every eval sequence gets `draws` independent noise draws.
std::vector<ProfilePoint> loss_profile(const Denoiser& model, std::span<const double> gammas,
                                       std::span<const TokenSeq> eval_set, Rng& rng, int draws = 1);

struct DerivativePoint {
  double gamma = 0.0;
  double smoothed = 0.0;
  double derivative = 0.0;
};

// Moving average of width `window` (odd, shrunk at the edges) followed by
// central differences on a possibly nonuniform grid; one-sided at the ends.
std::vector<DerivativePoint> profile_derivative(std::span<const ProfilePoint> profile, int window = 3);

// Mean of per-sequence true NLL under the process, with standard error.
struct MeanStat {
  double mean = 0.0;
  double std_error = 0.0;
};
MeanStat mean_and_stderr(std::span<const double> values);

}  // namespace catflow
