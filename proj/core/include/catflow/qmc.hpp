#pragma once

#include "catflow/common.hpp"

#include <vector>

namespace catflow {

class Rng;

// Randomized quasi-Monte-Carlo standard-normal draws: a scrambled-by-shift
// Sobol net per replicate (Cranley-Patterson rotation), mapped through the
// inverse normal CDF. Each replicate is an unbiased estimator on its own,
// so the spread of replicate means gives an honest standard error.
struct RqmcDraws {
  Matrix points;                // count x dim
  std::vector<int> replicate;   // replicate index of each row
  int replicates = 0;
};

RqmcDraws rqmc_normal_draws(int dim, int count, int replicates, Rng& rng);

}  // namespace catflow
