#pragma once

// Deterministic ODE sampling on the gamma-path. Both solvers step in the
// chart (z / sigma, alpha / sigma), where the flow reads d(z/sigma) = z_hat
// d(alpha/sigma) and an Euler step is exact for a frozen z_hat.

#include "catflow/denoiser.hpp"
#include "catflow/gamma_path.hpp"
#include "catflow/scheduler.hpp"

#include <vector>

namespace catflow {

class Rng;

// z_next = sigma_n (z_k / sigma_k + (alpha_n / sigma_n - alpha_k / sigma_k) z_hat)
Matrix euler_step(const Matrix& z_k, const Matrix& z_hat, PathCoeffs at_k, PathCoeffs at_next);

struct HeunStep {
  Matrix z_next;
  DenoiserOutput first;   // prediction at (z_k, gamma_k)
  DenoiserOutput second;  // prediction at the Euler predictor
};

// Predictor: Euler with z_hat(z_k). Corrector: Euler with the mean of the
// two predictions. Both passes see the same self-conditioning input.
HeunStep heun_step(const Denoiser& model, const Matrix& z_k, double gamma_k, double gamma_next, const Matrix& z_sc,
                   int seq_len);

enum class Solver { Euler, Heun };

struct Trajectory {
  std::vector<double> grid;                 // N + 1, strictly decreasing
  std::vector<Matrix> states;               // N + 1 stacked batch states
  std::vector<DenoiserOutput> predictions;  // N, the output used at each step
};

struct SampleOptions {
  int steps = 128;
  int length = 1;
  int count = 1;
  Solver solver = Solver::Euler;
  bool self_condition = true;
  bool capture = false;
  int chunk = 512;   // sequences integrated together
  int workers = 1;
};

struct SampleResult {
  std::vector<TokenSeq> tokens;
  std::vector<Trajectory> trajectories;  // one per chunk when captured
};

// Lowest index among maximal entries.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// Initial states for every sequence are drawn from `rng` up front, in order,
// so results do not depend on chunk size or worker count.
SampleResult sample(const Denoiser& model, const SchedulerParams& schedule, const SampleOptions& options, Rng& rng);

// Integrates explicitly given initial states over `grid`; exposed for
// solver convergence studies.
Matrix integrate(const Denoiser& model, const Matrix& z0, std::span<const double> grid, int seq_len, Solver solver,
                 bool self_condition);

}  // namespace catflow
