#include "catflow/sampler.hpp"

#include "catflow/rng.hpp"

#include <algorithm>
#include <future>

namespace catflow {

Matrix euler_step(const Matrix& z_k, const Matrix& z_hat, PathCoeffs at_k, PathCoeffs at_next) {
  if (!(at_k.sigma > 0.0) || !(at_next.sigma > 0.0)) throw NumericalFailure("euler_step: degenerate step, sigma = 0");
  require(z_k.rows() == z_hat.rows() && z_k.cols() == z_hat.cols(), "euler_step: shape mismatch");
  const double ds = at_next.alpha / at_next.sigma - at_k.alpha / at_k.sigma;
  return at_next.sigma * (z_k / at_k.sigma + ds * z_hat);
}

HeunStep heun_step(const Denoiser& model, const Matrix& z_k, double gamma_k, double gamma_next, const Matrix& z_sc,
                   int seq_len) {
  const auto batch = static_cast<std::size_t>(z_k.rows() / seq_len);
  const PathCoeffs ck = coeffs(gamma_k);
  const PathCoeffs cn = coeffs(gamma_next);
  HeunStep out;
  const std::vector<double> g_k(batch, gamma_k);
  const std::vector<double> g_n(batch, gamma_next);
  out.first = model.forward(z_k, g_k, z_sc, seq_len);
  const Matrix predictor = euler_step(z_k, out.first.z_hat, ck, cn);
  out.second = model.forward(predictor, g_n, z_sc, seq_len);
  out.z_next = euler_step(z_k, 0.5 * (out.first.z_hat + out.second.z_hat), ck, cn);
  return out;
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(best)) best = static_cast<int>(k);
  }
  return best;
}

namespace {

struct ChunkResult {
  Matrix z_final;
  Matrix sc_final;
  Trajectory trajectory;
};

ChunkResult run_chunk(const Denoiser& model, const Matrix& z0, std::span<const double> grid, int seq_len,
                      Solver solver, bool self_condition, bool capture) {
  ChunkResult out;
  const auto batch = static_cast<std::size_t>(z0.rows() / seq_len);
  Matrix z = z0;
  Matrix sc = Matrix::Zero(z0.rows(), z0.cols());
  if (capture) {
    out.trajectory.grid.assign(grid.begin(), grid.end());
    out.trajectory.states.push_back(z);
  }
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    DenoiserOutput used;
    if (solver == Solver::Euler) {
      used = model.forward(z, std::vector<double>(batch, grid[k]), sc, seq_len);
      z = euler_step(z, used.z_hat, coeffs(grid[k]), coeffs(grid[k + 1]));
    } else {
      HeunStep step = heun_step(model, z, grid[k], grid[k + 1], sc, seq_len);
      z = std::move(step.z_next);
      // The corrector's end-point prediction is the freshest estimate.
      used = std::move(step.second);
    }
    if (self_condition) sc = used.z_hat;
    if (capture) {
      out.trajectory.states.push_back(z);
      out.trajectory.predictions.push_back(std::move(used));
    }
  }
  out.z_final = std::move(z);
  out.sc_final = std::move(sc);
  return out;
}

}  // namespace

Matrix integrate(const Denoiser& model, const Matrix& z0, std::span<const double> grid, int seq_len, Solver solver,
                 bool self_condition) {
  require(grid.size() >= 2, "integrate: grid needs at least two nodes");
  require(z0.rows() % seq_len == 0, "integrate: rows must be a multiple of seq_len");
  return run_chunk(model, z0, grid, seq_len, solver, self_condition, false).z_final;
}

SampleResult sample(const Denoiser& model, const SchedulerParams& schedule, const SampleOptions& options, Rng& rng) {
  require(options.steps >= 1, "sample: steps must be >= 1");
  require(options.length >= 1 && options.count >= 1, "sample: length and count must be >= 1");
  require(options.chunk >= 1 && options.workers >= 1, "sample: chunk and workers must be >= 1");
  const int len = options.length;
  const int dim = model.table().dim();
  const std::vector<double> grid = sampling_grid(options.steps, schedule);
  const double sigma0 = coeffs(grid.front()).sigma;
  const Matrix z0_all = sigma0 * rng.normal_matrix(static_cast<Eigen::Index>(options.count) * len, dim);

  const int n_chunks = (options.count + options.chunk - 1) / options.chunk;
  std::vector<ChunkResult> results(static_cast<std::size_t>(n_chunks));
  auto work = [&](int c) {
    const int first = c * options.chunk;
    const int n = std::min(options.chunk, options.count - first);
    const Matrix z0 = z0_all.middleRows(static_cast<Eigen::Index>(first) * len, static_cast<Eigen::Index>(n) * len);
    results[static_cast<std::size_t>(c)] =
        run_chunk(model, z0, grid, len, options.solver, options.self_condition, options.capture);
  };
  if (options.workers == 1 || n_chunks == 1) {
    for (int c = 0; c < n_chunks; ++c) work(c);
  } else {
    for (int base = 0; base < n_chunks; base += options.workers) {
      std::vector<std::future<void>> jobs;
      for (int c = base; c < std::min(n_chunks, base + options.workers); ++c) {
        jobs.push_back(std::async(std::launch::async, work, c));
      }
      for (auto& j : jobs) j.get();
    }
  }

  SampleResult out;
  out.tokens.reserve(static_cast<std::size_t>(options.count));
  for (auto& r : results) {
    const auto batch = static_cast<std::size_t>(r.z_final.rows() / len);
    const DenoiserOutput last = model.forward(r.z_final, std::vector<double>(batch, grid.back()), r.sc_final, len);
    for (std::size_t b = 0; b < batch; ++b) {
      TokenSeq seq(static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) {
        seq[static_cast<std::size_t>(i)] = argmax_lowest(last.logits.row(static_cast<Eigen::Index>(b) * len + i));
      }
      out.tokens.push_back(std::move(seq));
    }
    if (options.capture) out.trajectories.push_back(std::move(r.trajectory));
  }
  return out;
}

}  // namespace catflow
