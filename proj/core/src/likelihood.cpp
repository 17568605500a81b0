#include "catflow/likelihood.hpp"

#include "catflow/embedding.hpp"
#include "catflow/gamma_path.hpp"
#include "catflow/metrics.hpp"
#include "catflow/qmc.hpp"
#include "catflow/rng.hpp"

#include <cmath>
#include <string>

namespace catflow {

double divergence_exact(const VectorField& field, const Matrix& point) {
  require(point.rows() == field.rows && point.cols() == field.cols, "divergence_exact: point shape mismatch");
  const int n = field.rows * field.cols;
  if (n > kExactDivergenceCap) {
    throw CapacityError("divergence_exact: " + std::to_string(n) + " coordinates exceed the cap of " +
                        std::to_string(kExactDivergenceCap));
  }
  double trace = 0.0;
  Matrix basis = Matrix::Zero(field.rows, field.cols);
  for (int r = 0; r < field.rows; ++r) {
    for (int c = 0; c < field.cols; ++c) {
      basis(r, c) = 1.0;
      trace += field.vjp(point, basis)(r, c);
      basis(r, c) = 0.0;
    }
  }
  return trace;
}

TraceEstimate divergence_hutchinson(const VectorField& field, const Matrix& point, int probes, Rng& rng) {
  require(point.rows() == field.rows && point.cols() == field.cols, "divergence_hutchinson: point shape mismatch");
  require(probes >= 1, "divergence_hutchinson: probes must be >= 1");
  std::vector<double> samples(static_cast<std::size_t>(probes));
  Matrix v(field.rows, field.cols);
  for (int p = 0; p < probes; ++p) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.rademacher();
    samples[static_cast<std::size_t>(p)] = field.vjp(point, v).cwiseProduct(v).sum();
  }
  const MeanStat st = mean_and_stderr(samples);
  return {st.mean, st.std_error};
}

VectorField denoiser_field(const Denoiser& model, double gamma, Matrix z_sc) {
  VectorField f;
  f.rows = static_cast<int>(z_sc.rows());
  f.cols = static_cast<int>(z_sc.cols());
  const int len = f.rows;
  f.value = [&model, gamma, z_sc, len](const Matrix& z) {
    const double g[1] = {gamma};
    return model.forward(z, g, z_sc, len).z_hat;
  };
  f.vjp = [&model, gamma, z_sc, len](const Matrix& z, const Matrix& u) {
    const double g[1] = {gamma};
    return model.z_hat_vjp(z, g, z_sc, len, u);
  };
  return f;
}

Vector divergence_exact_batch(const Denoiser& model, const Matrix& z, std::span<const double> gammas,
                              const Matrix& z_sc, int seq_len) {
  const int batch = check_batch(z, gammas, z_sc, seq_len, model.table().dim());
  const int dim = static_cast<int>(z.cols());
  if (seq_len * dim > kExactDivergenceCap) {
    throw CapacityError("divergence_exact: " + std::to_string(seq_len * dim) + " coordinates exceed the cap of " +
                        std::to_string(kExactDivergenceCap));
  }
  // Sequences do not interact, so one basis direction per within-sequence
  // coordinate serves the whole batch.
  Vector trace = Vector::Zero(batch);
  Matrix basis = Matrix::Zero(z.rows(), z.cols());
  for (int i = 0; i < seq_len; ++i) {
    for (int d = 0; d < dim; ++d) {
      for (int b = 0; b < batch; ++b) basis(static_cast<Eigen::Index>(b) * seq_len + i, d) = 1.0;
      const Matrix g = model.z_hat_vjp(z, gammas, z_sc, seq_len, basis);
      for (int b = 0; b < batch; ++b) {
        const Eigen::Index row = static_cast<Eigen::Index>(b) * seq_len + i;
        trace(b) += g(row, d);
        basis(row, d) = 0.0;
      }
    }
  }
  return trace;
}

std::pair<Vector, Vector> divergence_hutchinson_batch(const Denoiser& model, const Matrix& z,
                                                      std::span<const double> gammas, const Matrix& z_sc,
                                                      int seq_len, int probes, Rng& rng) {
  const int batch = check_batch(z, gammas, z_sc, seq_len, model.table().dim());
  require(probes >= 1, "divergence_hutchinson: probes must be >= 1");
  // Replicate every sequence `probes` times and push all probes through one
  // reverse pass.
  const Eigen::Index rows = z.rows();
  Matrix zr(rows * probes, z.cols());
  Matrix scr(rows * probes, z.cols());
  std::vector<double> gr(static_cast<std::size_t>(batch) * static_cast<std::size_t>(probes));
  for (int p = 0; p < probes; ++p) {
    zr.middleRows(p * rows, rows) = z;
    scr.middleRows(p * rows, rows) = z_sc;
    std::copy(gammas.begin(), gammas.end(), gr.begin() + static_cast<std::ptrdiff_t>(p) * batch);
  }
  Matrix v(zr.rows(), zr.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.rademacher();
  const Matrix prod = model.z_hat_vjp(zr, gr, scr, seq_len, v).cwiseProduct(v);
  Vector est(batch);
  Vector se(batch);
  std::vector<double> samples(static_cast<std::size_t>(probes));
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < probes; ++p) {
      const Eigen::Index r0 = p * rows + static_cast<Eigen::Index>(b) * seq_len;
      samples[static_cast<std::size_t>(p)] = prod.middleRows(r0, seq_len).sum();
    }
    const MeanStat st = mean_and_stderr(samples);
    est(b) = st.mean;
    se(b) = st.std_error;
  }
  return {est, se};
}

ElboEstimate elbo(std::span<const int> tokens, const Denoiser& model, const SchedulerParams& schedule,
                  const ElboOptions& options, Rng& rng) {
  require(options.steps >= 8, "elbo: steps must be >= 8");
  require(options.draws >= 1 && options.probes >= 1, "elbo: draws and probes must be >= 1");
  require(!tokens.empty(), "elbo: empty sequence");
  const auto& table = model.table();
  const int len = static_cast<int>(tokens.size());
  const int dim = table.dim();
  const int draws = options.draws;
  const auto ud = static_cast<std::size_t>(draws);

  // a -> b: the sampling grid walked backwards.
  std::vector<double> grid = sampling_grid(options.steps, schedule);
  std::reverse(grid.begin(), grid.end());
  const double a = grid.front();
  const PathCoeffs ca = coeffs(a);

  const Matrix clean = embed(tokens, table);
  Matrix z(static_cast<Eigen::Index>(draws) * len, dim);
  std::vector<int> replicate(ud);
  Vector eps_sq(draws);  // |eps_a|^2 per draw, for the control variate
  int replicates = draws;
  if (options.quasi_random) {
    replicates = std::min(8, draws);
    const RqmcDraws q = rqmc_normal_draws(len * dim, draws, replicates, rng);
    for (int b = 0; b < draws; ++b) {
      const Eigen::Map<const Matrix> eps(q.points.row(b).data(), len, dim);
      z.middleRows(static_cast<Eigen::Index>(b) * len, len) = ca.alpha * clean + ca.sigma * eps;
      eps_sq(b) = eps.squaredNorm();
      replicate[static_cast<std::size_t>(b)] = q.replicate[static_cast<std::size_t>(b)];
    }
  } else {
    const Matrix eps = rng.normal_matrix(z.rows(), z.cols());
    for (int b = 0; b < draws; ++b) {
      z.middleRows(static_cast<Eigen::Index>(b) * len, len) =
          ca.alpha * clean + ca.sigma * eps.middleRows(static_cast<Eigen::Index>(b) * len, len);
      eps_sq(b) = eps.middleRows(static_cast<Eigen::Index>(b) * len, len).squaredNorm();
      replicate[static_cast<std::size_t>(b)] = b;
    }
  }

  Matrix sc = Matrix::Zero(z.rows(), z.cols());
  Vector decoder = Vector::Zero(draws);
  Vector div_integral = Vector::Zero(draws);
  Vector div_var = Vector::Zero(draws);

  // Weighted divergence at a node, folded in with trapezoid weight w.
  auto accumulate_divergence = [&](double gamma, double w) {
    const std::vector<double> gs(ud, gamma);
    const double scale = 0.5 * coeffs(gamma).alpha * w;
    if (options.mode == DivergenceMode::Exact) {
      div_integral += scale * divergence_exact_batch(model, z, gs, sc, len);
    } else {
      const auto [est, se] = divergence_hutchinson_batch(model, z, gs, sc, len, options.probes, rng);
      div_integral += scale * est;
      div_var += (scale * scale) * se.cwiseProduct(se);
    }
    if (!div_integral.allFinite()) {
      throw NumericalFailure("elbo: non-finite divergence accumulation at gamma = " + std::to_string(gamma));
    }
  };

  const std::size_t n = grid.size() - 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double h_prev = k > 0 ? grid[k] - grid[k - 1] : 0.0;
    const double h_next = grid[k + 1] - grid[k];
    accumulate_divergence(grid[k], 0.5 * (h_prev + h_next));
    HeunStep step = heun_step(model, z, grid[k], grid[k + 1], sc, len);
    if (k == 0) {
      // Decoder term: the first node's prediction, self-conditioning zero.
      for (int b = 0; b < draws; ++b) {
        for (int i = 0; i < len; ++i) {
          const Eigen::Index row = static_cast<Eigen::Index>(b) * len + i;
          const Eigen::RowVectorXd lg = step.first.logits.row(row);
          const double m = lg.maxCoeff();
          decoder(b) += lg(tokens[static_cast<std::size_t>(i)]) - m - std::log((lg.array() - m).exp().sum());
        }
      }
    }
    z = std::move(step.z_next);
    if (!z.allFinite()) throw NumericalFailure("elbo: non-finite state at gamma = " + std::to_string(grid[k + 1]));
    if (options.self_condition) sc = step.second.z_hat;
  }
  accumulate_divergence(grid[n], 0.5 * (grid[n] - grid[n - 1]));

  const double sigma_b = coeffs(grid[n]).sigma;
  std::vector<double> totals(ud);
  ElboEstimate out;
  out.length = len;
  out.constant = 0.5 * len * dim;
  for (int b = 0; b < draws; ++b) {
    double prior = -z.middleRows(static_cast<Eigen::Index>(b) * len, len).squaredNorm() / (2.0 * sigma_b * sigma_b);
    // E|eps_a|^2 = LD exactly, so this shift leaves the expectation alone
    // while cancelling most of the chi-square spread of |z_b|^2.
    if (options.control_variate) prior += 0.5 * (eps_sq(b) - static_cast<double>(len) * dim);
    const double total = out.constant + prior + decoder(b) - div_integral(b);
    out.prior += prior / draws;
    out.decoder += decoder(b) / draws;
    out.divergence -= div_integral(b) / draws;
    totals[static_cast<std::size_t>(b)] = total;
  }
  if (!std::isfinite(out.decoder)) throw NumericalFailure("elbo: decoder term is not finite at gamma = " + std::to_string(a));
  out.total = out.constant + out.prior + out.decoder + out.divergence;

  // Standard error from replicate means (RQMC) or plain draws.
  std::vector<double> rep_sum(static_cast<std::size_t>(replicates), 0.0);
  std::vector<int> rep_n(static_cast<std::size_t>(replicates), 0);
  for (int b = 0; b < draws; ++b) {
    rep_sum[static_cast<std::size_t>(replicate[static_cast<std::size_t>(b)])] += totals[static_cast<std::size_t>(b)];
    ++rep_n[static_cast<std::size_t>(replicate[static_cast<std::size_t>(b)])];
  }
  std::vector<double> rep_mean(static_cast<std::size_t>(replicates));
  for (int r = 0; r < replicates; ++r) {
    rep_mean[static_cast<std::size_t>(r)] = rep_sum[static_cast<std::size_t>(r)] / rep_n[static_cast<std::size_t>(r)];
  }
  out.std_error = mean_and_stderr(rep_mean).std_error;
  out.divergence_std_error = std::sqrt(div_var.sum()) / draws;
  out.nll_per_token = -out.total / len;
  out.perplexity = ppl(out.nll_per_token);
  return out;
}

double ppl(double per_token_nll) {
  require(std::isfinite(per_token_nll), "ppl: nll must be finite");
  return std::exp(per_token_nll);
}

}  // namespace catflow
