#include "catflow/metrics.hpp"

#include "catflow/denoiser.hpp"
#include "catflow/embedding.hpp"
#include "catflow/gamma_path.hpp"
#include "catflow/rng.hpp"

#include <cmath>
#include <map>

namespace catflow {

double sequence_entropy(std::span<const int> tokens) {
  require(!tokens.empty(), "sequence_entropy: empty sequence");
  std::map<int, int> counts;
  for (int t : tokens) ++counts[t];
  const double n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (const auto& [tok, c] : counts) {
    const double p = c / n;
    h -= p * std::log(p);
  }
  return h;
}

MeanStat mean_and_stderr(std::span<const double> values) {
  require(!values.empty(), "mean_and_stderr: no values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<ProfilePoint> loss_profile(const Denoiser& model, std::span<const double> gammas,
                                       std::span<const TokenSeq> eval_set, Rng& rng, int draws) {
  require(!eval_set.empty(), "loss_profile: empty eval set");
  require(draws >= 1, "loss_profile: draws must be >= 1");
  const int len = static_cast<int>(eval_set.front().size());
  const auto& table = model.table();
  const int count = static_cast<int>(eval_set.size()) * draws;

  Matrix clean(static_cast<Eigen::Index>(count) * len, table.dim());
  std::vector<int> targets;
  targets.reserve(static_cast<std::size_t>(count) * len);
  for (int d = 0; d < draws; ++d) {
    for (std::size_t s = 0; s < eval_set.size(); ++s) {
      require(static_cast<int>(eval_set[s].size()) == len, "loss_profile: ragged eval set");
      const Eigen::Index r0 = (static_cast<Eigen::Index>(d) * static_cast<Eigen::Index>(eval_set.size()) +
                               static_cast<Eigen::Index>(s)) * len;
      clean.middleRows(r0, len) = embed(eval_set[s], table);
      targets.insert(targets.end(), eval_set[s].begin(), eval_set[s].end());
    }
  }
  const Matrix zero = Matrix::Zero(clean.rows(), clean.cols());

  std::vector<ProfilePoint> out;
  out.reserve(gammas.size());
  for (double g : gammas) {
    const Matrix eps = rng.normal_matrix(clean.rows(), clean.cols());
    const NoisySequence z = noise(clean, g, eps);
    const std::vector<double> gs(static_cast<std::size_t>(count), g);
    const DenoiserOutput o = model.forward(z.values, gs, zero, len);
    std::vector<double> per_seq(static_cast<std::size_t>(count), 0.0);
    for (int b = 0; b < count; ++b) {
      double acc = 0.0;
      for (int i = 0; i < len; ++i) {
        const Eigen::Index row = static_cast<Eigen::Index>(b) * len + i;
        const Eigen::RowVectorXd lg = o.logits.row(row);
        const double m = lg.maxCoeff();
        acc += m + std::log((lg.array() - m).exp().sum()) - lg(targets[static_cast<std::size_t>(row)]);
      }
      per_seq[static_cast<std::size_t>(b)] = acc / len;
    }
    const MeanStat st = mean_and_stderr(per_seq);
    out.push_back({g, st.mean, st.std_error});
  }
  return out;
}

std::vector<DerivativePoint> profile_derivative(std::span<const ProfilePoint> profile, int window) {
  require(profile.size() >= 3, "profile_derivative: need at least 3 grid points");
  require(window >= 1 && window % 2 == 1, "profile_derivative: window must be odd and >= 1");
  const auto n = static_cast<int>(profile.size());
  for (int i = 1; i < n; ++i) {
    require(profile[static_cast<std::size_t>(i)].gamma > profile[static_cast<std::size_t>(i - 1)].gamma,
            "profile_derivative: grid must be strictly increasing");
  }
  std::vector<DerivativePoint> out(static_cast<std::size_t>(n));
  const int half = window / 2;
  for (int i = 0; i < n; ++i) {
    const int h = std::min({half, i, n - 1 - i});
    double acc = 0.0;
    for (int j = i - h; j <= i + h; ++j) acc += profile[static_cast<std::size_t>(j)].loss;
    out[static_cast<std::size_t>(i)].gamma = profile[static_cast<std::size_t>(i)].gamma;
    out[static_cast<std::size_t>(i)].smoothed = acc / (2 * h + 1);
  }
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - 1);
    const int hi = std::min(n - 1, i + 1);
    const auto& a = out[static_cast<std::size_t>(lo)];
    const auto& b = out[static_cast<std::size_t>(hi)];
    out[static_cast<std::size_t>(i)].derivative = (b.smoothed - a.smoothed) / (b.gamma - a.gamma);
  }
  return out;
}

}  // namespace catflow
