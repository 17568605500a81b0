#include "catflow/embedding.hpp"

#include "catflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace catflow {

EmbeddingTable::EmbeddingTable(Matrix rows) : rows_(std::move(rows)) {
  require(rows_.rows() >= 1 && rows_.cols() >= 1, "EmbeddingTable: need V >= 1 and D >= 1");
  require(rows_.allFinite(), "EmbeddingTable: non-finite entries");
}

EmbeddingTable EmbeddingTable::random(int vocab_size, int dim, Rng& rng) {
  require(vocab_size >= 1 && dim >= 1, "EmbeddingTable::random: need V >= 1 and D >= 1");
  Matrix rows = rng.normal_matrix(vocab_size, dim);
  project_rows_inplace(rows);
  return EmbeddingTable(std::move(rows));
}

Matrix embed(std::span<const int> tokens, const EmbeddingTable& table) {
  Matrix out(static_cast<Eigen::Index>(tokens.size()), table.dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= table.vocab_size()) {
      throw InvalidInput("embed: token id " + std::to_string(t) + " outside [0, " +
                         std::to_string(table.vocab_size()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.rows().row(t);
  }
  return out;
}

Matrix synthesize_denoised(const Matrix& probs, const EmbeddingTable& table) {
  require(probs.cols() == table.vocab_size(), "synthesize_denoised: probs width must equal V");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    if (row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > 1e-6) {
      throw InvalidInput("synthesize_denoised: row " + std::to_string(i) + " is not stochastic");
    }
  }
  return probs * table.rows();
}

void project_rows_inplace(Matrix& rows) {
  const double radius = std::sqrt(static_cast<double>(rows.cols()));
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    const double n = rows.row(k).norm();
    if (!(n > 0.0)) throw DegenerateEmbedding("project_rows: row " + std::to_string(k) + " has zero norm");
    rows.row(k) *= radius / n;
  }
}

EmbeddingTable project_rows(const EmbeddingTable& table) {
  Matrix rows = table.rows();
  project_rows_inplace(rows);
  return EmbeddingTable(std::move(rows));
}

std::vector<double> nnd_distribution(const EmbeddingTable& table) {
  const int v = table.vocab_size();
  require(v >= 2, "nnd_distribution: need at least two rows");
  Matrix unit = table.rows();
  for (Eigen::Index k = 0; k < unit.rows(); ++k) {
    const double n = unit.row(k).norm();
    if (!(n > 0.0)) throw DegenerateEmbedding("nnd_distribution: zero row");
    unit.row(k) /= n;
  }
  const Matrix gram = unit * unit.transpose();
  std::vector<double> out(static_cast<std::size_t>(v), std::numeric_limits<double>::infinity());
  for (int k = 0; k < v; ++k) {
    for (int j = 0; j < v; ++j) {
      if (j == k) continue;
      const double angle = std::acos(std::clamp(gram(k, j), -1.0, 1.0));
      out[static_cast<std::size_t>(k)] = std::min(out[static_cast<std::size_t>(k)], angle);
    }
  }
  return out;
}

}  // namespace catflow
