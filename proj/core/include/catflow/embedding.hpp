#pragma once

#include "catflow/common.hpp"

#include <span>

namespace catflow {

class Rng;

// V x D token embedding matrix. Rows live on the sphere of radius sqrt(D)
// once projected; the trainer reprojects after every optimizer update.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(Matrix rows);

  // Standard-normal rows projected onto the sqrt(D) sphere.
  static EmbeddingTable random(int vocab_size, int dim, Rng& rng);

  int vocab_size() const { return static_cast<int>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }
  const Matrix& rows() const { return rows_; }
  Matrix& mutable_rows() { return rows_; }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  Matrix rows_;
};

Matrix embed(std::span<const int> tokens, const EmbeddingTable& table);

// Row i is E^T probs_i, the embedding expectation under the predicted distribution.
Matrix synthesize_denoised(const Matrix& probs, const EmbeddingTable& table);

EmbeddingTable project_rows(const EmbeddingTable& table);
void project_rows_inplace(Matrix& rows);

// Nearest-neighbour geodesic angle (radians) for every row.
std::vector<double> nnd_distribution(const EmbeddingTable& table);

}  // namespace catflow
