#pragma once

#include "catflow/common.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace catflow {

// Seeded random source. The full engine and distribution state round-trips
// through serialize()/deserialize() so a resumed run continues bit-identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  double uniform();  // [0, 1)
  double normal();
  bool bernoulli(double p);
  int categorical(std::span<const double> probs);
  std::uint64_t next_u64();
  double rademacher();

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  // Independent child stream; drawing seeds up front keeps results
  // independent of how the children are scheduled.
  Rng split();

  std::string serialize() const;
  void deserialize(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.serialize() == b.serialize(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace catflow
