#include "catflow/rng.hpp"

#include <sstream>

namespace catflow {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::uniform() { return uniform_(engine_); }

double Rng::normal() { return normal_(engine_); }

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

std::uint64_t Rng::next_u64() { return engine_(); }

int Rng::categorical(std::span<const double> probs) {
  require(!probs.empty(), "categorical: empty distribution");
  const double u = uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  // Rounding left u above the accumulated mass; take the last nonzero entry.
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
  return m;
}

Rng Rng::split() { return Rng(engine_()); }

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_ >> uniform_;
  if (is.fail()) throw InvalidInput("Rng::deserialize: malformed state");
}

}  // namespace catflow
