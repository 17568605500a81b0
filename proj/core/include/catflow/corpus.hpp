#pragma once

// Synthetic token processes with known statistics and the plain-text corpus
// format (header "# vocab=V order=k seed=s", then one space-separated sequence
// per line).

#include "catflow/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace catflow {

class Rng;

class MarkovProcess {
 public:
  // Order 0: i.i.d. draws from `initial`.
  static MarkovProcess iid(Vector initial);
  // Order 1: x_1 ~ initial, x_{i+1} ~ transition.row(x_i). Requires an
  // irreducible chain.
  static MarkovProcess chain(Vector initial, Matrix transition);
  // Order-1 chain started from its stationary distribution.
  static MarkovProcess stationary_chain(Matrix transition);

  int order() const { return order_; }
  int vocab_size() const { return static_cast<int>(initial_.size()); }
  const Vector& initial() const { return initial_; }
  // V x V; for order 0 every row equals `initial`.
  const Matrix& transition() const { return transition_; }
  Vector stationary() const;

  double log_prob(std::span<const int> tokens) const;
  // Per-position marginals P(x_i = k), L x V.
  Matrix marginals(int length) const;
  // Exact E[-log p(x)] / L over sequences of the given length.
  double expected_nll(int length) const;

 private:
  MarkovProcess() = default;
  int order_ = 0;
  Vector initial_;
  Matrix transition_;
};

std::vector<TokenSeq> generate(const MarkovProcess& process, int length, int count, Rng& rng);

// -(1/L) log P(tokens); +inf on a zero-probability event.
double true_nll(const MarkovProcess& process, std::span<const int> tokens);

// Named toy tasks with fixed referents.
struct TaskPreset {
  std::string name;
  MarkovProcess process;
  int dim;
  int length;
};

// "iid8", "markov4", "markov16".
TaskPreset task_preset(const std::string& name);
std::vector<std::string> task_preset_names();

struct Corpus {
  int vocab_size = 0;
  int order = 0;
  std::uint64_t seed = 0;
  std::vector<TokenSeq> sequences;

  int length() const { return sequences.empty() ? 0 : static_cast<int>(sequences.front().size()); }
};

void write_corpus(std::ostream& os, const Corpus& corpus);
Corpus read_corpus(std::istream& is);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace catflow
