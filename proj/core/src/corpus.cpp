#include "catflow/corpus.hpp"

#include "catflow/rng.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace catflow {

namespace {

void check_simplex(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::string& what) {
  if (row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > 1e-9) {
    throw InvalidInput(what + " is not a probability vector (within 1e-9)");
  }
}

bool irreducible(const Matrix& t) {
  const Eigen::Index v = t.rows();
  for (Eigen::Index s = 0; s < v; ++s) {
    std::vector<bool> seen(static_cast<std::size_t>(v), false);
    std::vector<Eigen::Index> stack{s};
    seen[static_cast<std::size_t>(s)] = true;
    while (!stack.empty()) {
      const Eigen::Index i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < v; ++j) {
        if (t(i, j) > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = true;
          stack.push_back(j);
        }
      }
    }
    for (bool b : seen) {
      if (!b) return false;
    }
  }
  return true;
}

double entropy_of(const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p(k) > 0.0) h -= p(k) * std::log(p(k));
  }
  return h;
}

}  // namespace

MarkovProcess MarkovProcess::iid(Vector initial) {
  require(initial.size() >= 1, "MarkovProcess: empty vocabulary");
  check_simplex(initial.transpose(), "initial distribution");
  MarkovProcess p;
  p.order_ = 0;
  p.transition_ = initial.transpose().replicate(initial.size(), 1);
  p.initial_ = std::move(initial);
  return p;
}

MarkovProcess MarkovProcess::chain(Vector initial, Matrix transition) {
  require(initial.size() >= 1, "MarkovProcess: empty vocabulary");
  require(transition.rows() == initial.size() && transition.cols() == initial.size(),
          "MarkovProcess: transition must be V x V");
  check_simplex(initial.transpose(), "initial distribution");
  for (Eigen::Index i = 0; i < transition.rows(); ++i) {
    check_simplex(transition.row(i), "transition row " + std::to_string(i));
  }
  require(irreducible(transition), "MarkovProcess: transition matrix is not irreducible");
  MarkovProcess p;
  p.order_ = 1;
  p.initial_ = std::move(initial);
  p.transition_ = std::move(transition);
  return p;
}

MarkovProcess MarkovProcess::stationary_chain(Matrix transition) {
  require(transition.rows() == transition.cols() && transition.rows() >= 1, "stationary_chain: need V x V");
  require(irreducible(transition), "MarkovProcess: transition matrix is not irreducible");
  MarkovProcess tmp;
  tmp.order_ = 1;
  tmp.transition_ = transition;
  tmp.initial_ = Vector::Constant(transition.rows(), 1.0 / static_cast<double>(transition.rows()));
  Vector pi = tmp.stationary();
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  return chain(std::move(pi), std::move(transition));
}

Vector MarkovProcess::stationary() const {
  if (order_ == 0) return initial_;
  const Eigen::Index v = transition_.rows();
  // Solve pi (T - I) = 0 with sum(pi) = 1 by replacing the last equation.
  Eigen::MatrixXd a = (transition_.transpose() - Eigen::MatrixXd::Identity(v, v));
  a.row(v - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(v);
  rhs(v - 1) = 1.0;
  return a.fullPivLu().solve(rhs);
}

double MarkovProcess::log_prob(std::span<const int> tokens) const {
  require(!tokens.empty(), "log_prob: empty sequence");
  for (int t : tokens) require(t >= 0 && t < vocab_size(), "log_prob: token id out of range");
  double lp = std::log(initial_(tokens[0]));
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    lp += order_ == 0 ? std::log(initial_(tokens[i])) : std::log(transition_(tokens[i - 1], tokens[i]));
  }
  return lp;
}

Matrix MarkovProcess::marginals(int length) const {
  require(length >= 1, "marginals: length must be >= 1");
  Matrix m(length, vocab_size());
  m.row(0) = initial_.transpose();
  for (int i = 1; i < length; ++i) {
    m.row(i) = order_ == 0 ? Eigen::RowVectorXd(initial_.transpose()) : Eigen::RowVectorXd(m.row(i - 1) * transition_);
  }
  return m;
}

double MarkovProcess::expected_nll(int length) const {
  const Matrix m = marginals(length);
  double h = entropy_of(initial_.transpose());
  for (int i = 1; i < length; ++i) {
    for (int k = 0; k < vocab_size(); ++k) h += m(i - 1, k) * entropy_of(transition_.row(k));
  }
  return h / length;
}

std::vector<TokenSeq> generate(const MarkovProcess& process, int length, int count, Rng& rng) {
  require(length >= 1 && count >= 0, "generate: need length >= 1 and count >= 0");
  std::vector<TokenSeq> out(static_cast<std::size_t>(count), TokenSeq(static_cast<std::size_t>(length)));
  const Vector& init = process.initial();
  const Matrix& t = process.transition();
  std::vector<double> row(static_cast<std::size_t>(process.vocab_size()));
  for (auto& seq : out) {
    seq[0] = rng.categorical(std::span<const double>(init.data(), static_cast<std::size_t>(init.size())));
    for (int i = 1; i < length; ++i) {
      const int prev = process.order() == 0 ? 0 : seq[static_cast<std::size_t>(i) - 1];
      for (int k = 0; k < process.vocab_size(); ++k) row[static_cast<std::size_t>(k)] = t(prev, k);
      seq[static_cast<std::size_t>(i)] = rng.categorical(row);
    }
  }
  return out;
}

double true_nll(const MarkovProcess& process, std::span<const int> tokens) {
  return -process.log_prob(tokens) / static_cast<double>(tokens.size());
}

TaskPreset task_preset(const std::string& name) {
  if (name == "iid8") {
    Vector p(8);
    for (int k = 0; k < 8; ++k) p(k) = 1.0 / (k + 1.0);
    p /= p.sum();
    return {name, MarkovProcess::iid(p), 4, 1};
  }
  if (name == "markov4") {
    Matrix t(4, 4);
    t << 0.1, 0.6, 0.2, 0.1,
         0.1, 0.1, 0.7, 0.1,
         0.2, 0.1, 0.1, 0.6,
         0.6, 0.2, 0.1, 0.1;
    return {name, MarkovProcess::stationary_chain(t), 4, 16};
  }
  if (name == "markov16") {
    constexpr int v = 16;
    Matrix t = Matrix::Constant(v, v, 0.15 / v);
    for (int i = 0; i < v; ++i) {
      t(i, (i + 1) % v) += 0.6;
      t(i, (5 * i + 3) % v) += 0.25;
    }
    return {name, MarkovProcess::stationary_chain(t), 8, 32};
  }
  throw InvalidInput("unknown task preset '" + name + "' (expected iid8, markov4 or markov16)");
}

std::vector<std::string> task_preset_names() { return {"iid8", "markov4", "markov16"}; }

void write_corpus(std::ostream& os, const Corpus& corpus) {
  os << "# vocab=" << corpus.vocab_size << " order=" << corpus.order << " seed=" << corpus.seed << '\n';
  for (const auto& seq : corpus.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
    os << '\n';
  }
}

Corpus read_corpus(std::istream& is) {
  Corpus c;
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("corpus: empty input");
  {
    std::istringstream hs(line);
    std::string hash;
    hs >> hash;
    bool got_vocab = false;
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (hash != "#" || eq == std::string::npos) throw InvalidInput("corpus: malformed header '" + line + "'");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "vocab") {
        c.vocab_size = std::stoi(val);
        got_vocab = true;
      } else if (key == "order") {
        c.order = std::stoi(val);
      } else if (key == "seed") {
        c.seed = std::stoull(val);
      }
    }
    if (hash != "#" || !got_vocab || c.vocab_size < 1) {
      throw InvalidInput("corpus: header must read '# vocab=V order=k seed=s'");
    }
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TokenSeq seq;
    int t;
    while (ls >> t) {
      if (t < 0 || t >= c.vocab_size) {
        throw InvalidInput("corpus line " + std::to_string(lineno) + ": token " + std::to_string(t) + " out of range");
      }
      seq.push_back(t);
    }
    if (!ls.eof()) throw InvalidInput("corpus line " + std::to_string(lineno) + ": non-integer token");
    if (!c.sequences.empty() && seq.size() != c.sequences.front().size()) {
      throw InvalidInput("corpus line " + std::to_string(lineno) + ": sequence length differs from the first line");
    }
    c.sequences.push_back(std::move(seq));
  }
  if (c.sequences.empty()) throw InvalidInput("corpus: no sequences");
  return c;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open corpus file for writing: " + path);
  write_corpus(os, corpus);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open corpus file: " + path);
  return read_corpus(is);
}

}  // namespace catflow
