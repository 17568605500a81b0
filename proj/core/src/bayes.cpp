#include "catflow/bayes.hpp"

#include <cmath>
#include <limits>

namespace catflow {

namespace {

// Per-token log-likelihood up to a k-independent constant, L x V.
Matrix log_emissions(const Matrix& z, double gamma, const EmbeddingTable& table) {
  const auto [alpha, sigma] = coeffs(gamma);
  const double s2 = sigma * sigma;
  Matrix out = (alpha / s2) * (z * table.rows().transpose());
  const Eigen::RowVectorXd sq = table.rows().rowwise().squaredNorm().transpose();
  out.rowwise() -= (alpha * alpha / (2.0 * s2)) * sq;
  return out;
}

void softmax_row_inplace(Eigen::Ref<Eigen::RowVectorXd> row) {
  const double m = row.maxCoeff();
  row = (row.array() - m).exp().matrix();
  row /= row.sum();
}

Eigen::RowVectorXd log_of(const Eigen::RowVectorXd& p) {
  return p.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity(); });
}

struct Messages {
  Matrix fwd;   // filtered, rows normalized: P(x_j | z_1..j)
  Matrix bwd;   // rows normalized, proportional to P(z_{j+1..L} | x_j)
  Matrix emit;  // scaled emissions
  Matrix post;  // posterior marginals
};

Messages forward_backward(const Matrix& z, double gamma, const EmbeddingTable& table, const MarkovProcess& process) {
  const Eigen::Index len = z.rows();
  const int v = table.vocab_size();
  Messages m;
  m.emit = log_emissions(z, gamma, table);
  for (Eigen::Index i = 0; i < len; ++i) {
    m.emit.row(i) = (m.emit.row(i).array() - m.emit.row(i).maxCoeff()).exp().matrix();
  }
  const Matrix& t = process.transition();
  m.fwd.resize(len, v);
  m.bwd.resize(len, v);
  m.fwd.row(0) = process.initial().transpose().cwiseProduct(m.emit.row(0));
  m.fwd.row(0) /= m.fwd.row(0).sum();
  for (Eigen::Index i = 1; i < len; ++i) {
    m.fwd.row(i) = (m.fwd.row(i - 1) * t).cwiseProduct(m.emit.row(i));
    m.fwd.row(i) /= m.fwd.row(i).sum();
  }
  m.bwd.row(len - 1).setOnes();
  for (Eigen::Index i = len - 1; i-- > 0;) {
    m.bwd.row(i) = (t * m.emit.row(i + 1).cwiseProduct(m.bwd.row(i + 1)).transpose()).transpose();
    m.bwd.row(i) /= m.bwd.row(i).sum();
  }
  m.post = m.fwd.cwiseProduct(m.bwd);
  for (Eigen::Index i = 0; i < len; ++i) m.post.row(i) /= m.post.row(i).sum();
  return m;
}

}  // namespace

Vector bayes_posterior_contextfree(const Vector& z_row, double gamma, const EmbeddingTable& table,
                                   const Vector& prior) {
  require(z_row.size() == table.dim(), "bayes_posterior_contextfree: dimension mismatch");
  require(prior.size() == table.vocab_size(), "bayes_posterior_contextfree: prior length must equal V");
  Eigen::RowVectorXd logits = log_emissions(Matrix(z_row.transpose()), gamma, table).row(0);
  logits += log_of(prior.transpose());
  softmax_row_inplace(logits);
  return logits.transpose();
}

Matrix bayes_posterior_sequence(const NoisySequence& z_gamma, const EmbeddingTable& table,
                                const MarkovProcess& process) {
  const Eigen::Index len = z_gamma.values.rows();
  const int v = table.vocab_size();
  require(len >= 1 && z_gamma.values.cols() == table.dim(), "bayes_posterior_sequence: shape mismatch");
  require(process.vocab_size() == v, "bayes_posterior_sequence: process vocabulary differs from table");
  const double count = std::pow(static_cast<double>(v), static_cast<double>(len));
  if (count > kEnumerationCap) {
    throw CapacityError("bayes_posterior_sequence: V^L = " + std::to_string(count) + " exceeds enumeration cap");
  }
  const Matrix em = log_emissions(z_gamma.values, z_gamma.gamma, table);
  const auto total = static_cast<long>(count);
  std::vector<double> logw(static_cast<std::size_t>(total));
  std::vector<int> seq(static_cast<std::size_t>(len));
  double mx = -std::numeric_limits<double>::infinity();
  for (long idx = 0; idx < total; ++idx) {
    long rest = idx;
    for (Eigen::Index i = len; i-- > 0;) {
      seq[static_cast<std::size_t>(i)] = static_cast<int>(rest % v);
      rest /= v;
    }
    double w = process.log_prob(seq);
    for (Eigen::Index i = 0; i < len; ++i) w += em(i, seq[static_cast<std::size_t>(i)]);
    logw[static_cast<std::size_t>(idx)] = w;
    mx = std::max(mx, w);
  }
  Matrix post = Matrix::Zero(len, v);
  for (long idx = 0; idx < total; ++idx) {
    const double w = std::exp(logw[static_cast<std::size_t>(idx)] - mx);
    long rest = idx;
    for (Eigen::Index i = len; i-- > 0;) {
      post(i, rest % v) += w;
      rest /= v;
    }
  }
  for (Eigen::Index i = 0; i < len; ++i) post.row(i) /= post.row(i).sum();
  return post;
}

Matrix bayes_posterior_markov(const NoisySequence& z_gamma, const EmbeddingTable& table,
                              const MarkovProcess& process) {
  require(z_gamma.values.rows() >= 1 && z_gamma.values.cols() == table.dim(), "bayes_posterior_markov: shape mismatch");
  require(process.vocab_size() == table.vocab_size(), "bayes_posterior_markov: process vocabulary differs from table");
  return forward_backward(z_gamma.values, z_gamma.gamma, table, process).post;
}

// ---------------------------------------------------------------------------

ContextFreeBayesDenoiser::ContextFreeBayesDenoiser(EmbeddingTable table, Vector prior)
    : table_(std::move(table)) {
  require(prior.size() == table_.vocab_size(), "ContextFreeBayesDenoiser: prior length must equal V");
  require(prior.minCoeff() >= 0.0 && std::abs(prior.sum() - 1.0) < 1e-9, "ContextFreeBayesDenoiser: prior not a simplex");
  log_prior_ = log_of(prior.transpose()).transpose();
}

DenoiserOutput ContextFreeBayesDenoiser::forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                                 int seq_len) const {
  const int batch = check_batch(z, gammas, z_sc, seq_len, table_.dim());
  DenoiserOutput out;
  out.logits.resize(z.rows(), table_.vocab_size());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    Matrix block = log_emissions(z.middleRows(r0, seq_len), gammas[static_cast<std::size_t>(b)], table_);
    block.rowwise() += log_prior_.transpose();
    out.logits.middleRows(r0, seq_len) = block;
  }
  out.probs = out.logits;
  for (Eigen::Index i = 0; i < out.probs.rows(); ++i) {
    softmax_row_inplace(out.probs.row(i));
    out.logits.row(i) = log_of(out.probs.row(i));
  }
  out.z_hat = out.probs * table_.rows();
  return out;
}

Matrix ContextFreeBayesDenoiser::z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                           int seq_len, const Matrix& cotangent) const {
  require(cotangent.rows() == z.rows() && cotangent.cols() == z.cols(), "z_hat_vjp: cotangent shape mismatch");
  const DenoiserOutput out = forward(z, gammas, z_sc, seq_len);
  // d z_hat_i / d z_i = c Cov_p(e), symmetric, with c = alpha / sigma^2.
  Matrix g(z.rows(), z.cols());
  const Matrix& e = table_.rows();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto [alpha, sigma] = coeffs(gammas[static_cast<std::size_t>(i / seq_len)]);
    const double c = alpha / (sigma * sigma);
    const Eigen::RowVectorXd u = cotangent.row(i);
    const Eigen::RowVectorXd eu = (e * u.transpose()).transpose();  // e_k . u
    const Eigen::RowVectorXd weighted = out.probs.row(i).cwiseProduct(eu);
    g.row(i) = c * (weighted * e - u.dot(out.z_hat.row(i)) * out.z_hat.row(i));
  }
  return g;
}

MarkovBayesDenoiser::MarkovBayesDenoiser(EmbeddingTable table, MarkovProcess process)
    : table_(std::move(table)), process_(std::move(process)) {
  require(process_.vocab_size() == table_.vocab_size(), "MarkovBayesDenoiser: process vocabulary differs from table");
}

DenoiserOutput MarkovBayesDenoiser::forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                            int seq_len) const {
  const int batch = check_batch(z, gammas, z_sc, seq_len, table_.dim());
  DenoiserOutput out;
  out.probs.resize(z.rows(), table_.vocab_size());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    out.probs.middleRows(r0, seq_len) =
        forward_backward(z.middleRows(r0, seq_len), gammas[static_cast<std::size_t>(b)], table_, process_).post;
  }
  out.logits.resize(out.probs.rows(), out.probs.cols());
  for (Eigen::Index i = 0; i < out.probs.rows(); ++i) out.logits.row(i) = log_of(out.probs.row(i));
  out.z_hat = out.probs * table_.rows();
  return out;
}

Matrix MarkovBayesDenoiser::z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                      int seq_len, const Matrix& cotangent) const {
  const int batch = check_batch(z, gammas, z_sc, seq_len, table_.dim());
  require(cotangent.rows() == z.rows() && cotangent.cols() == z.cols(), "z_hat_vjp: cotangent shape mismatch");
  const Matrix& e = table_.rows();
  const Matrix& t = process_.transition();
  const int v = table_.vocab_size();
  Matrix g(z.rows(), z.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    const auto [alpha, sigma] = coeffs(gammas[static_cast<std::size_t>(b)]);
    const double c = alpha / (sigma * sigma);
    const Messages m = forward_backward(z.middleRows(r0, seq_len), gammas[static_cast<std::size_t>(b)], table_, process_);
    // s(i, k) = u_i . e_k ; S = sum_i s(i, x_i). The gradient is
    // c (E[S e_{x_j}] - E[S] z_hat_j), and E[S | x_j = l] splits into past,
    // present and future contributions by the Markov property.
    const Matrix s = cotangent.middleRows(r0, seq_len) * e.transpose();
    Matrix past = Matrix::Zero(seq_len, v);    // E[sum_{i<j} s | x_j = l, z_<j]
    Matrix future = Matrix::Zero(seq_len, v);  // E[sum_{i>j} s | x_j = l, z_>j]
    for (int j = 1; j < seq_len; ++j) {
      for (int l = 0; l < v; ++l) {
        Eigen::RowVectorXd w = m.fwd.row(j - 1).cwiseProduct(t.col(l).transpose());
        const double tot = w.sum();
        if (tot > 0.0) w /= tot;
        past(j, l) = w.dot(past.row(j - 1) + s.row(j - 1));
      }
    }
    for (int j = seq_len - 1; j-- > 0;) {
      for (int l = 0; l < v; ++l) {
        Eigen::RowVectorXd w = t.row(l).cwiseProduct(m.emit.row(j + 1)).cwiseProduct(m.bwd.row(j + 1));
        const double tot = w.sum();
        if (tot > 0.0) w /= tot;
        future(j, l) = w.dot(s.row(j + 1) + future.row(j + 1));
      }
    }
    const Matrix cond = past + s + future;  // E[S | x_j = l, z]
    const double expected_s = m.post.row(0).dot(cond.row(0));
    const Matrix z_hat = m.post * e;
    for (int j = 0; j < seq_len; ++j) {
      const Eigen::RowVectorXd w = m.post.row(j).cwiseProduct(cond.row(j));
      g.row(r0 + j) = c * (w * e - expected_s * z_hat.row(j));
    }
  }
  return g;
}

}  // namespace catflow
