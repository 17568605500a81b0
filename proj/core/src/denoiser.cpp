#include "catflow/denoiser.hpp"

#include "catflow/gamma_path.hpp"
#include "catflow/objective.hpp"
#include "catflow/rng.hpp"

#include <cmath>

namespace catflow {

int check_batch(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len, int dim) {
  require(seq_len >= 1, "denoiser: seq_len must be >= 1");
  require(z.cols() == dim, "denoiser: z has " + std::to_string(z.cols()) + " columns, expected D=" + std::to_string(dim));
  require(z.rows() % seq_len == 0, "denoiser: rows of z must be a multiple of seq_len");
  const int batch = static_cast<int>(z.rows() / seq_len);
  require(static_cast<int>(gammas.size()) == batch, "denoiser: need one gamma per sequence");
  require(z_sc.rows() == z.rows() && z_sc.cols() == z.cols(), "denoiser: self-conditioning input shape mismatch");
  return batch;
}

Vector expand_gammas(std::span<const double> gammas, int seq_len) {
  Vector out(static_cast<Eigen::Index>(gammas.size()) * seq_len);
  for (std::size_t b = 0; b < gammas.size(); ++b) {
    out.segment(static_cast<Eigen::Index>(b) * seq_len, seq_len).setConstant(gammas[b]);
  }
  return out;
}

Matrix gamma_features(const Vector& row_gammas, int features) {
  require(features >= 2 && features % 2 == 0, "gamma_features: feature count must be even and >= 2");
  const int half = features / 2;
  // Geometric frequencies spanning wavelengths from ~3 to ~125 nats of log-NSR.
  constexpr double lo = 0.05;
  constexpr double hi = 2.0;
  Matrix out(row_gammas.size(), features);
  for (int j = 0; j < half; ++j) {
    const double w = half == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(j) / (half - 1));
    for (Eigen::Index i = 0; i < row_gammas.size(); ++i) {
      out(i, 2 * j) = std::sin(w * row_gammas(i));
      out(i, 2 * j + 1) = std::cos(w * row_gammas(i));
    }
  }
  return out;
}

DenoiserParams DenoiserParams::init(const NetworkShape& s, Rng& rng) {
  require(s.vocab_size >= 1 && s.dim >= 1 && s.hidden >= 1, "DenoiserParams: invalid shape");
  auto normal = [&rng](int r, int c, double std) { return Matrix(rng.normal_matrix(r, c) * std); };
  DenoiserParams p;
  p.shape = s;
  const double inv_in = 1.0 / std::sqrt(static_cast<double>(s.dim + s.gamma_features));
  p.w_in = {"w_in", Matrix::Zero(s.dim, s.dim)};
  p.w_sc = {"w_sc", Matrix::Zero(s.dim, s.dim)};
  p.w_hidden = {"w_hidden", normal(s.dim, s.hidden, inv_in)};
  p.w_gamma = {"w_gamma", normal(s.gamma_features, s.hidden, inv_in)};
  p.b_hidden = {"b_hidden", Matrix::Zero(1, s.hidden)};
  p.w_mix = {"w_mix", normal(2 * s.hidden, s.hidden, 1.0 / std::sqrt(2.0 * s.hidden))};
  p.b_mix = {"b_mix", Matrix::Zero(1, s.hidden)};
  p.w_out = {"w_out", normal(s.hidden, s.vocab_size, 0.1 / std::sqrt(static_cast<double>(s.hidden)))};
  p.b_out = {"b_out", Matrix::Zero(1, s.vocab_size)};
  return p;
}

std::vector<diff::Parameter*> DenoiserParams::all() {
  return {&w_in, &w_sc, &w_hidden, &w_gamma, &b_hidden, &w_mix, &b_mix, &w_out, &b_out};
}

std::vector<const diff::Parameter*> DenoiserParams::all() const {
  return {&w_in, &w_sc, &w_hidden, &w_gamma, &b_hidden, &w_mix, &b_mix, &w_out, &b_out};
}

namespace {

template <class Params, class Bind>
ForwardNodes forward_impl(diff::Tape& tape, Params& p, const ForwardInputs& in, Bind bind) {
  const Eigen::Index rows = in.z_gamma.rows();
  require(in.z_sc != nullptr, "build_forward: missing self-conditioning input");
  require(in.seq_len >= 1 && rows % in.seq_len == 0, "build_forward: rows must be a multiple of seq_len");
  require(static_cast<Eigen::Index>(in.gammas.size()) * in.seq_len == rows, "build_forward: one gamma per sequence");
  require(in.z_gamma.cols() == p.shape.dim && in.table.cols() == p.shape.dim, "build_forward: embedding dim mismatch");
  require(in.table.rows() == p.shape.vocab_size, "build_forward: vocabulary mismatch");

  const Vector row_gammas = expand_gammas(in.gammas, in.seq_len);
  Vector bias_coef(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto [alpha, sigma] = coeffs(row_gammas(i));
    bias_coef(i) = alpha / (sigma * sigma);
  }

  auto z = in.z_gamma;
  auto sc = tape.constant(*in.z_sc);
  auto fused = tape.add(tape.add(z, tape.matmul(z, bind(p.w_in))), tape.matmul(sc, bind(p.w_sc)));
  auto feats = tape.constant(gamma_features(row_gammas, p.shape.gamma_features));
  auto pre1 = tape.add(tape.matmul(fused, bind(p.w_hidden)), tape.matmul(feats, bind(p.w_gamma)));
  auto h1 = tape.tanh(tape.add_row(pre1, bind(p.b_hidden)));
  auto ctx = tape.block_mean_broadcast(h1, in.seq_len);
  auto h2 = tape.tanh(tape.add_row(tape.matmul(tape.concat_cols(h1, ctx), bind(p.w_mix)), bind(p.b_mix)));
  auto logits = tape.add_row(tape.matmul(h2, bind(p.w_out)), bind(p.b_out));
  if (in.r != 0.0) logits = tape.add(logits, bias_logits_node(tape, z, in.table, bias_coef, in.r));
  auto probs = tape.softmax_rows(logits);
  auto z_hat = tape.matmul(probs, in.table);
  return {logits, probs, z_hat};
}

}  // namespace

ForwardNodes build_forward(diff::Tape& tape, const DenoiserParams& params, const ForwardInputs& in) {
  return forward_impl(tape, params, in, [&tape](const diff::Parameter& q) { return tape.frozen(q); });
}

ForwardNodes build_forward_tracked(diff::Tape& tape, DenoiserParams& params, const ForwardInputs& in) {
  return forward_impl(tape, params, in, [&tape](diff::Parameter& q) { return tape.parameter(q); });
}

NetworkDenoiser::NetworkDenoiser(DenoiserParams params, EmbeddingTable table, double r)
    : params_(std::move(params)), table_(std::move(table)), r_(r) {
  require(r_ >= 0.0 && r_ <= 1.0, "NetworkDenoiser: r must lie in [0, 1]");
  require(table_.vocab_size() == params_.shape.vocab_size && table_.dim() == params_.shape.dim,
          "NetworkDenoiser: table shape does not match network");
}

DenoiserOutput NetworkDenoiser::forward(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc,
                                        int seq_len) const {
  check_batch(z, gammas, z_sc, seq_len, table_.dim());
  diff::Tape tape;
  ForwardInputs in{tape.constant(z), tape.constant(table_.rows()), &z_sc, gammas, seq_len, r_};
  const ForwardNodes out = build_forward(tape, params_, in);
  return {out.logits.value(), out.probs.value(), out.z_hat.value()};
}

Matrix NetworkDenoiser::z_hat_vjp(const Matrix& z, std::span<const double> gammas, const Matrix& z_sc, int seq_len,
                                  const Matrix& cotangent) const {
  check_batch(z, gammas, z_sc, seq_len, table_.dim());
  diff::Tape tape;
  auto zin = tape.input(z);
  ForwardInputs in{zin, tape.constant(table_.rows()), &z_sc, gammas, seq_len, r_};
  const ForwardNodes out = build_forward(tape, params_, in);
  tape.backward(out.z_hat, cotangent);
  return tape.grad(zin);
}

}  // namespace catflow
