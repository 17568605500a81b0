#include "catflow/trainer.hpp"

#include "catflow/embedding.hpp"
#include "catflow/gamma_path.hpp"
#include "catflow/objective.hpp"

#include <cmath>
#include <sstream>

namespace catflow {

namespace {

bool decays(const diff::Parameter& p) { return p.name.rfind("w_", 0) == 0; }

ForwardInputs inputs_for(diff::Var z, diff::Var table, const Matrix& sc, const std::vector<double>& gammas, int len,
                         double r) {
  ForwardInputs in;
  in.z_gamma = z;
  in.table = table;
  in.z_sc = &sc;
  in.gammas = gammas;
  in.seq_len = len;
  in.r = r;
  return in;
}

}  // namespace

ModelState ModelState::create(const TrainConfig& config, int vocab_size, int dim) {
  config.validate();
  require(vocab_size >= 1 && dim >= 1, "ModelState: vocab_size and dim must be >= 1");
  ModelState s;
  s.config = config;
  s.rng = Rng(config.seed);
  Rng init = s.rng.split();
  s.params = DenoiserParams::init({vocab_size, dim, config.hidden, config.gamma_features}, init);
  s.table = diff::Parameter("table", EmbeddingTable::random(vocab_size, dim, init).rows());
  s.scheduler = scheduler_parameter(SchedulerParams::initial(vocab_size));
  for (const auto* p : std::as_const(s).trainables()) {
    s.ema.push_back(p->value);
    s.adam_m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.adam_v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

std::vector<diff::Parameter*> ModelState::trainables() {
  auto out = params.all();
  out.push_back(&table);
  out.push_back(&scheduler);
  return out;
}

std::vector<const diff::Parameter*> ModelState::trainables() const {
  auto out = params.all();
  out.push_back(&table);
  out.push_back(&scheduler);
  return out;
}

double ModelState::bias_weight() const { return bias_ramp(step, config.bias_ramp_steps); }

NetworkDenoiser ModelState::ema_denoiser() const {
  DenoiserParams p = params;
  auto dst = p.all();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = ema[i];
  Matrix rows = ema[dst.size()];
  project_rows_inplace(rows);
  return NetworkDenoiser(std::move(p), EmbeddingTable(std::move(rows)), bias_weight());
}

SchedulerParams ModelState::ema_scheduler() const {
  const Matrix& row = ema.back();
  return {row(0, 0), row(0, 1), row(0, 2)};
}

NetworkDenoiser ModelState::raw_denoiser() const { return NetworkDenoiser(params, embedding(), bias_weight()); }

double bias_ramp(long step, int ramp_steps) {
  if (ramp_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / ramp_steps);
}

double warmup_rate(long step, int warmup_steps, double base) {
  if (warmup_steps <= 0) return base;
  return base * std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
}

double ema_decay_at(long step, double decay) {
  return std::min(decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
}

void update_ema(Matrix& shadow, const Matrix& params, double decay) {
  require(decay >= 0.0 && decay <= 1.0, "update_ema: decay must lie in [0, 1]");
  require(shadow.rows() == params.rows() && shadow.cols() == params.cols(), "update_ema: shape mismatch");
  if (decay == 1.0) return;
  shadow = decay * shadow + (1.0 - decay) * params;
}

StepDraws draw_step(const ModelState& state, int batch, int length, Rng& rng) {
  StepDraws d;
  d.gammas = sample_training_gammas(batch, rng, state.scheduler_params());
  d.eps = rng.normal_matrix(static_cast<Eigen::Index>(batch) * length, state.table.value.cols());
  d.sc_mask.resize(static_cast<std::size_t>(batch));
  for (auto& m : d.sc_mask) m = rng.bernoulli(state.config.p_sc) ? 1 : 0;
  return d;
}

LossParts compute_loss(ModelState& state, std::span<const TokenSeq> batch, const StepDraws& draws, double r,
                       bool backward) {
  require(!batch.empty(), "compute_loss: empty batch");
  const int len = static_cast<int>(batch.front().size());
  const int b_count = static_cast<int>(batch.size());
  const int vocab = state.params.shape.vocab_size;
  require(static_cast<int>(draws.gammas.size()) == b_count, "compute_loss: draws do not match batch");
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(b_count) * len);
  for (const auto& seq : batch) {
    require(static_cast<int>(seq.size()) == len, "compute_loss: ragged batch");
    for (int t : seq) {
      require(t >= 0 && t < vocab, "compute_loss: token id out of range");
      ids.push_back(t);
    }
  }

  Vector alpha_rows(static_cast<Eigen::Index>(ids.size()));
  Vector sigma_rows(alpha_rows.size());
  for (int b = 0; b < b_count; ++b) {
    const auto [alpha, sigma] = coeffs(draws.gammas[static_cast<std::size_t>(b)]);
    alpha_rows.segment(static_cast<Eigen::Index>(b) * len, len).setConstant(alpha);
    sigma_rows.segment(static_cast<Eigen::Index>(b) * len, len).setConstant(sigma);
  }
  const Matrix noise_part = draws.eps.array().colwise() * sigma_rows.array();

  LossParts out;
  // Self-conditioning first pass, outside the graph.
  if (draws.sc_input) {
    out.sc_input = *draws.sc_input;
  } else {
    out.sc_input = Matrix::Zero(draws.eps.rows(), draws.eps.cols());
    bool any = false;
    for (char m : draws.sc_mask) any = any || m;
    if (any) {
      out.first_pass = true;
      diff::Tape pre;
      const Matrix& e = state.table.value;
      Matrix clean(static_cast<Eigen::Index>(ids.size()), e.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) clean.row(static_cast<Eigen::Index>(i)) = e.row(ids[i]);
      const Matrix z = (clean.array().colwise() * alpha_rows.array()).matrix() + noise_part;
      const Matrix zero = Matrix::Zero(z.rows(), z.cols());
      const ForwardNodes first =
          build_forward(pre, state.params, inputs_for(pre.constant(z), pre.constant(e), zero, draws.gammas, len, r));
      for (int b = 0; b < b_count; ++b) {
        if (!draws.sc_mask[static_cast<std::size_t>(b)]) continue;
        out.sc_input.middleRows(static_cast<Eigen::Index>(b) * len, len) =
            first.z_hat.value().middleRows(static_cast<Eigen::Index>(b) * len, len);
      }
    }
  }

  auto trainables = state.trainables();
  if (backward) {
    for (auto* p : trainables) p->zero_grad();
  }

  diff::Tape tape;
  auto table = tape.parameter(state.table);
  auto clean = tape.gather_rows(table, ids);
  auto z = tape.add(tape.scale_rows(clean, alpha_rows), tape.constant(noise_part));
  const ForwardNodes fwd =
      build_forward_tracked(tape, state.params, inputs_for(z, table, out.sc_input, draws.gammas, len, r));
  auto per_token = tape.softmax_cross_entropy(fwd.logits, ids);
  auto per_seq = tape.block_mean(per_token, len);
  auto ce = tape.mean(per_seq);
  out.ce = ce.value()(0, 0);
  out.ell = per_seq.value().col(0);

  diff::Var main = ce;
  if (state.config.loss == LossKind::Mse) {
    // |z - z_hat|^2 per token, averaged over tokens and batch.
    main = tape.scale(tape.sum(tape.square(tape.sub(clean, fwd.z_hat))), 1.0 / static_cast<double>(ids.size()));
  }
  out.main = main.value()(0, 0);

  diff::Tape sched_tape;
  auto sched = sched_tape.parameter(state.scheduler);
  const Vector gvec = Eigen::Map<const Vector>(draws.gammas.data(), b_count);
  auto sched_loss = scheduler_loss_node(sched_tape, sched, out.ell, gvec);
  out.scheduler = sched_loss.value()(0, 0);

  if (backward) {
    tape.backward(main);
    if (!state.scheduler.grad.isZero(0.0)) {
      throw NumericalFailure("compute_loss: network loss reached the scheduler parameters");
    }
    sched_tape.backward(sched_loss);
  }
  return out;
}

StepReport train_step(ModelState& state, std::span<const TokenSeq> batch) {
  const int len = static_cast<int>(batch.front().size());
  const double r = state.bias_weight();
  const StepDraws draws = draw_step(state, static_cast<int>(batch.size()), len, state.rng);
  const LossParts loss = compute_loss(state, batch, draws, r, true);

  auto trainables = state.trainables();
  double sq = 0.0;
  for (const auto* p : trainables) sq += p->grad.squaredNorm();
  const double grad_norm = std::sqrt(sq);

  if (!std::isfinite(loss.main) || !std::isfinite(loss.scheduler) || !std::isfinite(grad_norm)) {
    std::ostringstream msg;
    msg << "non-finite training step " << state.step << ": loss=" << loss.main << " ce=" << loss.ce
        << " scheduler_loss=" << loss.scheduler << " grad_norm=" << grad_norm << "; grad norms:";
    for (const auto* p : trainables) msg << ' ' << p->name << '=' << p->grad.norm();
    msg << "; gammas:";
    for (double g : draws.gammas) msg << ' ' << g;
    throw NumericalFailure(msg.str());
  }

  double clip = 1.0;
  if (state.config.max_grad_norm > 0.0 && grad_norm > state.config.max_grad_norm) {
    clip = state.config.max_grad_norm / grad_norm;
  }

  const TrainConfig& c = state.config;
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double adam_eps = 1e-8;
  const double t = static_cast<double>(state.step + 1);
  const double corr1 = 1.0 - std::pow(b1, t);
  const double corr2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < trainables.size(); ++i) {
    diff::Parameter& p = *trainables[i];
    const bool is_sched = &p == &state.scheduler;
    const double lr = warmup_rate(state.step, c.warmup_steps, is_sched ? c.scheduler_learning_rate : c.learning_rate);
    const Matrix g = clip * p.grad;
    state.adam_m[i] = b1 * state.adam_m[i] + (1.0 - b1) * g;
    state.adam_v[i] = b2 * state.adam_v[i] + (1.0 - b2) * g.cwiseAbs2();
    const Matrix step_dir =
        (state.adam_m[i] / corr1).array() / ((state.adam_v[i] / corr2).array().sqrt() + adam_eps);
    if (decays(p)) p.value *= (1.0 - lr * c.weight_decay);
    p.value -= lr * step_dir;
  }
  project_rows_inplace(state.table.value);

  const double decay = ema_decay_at(state.step, c.ema_decay);
  for (std::size_t i = 0; i < trainables.size(); ++i) update_ema(state.ema[i], trainables[i]->value, decay);

  StepReport rep;
  rep.step = state.step;
  rep.ce = loss.ce;
  rep.main = loss.main;
  rep.scheduler_loss = loss.scheduler;
  rep.r = r;
  const SchedulerParams sp = state.scheduler_params();
  rep.h_inf = sp.h_inf();
  rep.mu = sp.mu;
  rep.beta = sp.beta();
  rep.grad_norm = grad_norm;
  rep.first_pass = loss.first_pass;
  if (loss.first_pass) ++state.sc_passes;
  ++state.step;
  return rep;
}

DataSource DataSource::from_process(MarkovProcess process, int length) {
  require(length >= 1, "DataSource: length must be >= 1");
  DataSource d;
  d.vocab_ = process.vocab_size();
  d.length_ = length;
  d.process_ = std::move(process);
  return d;
}

DataSource DataSource::from_corpus(Corpus corpus) {
  require(!corpus.sequences.empty(), "DataSource: empty corpus");
  DataSource d;
  d.vocab_ = corpus.vocab_size;
  d.length_ = corpus.length();
  d.sequences_ = std::move(corpus.sequences);
  return d;
}

int DataSource::vocab_size() const { return vocab_; }

std::vector<TokenSeq> DataSource::next_batch(int batch, Rng& rng) const {
  if (process_) return generate(*process_, length_, batch, rng);
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const auto idx = static_cast<std::size_t>(rng.next_u64() % sequences_.size());
    out.push_back(sequences_[idx]);
  }
  return out;
}

void train(ModelState& state, const DataSource& data, long until, const StepCallback& callback) {
  require(data.vocab_size() == state.params.shape.vocab_size, "train: data vocabulary does not match the model");
  while (state.step < until) {
    const std::vector<TokenSeq> batch = data.next_batch(state.config.batch, state.rng);
    const StepReport rep = train_step(state, batch);
    if (callback) callback(rep, state);
  }
}

}  // namespace catflow
