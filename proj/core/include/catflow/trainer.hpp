#pragma once

// Joint training of denoiser, embedding table and noise scheduler: per-sample
// gammas from stratified scheduler quantiles, stochastic self-conditioning,
// cross-entropy (or MSE) plus the scheduler's regression onto the detached
// per-sample cross-entropy, AdamW, row reprojection and EMA.

#include "catflow/config.hpp"
#include "catflow/corpus.hpp"
#include "catflow/denoiser.hpp"
#include "catflow/objective.hpp"
#include "catflow/rng.hpp"
#include "catflow/scheduler.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace catflow {

struct ModelState {
  TrainConfig config;
  DenoiserParams params;
  diff::Parameter table;      // V x D, rows on the sqrt(D) sphere
  diff::Parameter scheduler;  // 1 x 3 raw scheduler row
  std::vector<Matrix> ema;     // shadow of trainables(), same order
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  long step = 0;
  long sc_passes = 0;  // steps that ran the self-conditioning first pass
  Rng rng;

  static ModelState create(const TrainConfig& config, int vocab_size, int dim);

  // Network parameters, then table, then scheduler.
  std::vector<diff::Parameter*> trainables();
  std::vector<const diff::Parameter*> trainables() const;

  double bias_weight() const;  // r at the current step
  SchedulerParams scheduler_params() const { return scheduler_from_parameter(scheduler); }
  EmbeddingTable embedding() const { return EmbeddingTable(table.value); }

  // Evaluation model from the EMA shadow, table reprojected.
  NetworkDenoiser ema_denoiser() const;
  SchedulerParams ema_scheduler() const;
  NetworkDenoiser raw_denoiser() const;
};

// Linear ramp 0 -> 1 over `ramp_steps`, then held at 1.
double bias_ramp(long step, int ramp_steps);
// Linear warmup to the base rate, then constant.
double warmup_rate(long step, int warmup_steps, double base);
// Effective EMA decay: min(decay, (1 + step) / (10 + step)).
double ema_decay_at(long step, double decay);

// shadow <- decay * shadow + (1 - decay) * params
void update_ema(Matrix& shadow, const Matrix& params, double decay);

// Everything random in one step, drawn up front.
struct StepDraws {
  std::vector<double> gammas;     // one per sequence
  Matrix eps;                     // (B*L) x D
  std::vector<char> sc_mask;      // one per sequence
  std::optional<Matrix> sc_input; // overrides the first pass when set
};

StepDraws draw_step(const ModelState& state, int batch, int length, Rng& rng);

struct LossParts {
  double main = 0.0;       // CE or MSE, what the network optimizes
  double ce = 0.0;         // mean per-token CE
  double scheduler = 0.0;  // mean_b (ell_b - H(gamma_b))^2
  Vector ell;              // per-sequence CE, detached
  Matrix sc_input;         // self-conditioning input that was used
  bool first_pass = false;
};

// Loss at fixed draws. When `backward` is set, zeroes and fills the grads of
// every trainable (network/table from `main`, scheduler from `scheduler`).
LossParts compute_loss(ModelState& state, std::span<const TokenSeq> batch, const StepDraws& draws, double r,
                       bool backward);

struct StepReport {
  long step = 0;
  double ce = 0.0;
  double main = 0.0;
  double scheduler_loss = 0.0;
  double r = 0.0;
  double h_inf = 0.0;
  double mu = 0.0;
  double beta = 0.0;
  double grad_norm = 0.0;
  bool first_pass = false;
};

StepReport train_step(ModelState& state, std::span<const TokenSeq> batch);

// Source of training batches; draws from the state's RNG so resumed runs
// see the same data.
class DataSource {
 public:
  static DataSource from_process(MarkovProcess process, int length);
  static DataSource from_corpus(Corpus corpus);

  int vocab_size() const;
  int length() const { return length_; }
  std::vector<TokenSeq> next_batch(int batch, Rng& rng) const;

 private:
  std::optional<MarkovProcess> process_;
  std::vector<TokenSeq> sequences_;
  int vocab_ = 0;
  int length_ = 0;
};

using StepCallback = std::function<void(const StepReport&, const ModelState&)>;

// Runs until state.step == until.
void train(ModelState& state, const DataSource& data, long until, const StepCallback& callback = {});

}  // namespace catflow
