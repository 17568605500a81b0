#pragma once

// Evaluation summaries, the paired ablations, and the oracle suites behind
// `catflow oracle-check`.

#include "catflow/corpus.hpp"
#include "catflow/likelihood.hpp"
#include "catflow/trainer.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace catflow {

struct EvalOptions {
  int eval_sequences = 32;
  int elbo_steps = 64;
  int elbo_draws = 2;
  DivergenceMode divergence = DivergenceMode::Hutchinson;
  int probes = 4;
  int sampler_steps = 128;
  int samples = 256;
  int workers = 1;
};

struct EvalSummary {
  double elbo_nll = 0.0;  // per token, from the bound
  double elbo_ppl = 0.0;
  double elbo_se = 0.0;   // per token
  double gen_nll = 0.0;   // true-process NLL of model samples, per token
  double gen_ppl = 0.0;
  double sample_entropy = 0.0;
  double mean_nnd = 0.0;  // radians, EMA table
};

// Evaluates the EMA model against the task's process.
EvalSummary evaluate(const ModelState& state, const TaskPreset& task, const EvalOptions& options, Rng& rng);

struct AblationArm {
  std::string name;
  TrainConfig config;
};

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  EvalSummary summary;
};

using Progress = std::function<void(const std::string&)>;

// Trains every arm for every seed on the task and evaluates it.
std::vector<AblationRow> run_ablation(const TaskPreset& task, const std::vector<AblationArm>& arms,
                                      const std::vector<std::uint64_t>& seeds, const EvalOptions& options,
                                      const Progress& progress = {});

// Self-conditioning on (p_sc = base.p_sc, or 0.25 if zero) against off.
std::vector<AblationArm> self_conditioning_arms(const TrainConfig& base);
// Cross-entropy against MSE.
std::vector<AblationArm> loss_arms(const TrainConfig& base);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Largest per-tensor relative error between autodiff and central finite
// differences over every trainable, at fixed draws.
struct GradientAudit {
  std::string parameter;
  double rel_error = 0.0;
};
std::vector<GradientAudit> gradient_audit(ModelState& state, std::span<const TokenSeq> batch, const StepDraws& draws,
                                          double r);

// Deterministic oracle suites; fast enough for a smoke run.
std::vector<CheckResult> run_oracle_checks(std::uint64_t seed);

}  // namespace catflow
