#pragma once

// Run configuration. Files are flat JSON objects whose keys match the field
// names below; unknown keys and out-of-range values are rejected with the
// offending field named.

#include <cstdint>
#include <exception>
#include <string>

namespace catflow {

enum class LossKind { CrossEntropy, Mse };

struct TrainConfig {
  double p_sc = 0.25;
  double learning_rate = 1e-3;
  double scheduler_learning_rate = 1e-3;
  int warmup_steps = 2500;
  double ema_decay = 0.9999;
  int bias_ramp_steps = 5000;
  int batch = 64;
  int steps = 20000;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double max_grad_norm = 0.0;  // 0 disables clipping
  LossKind loss = LossKind::CrossEntropy;
  int hidden = 128;
  int gamma_features = 16;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

class ConfigError : public std::exception {
 public:
  ConfigError(std::string field, std::string message)
      : field_(std::move(field)), message_(field_ + ": " + std::move(message)) {}
  const char* what() const noexcept override { return message_.c_str(); }
  const std::string& field() const { return field_; }

 private:
  std::string field_;
  std::string message_;
};

struct RunConfig {
  std::string task = "iid8";  // preset name; ignored when corpus is set
  std::string corpus;         // path to a corpus file
  int dim = 0;                // 0: preset default (corpus runs require it)
  TrainConfig train;
  int sampler_steps = 128;
  int samples = 64;
  int elbo_steps = 128;
  int elbo_draws = 8;
  std::string divergence = "exact";  // exact | hutchinson
  int probes = 1;
  int eval_sequences = 64;
  int workers = 1;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::string out = "run";

  void validate() const;
};

std::string to_json(const TrainConfig& config);
std::string to_json(const RunConfig& config);
// Overlays the keys present in `json` onto `base`.
RunConfig run_config_from_json(const std::string& json, RunConfig base = {});
TrainConfig train_config_from_json(const std::string& json, TrainConfig base = {});

// FNV-1a 64 of the canonical JSON, printed as 16 hex digits.
std::string config_hash(const RunConfig& config);

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

}  // namespace catflow
