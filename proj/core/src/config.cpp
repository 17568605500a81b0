#include "catflow/config.hpp"

#include <json.hpp>

#include <cstdio>
#include <set>

namespace catflow {

using nlohmann::json;

namespace {

void check(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

json train_json(const TrainConfig& c) {
  return json{{"p_sc", c.p_sc},
              {"learning_rate", c.learning_rate},
              {"scheduler_learning_rate", c.scheduler_learning_rate},
              {"warmup_steps", c.warmup_steps},
              {"ema_decay", c.ema_decay},
              {"bias_ramp_steps", c.bias_ramp_steps},
              {"batch", c.batch},
              {"steps", c.steps},
              {"seed", c.seed},
              {"weight_decay", c.weight_decay},
              {"max_grad_norm", c.max_grad_norm},
              {"loss", to_string(c.loss)},
              {"hidden", c.hidden},
              {"gamma_features", c.gamma_features}};
}

json run_json(const RunConfig& c) {
  json j = train_json(c.train);
  j["task"] = c.task;
  j["corpus"] = c.corpus;
  j["dim"] = c.dim;
  j["sampler_steps"] = c.sampler_steps;
  j["samples"] = c.samples;
  j["elbo_steps"] = c.elbo_steps;
  j["elbo_draws"] = c.elbo_draws;
  j["divergence"] = c.divergence;
  j["probes"] = c.probes;
  j["eval_sequences"] = c.eval_sequences;
  j["workers"] = c.workers;
  j["checkpoint_every"] = c.checkpoint_every;
  j["out"] = c.out;
  return j;
}

template <class T>
void read(const json& j, const char* key, T& dst, std::set<std::string>& seen) {
  auto it = j.find(key);
  if (it == j.end()) return;
  seen.insert(key);
  try {
    dst = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

std::set<std::string> overlay_train(const json& j, TrainConfig& c) {
  std::set<std::string> seen;
  read(j, "p_sc", c.p_sc, seen);
  read(j, "learning_rate", c.learning_rate, seen);
  read(j, "scheduler_learning_rate", c.scheduler_learning_rate, seen);
  read(j, "warmup_steps", c.warmup_steps, seen);
  read(j, "ema_decay", c.ema_decay, seen);
  read(j, "bias_ramp_steps", c.bias_ramp_steps, seen);
  read(j, "batch", c.batch, seen);
  read(j, "steps", c.steps, seen);
  read(j, "seed", c.seed, seen);
  read(j, "weight_decay", c.weight_decay, seen);
  read(j, "max_grad_norm", c.max_grad_norm, seen);
  std::string loss = to_string(c.loss);
  read(j, "loss", loss, seen);
  try {
    c.loss = loss_kind_from_string(loss);
  } catch (const std::exception& e) {
    throw ConfigError("loss", e.what());
  }
  read(j, "hidden", c.hidden, seen);
  read(j, "gamma_features", c.gamma_features, seen);
  return seen;
}

json parse_object(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  check(j.is_object(), "<file>", "top level must be an object");
  return j;
}

}  // namespace

void TrainConfig::validate() const {
  check(p_sc >= 0.0 && p_sc <= 1.0, "p_sc", "must lie in [0, 1]");
  check(learning_rate > 0.0, "learning_rate", "must be positive");
  check(scheduler_learning_rate >= 0.0, "scheduler_learning_rate", "must be >= 0");
  check(warmup_steps >= 0, "warmup_steps", "must be >= 0");
  check(ema_decay >= 0.0 && ema_decay <= 1.0, "ema_decay", "must lie in [0, 1]");
  check(bias_ramp_steps >= 0, "bias_ramp_steps", "must be >= 0");
  check(batch >= 1, "batch", "must be >= 1");
  check(steps >= 0, "steps", "must be >= 0");
  check(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(max_grad_norm >= 0.0, "max_grad_norm", "must be >= 0");
  check(hidden >= 1, "hidden", "must be >= 1");
  check(gamma_features >= 2 && gamma_features % 2 == 0, "gamma_features", "must be even and >= 2");
}

void RunConfig::validate() const {
  train.validate();
  check(!task.empty() || !corpus.empty(), "task", "either task or corpus is required");
  check(!corpus.empty() || dim >= 0, "dim", "must be >= 0");
  check(corpus.empty() || dim >= 1, "dim", "required (>= 1) when training on a corpus file");
  check(sampler_steps >= 1, "sampler_steps", "must be >= 1");
  check(samples >= 1, "samples", "must be >= 1");
  check(elbo_steps >= 8, "elbo_steps", "must be >= 8");
  check(elbo_draws >= 1, "elbo_draws", "must be >= 1");
  check(divergence == "exact" || divergence == "hutchinson", "divergence", "must be exact or hutchinson");
  check(probes >= 1, "probes", "must be >= 1");
  check(eval_sequences >= 1, "eval_sequences", "must be >= 1");
  check(workers >= 1, "workers", "must be >= 1");
  check(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  check(!out.empty(), "out", "must not be empty");
}

std::string to_json(const TrainConfig& config) { return train_json(config).dump(); }
std::string to_json(const RunConfig& config) { return run_json(config).dump(); }

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  const json j = parse_object(text);
  const auto seen = overlay_train(j, base);
  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw ConfigError(key, "unknown field");
  }
  return base;
}

RunConfig run_config_from_json(const std::string& text, RunConfig base) {
  const json j = parse_object(text);
  auto seen = overlay_train(j, base.train);
  read(j, "task", base.task, seen);
  read(j, "corpus", base.corpus, seen);
  read(j, "dim", base.dim, seen);
  read(j, "sampler_steps", base.sampler_steps, seen);
  read(j, "samples", base.samples, seen);
  read(j, "elbo_steps", base.elbo_steps, seen);
  read(j, "elbo_draws", base.elbo_draws, seen);
  read(j, "divergence", base.divergence, seen);
  read(j, "probes", base.probes, seen);
  read(j, "eval_sequences", base.eval_sequences, seen);
  read(j, "workers", base.workers, seen);
  read(j, "checkpoint_every", base.checkpoint_every, seen);
  read(j, "out", base.out, seen);
  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw ConfigError(key, "unknown field");
  }
  return base;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string to_string(LossKind kind) { return kind == LossKind::Mse ? "mse" : "ce"; }

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "mse") return LossKind::Mse;
  throw std::invalid_argument("unknown loss '" + name + "' (expected ce or mse)");
}

}  // namespace catflow
