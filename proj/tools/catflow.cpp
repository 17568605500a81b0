// catflow: train, sample, evaluate, profile and ablate from one binary.

#include "catflow/checkpoint.hpp"
#include "catflow/config.hpp"
#include "catflow/corpus.hpp"
#include "catflow/experiments.hpp"
#include "catflow/likelihood.hpp"
#include "catflow/metrics.hpp"
#include "catflow/sampler.hpp"
#include "catflow/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace catflow;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitOracle = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flag values; applied over the config file only when given.
struct Flags {
  std::string config_path;
  std::string task;
  std::string corpus;
  int dim = 0;
  int steps = 0;
  int batch = 0;
  std::uint64_t seed = 0;
  double p_sc = 0.0;
  int sampler_steps = 0;
  int elbo_draws = 0;
  int elbo_steps = 0;
  std::string div;
  int probes = 0;
  int workers = 0;
  std::string out;
  int hidden = 0;
  std::string loss;
  int samples = 0;
  int eval_sequences = 0;
  int checkpoint_every = 0;
};

struct Options {
  CLI::App* app = nullptr;
  Flags flags;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "JSON run config; flags override its fields");
  sub->add_option("--task", f.task, "Task preset (iid8, markov4, markov16)");
  sub->add_option("--corpus", f.corpus, "Corpus file instead of a preset");
  sub->add_option("--dim", f.dim, "Embedding dimension (required with --corpus)");
  sub->add_option("--steps", f.steps, "Training steps");
  sub->add_option("--batch", f.batch, "Sequences per batch");
  sub->add_option("--seed", f.seed, "Seed (falls back to $CATFLOW_SEED)");
  sub->add_option("--p-sc", f.p_sc, "Self-conditioning probability");
  sub->add_option("--sampler-steps", f.sampler_steps, "ODE steps for sampling");
  sub->add_option("--elbo-steps", f.elbo_steps, "Heun steps for the likelihood bound");
  sub->add_option("--elbo-draws", f.elbo_draws, "z_a draws per sequence");
  sub->add_option("--div", f.div, "Divergence estimator")->check(CLI::IsMember({"exact", "hutchinson"}));
  sub->add_option("--probes", f.probes, "Hutchinson probes per evaluation");
  sub->add_option("--workers", f.workers, "Worker threads");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--hidden", f.hidden, "Hidden width");
  sub->add_option("--loss", f.loss, "Training loss")->check(CLI::IsMember({"ce", "mse"}));
  sub->add_option("--samples", f.samples, "Number of sequences to sample");
  sub->add_option("--eval-sequences", f.eval_sequences, "Sequences used for evaluation");
  sub->add_option("--checkpoint-every", f.checkpoint_every, "Periodic checkpoint interval (0: final only)");
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig resolve(const CLI::App& sub, const Flags& f, const std::string& checkpoint) {
  RunConfig c;
  bool seed_set = false;
  if (!f.config_path.empty()) {
    const std::string text = read_file(f.config_path);
    c = run_config_from_json(text);
    seed_set = text.find("\"seed\"") != std::string::npos;
  } else if (!checkpoint.empty()) {
    // Without a config, the task comes from the run that wrote the checkpoint.
    const auto sibling = std::filesystem::path(checkpoint).parent_path() / "config.json";
    if (std::filesystem::exists(sibling)) {
      const RunConfig trained = run_config_from_json(read_file(sibling.string()));
      c.task = trained.task;
      c.corpus = trained.corpus;
      c.dim = trained.dim;
    }
  }
  auto given = [&sub](const char* name) { return sub.count(name) > 0; };
  if (given("--task")) c.task = f.task;
  if (given("--corpus")) c.corpus = f.corpus;
  if (given("--dim")) c.dim = f.dim;
  if (given("--steps")) c.train.steps = f.steps;
  if (given("--batch")) c.train.batch = f.batch;
  if (given("--seed")) {
    c.train.seed = f.seed;
    seed_set = true;
  }
  if (!seed_set) {
    if (const char* env = std::getenv("CATFLOW_SEED")) {
      try {
        c.train.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError("seed", std::string("CATFLOW_SEED is not an integer: ") + env);
      }
    }
  }
  if (given("--p-sc")) c.train.p_sc = f.p_sc;
  if (given("--sampler-steps")) c.sampler_steps = f.sampler_steps;
  if (given("--elbo-steps")) c.elbo_steps = f.elbo_steps;
  if (given("--elbo-draws")) c.elbo_draws = f.elbo_draws;
  if (given("--div")) c.divergence = f.div;
  if (given("--probes")) c.probes = f.probes;
  if (given("--workers")) c.workers = f.workers;
  if (given("--out")) c.out = f.out;
  if (given("--hidden")) c.train.hidden = f.hidden;
  if (given("--loss")) c.train.loss = loss_kind_from_string(f.loss);
  if (given("--samples")) c.samples = f.samples;
  if (given("--eval-sequences")) c.eval_sequences = f.eval_sequences;
  if (given("--checkpoint-every")) c.checkpoint_every = f.checkpoint_every;
  c.validate();
  return c;
}

struct Task {
  std::optional<TaskPreset> preset;
  std::optional<Corpus> corpus;
  int vocab = 0;
  int dim = 0;
  int length = 0;
};

Task load_task(const RunConfig& c) {
  Task t;
  if (!c.corpus.empty()) {
    t.corpus = load_corpus(c.corpus);
    t.vocab = t.corpus->vocab_size;
    t.length = t.corpus->length();
    t.dim = c.dim;
  } else {
    try {
      t.preset = task_preset(c.task);
    } catch (const InvalidInput& e) {
      throw ConfigError("task", e.what());
    }
    t.vocab = t.preset->process.vocab_size();
    t.length = t.preset->length;
    t.dim = c.dim > 0 ? c.dim : t.preset->dim;
  }
  return t;
}

std::string header(const std::string& command, const RunConfig& c) {
  return "# catflow " + command + " config_hash=" + config_hash(c) + " config=" + to_json(c) + "\n";
}

fs::path out_dir(const RunConfig& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

std::vector<TokenSeq> eval_set(const Task& t, const RunConfig& c, Rng& rng) {
  if (t.corpus) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(c.eval_sequences), t.corpus->sequences.size());
    return {t.corpus->sequences.begin(), t.corpus->sequences.begin() + static_cast<std::ptrdiff_t>(n)};
  }
  return generate(t.preset->process, t.length, c.eval_sequences, rng);
}

ModelState load_model(const std::string& path, const Task& t) {
  ModelState s = load_checkpoint(path);
  if (s.params.shape.vocab_size != t.vocab || s.params.shape.dim != t.dim) {
    throw ConfigError("checkpoint", "model shape (V=" + std::to_string(s.params.shape.vocab_size) +
                                        ", D=" + std::to_string(s.params.shape.dim) + ") does not match the task");
  }
  return s;
}

int cmd_train(const RunConfig& c) {
  const Task t = load_task(c);
  const fs::path dir = out_dir(c);
  std::ofstream(dir / "config.json") << to_json(c) << '\n';
  ModelState state = ModelState::create(c.train, t.vocab, t.dim);
  const DataSource data = t.corpus ? DataSource::from_corpus(*t.corpus) : DataSource::from_process(t.preset->process, t.length);
  std::ofstream log(dir / "train_log.csv");
  log << header("train", c) << "step,ce,scheduler_loss,r,H_inf,mu,beta,grad_norm\n";
  log.precision(10);
  train(state, data, c.train.steps, [&](const StepReport& r, const ModelState& s) {
    log << r.step << ',' << r.ce << ',' << r.scheduler_loss << ',' << r.r << ',' << r.h_inf << ',' << r.mu << ','
        << r.beta << ',' << r.grad_norm << '\n';
    if (c.checkpoint_every > 0 && s.step % c.checkpoint_every == 0 && s.step < c.train.steps) {
      save_checkpoint((dir / ("checkpoint_" + std::to_string(s.step) + ".bin")).string(), s);
    }
  });
  save_checkpoint((dir / "checkpoint.bin").string(), state);
  std::cout << "trained " << state.step << " steps; checkpoint " << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_sample(const RunConfig& c, const std::string& ckpt, bool trajectory) {
  const Task t = load_task(c);
  const ModelState state = load_model(ckpt, t);
  const fs::path dir = out_dir(c);
  Rng rng(c.train.seed);
  SampleOptions so;
  so.steps = c.sampler_steps;
  so.length = t.length;
  so.count = c.samples;
  so.workers = c.workers;
  so.capture = trajectory;
  const SampleResult res = sample(state.ema_denoiser(), state.ema_scheduler(), so, rng);
  std::ofstream os(dir / "samples.txt");
  os << header("sample", c);
  for (const auto& seq : res.tokens) {
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
    os << '\n';
  }
  if (trajectory) {
    std::ofstream tr(dir / "trajectory.csv");
    tr << header("sample", c) << "step,gamma,mean_norm\n";
    tr.precision(10);
    const auto& grid = res.trajectories.front().grid;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double acc = 0.0;
      long n = 0;
      for (const auto& traj : res.trajectories) {
        const Matrix& z = traj.states[k];
        for (Eigen::Index b = 0; b < z.rows() / t.length; ++b, ++n) acc += z.middleRows(b * t.length, t.length).norm();
      }
      tr << k << ',' << grid[k] << ',' << acc / static_cast<double>(n) << '\n';
    }
  }
  std::cout << "wrote " << res.tokens.size() << " samples to " << (dir / "samples.txt").string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& ckpt) {
  const Task t = load_task(c);
  const ModelState state = load_model(ckpt, t);
  const fs::path dir = out_dir(c);
  Rng rng(c.train.seed);
  const auto seqs = eval_set(t, c, rng);
  ElboOptions eo;
  eo.steps = c.elbo_steps;
  eo.draws = c.elbo_draws;
  eo.probes = c.probes;
  eo.mode = c.divergence == "exact" ? DivergenceMode::Exact : DivergenceMode::Hutchinson;
  const NetworkDenoiser model = state.ema_denoiser();
  const SchedulerParams sched = state.ema_scheduler();
  std::ofstream os(dir / "eval_nll.csv");
  os << header("eval-nll", c) << "sequence,constant,prior,decoder,divergence,total,nll_per_token,ppl,std_error\n";
  os.precision(10);
  double sum = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const ElboEstimate e = elbo(seqs[i], model, sched, eo, rng);
    os << i << ',' << e.constant << ',' << e.prior << ',' << e.decoder << ',' << e.divergence << ',' << e.total << ','
       << e.nll_per_token << ',' << e.perplexity << ',' << e.std_error << '\n';
    sum += e.nll_per_token;
  }
  const double nll = sum / static_cast<double>(seqs.size());
  std::cout << "mean nll/token " << nll << " ppl " << ppl(nll) << '\n';
  return 0;
}

int cmd_profile(const RunConfig& c, const std::string& ckpt, int points, int draws) {
  const Task t = load_task(c);
  const ModelState state = load_model(ckpt, t);
  const fs::path dir = out_dir(c);
  Rng rng(c.train.seed);
  const auto seqs = eval_set(t, c, rng);
  const SchedulerParams sched = state.ema_scheduler();
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = sched.clip_lo() + (sched.clip_hi() - sched.clip_lo()) * i / (points - 1);
  }
  const auto prof = loss_profile(state.ema_denoiser(), grid, seqs, rng, draws);
  const auto deriv = profile_derivative(prof, 3);
  std::ofstream os(dir / "profile.csv");
  os << header("profile", c) << "gamma,loss,std_error,H_gamma,density,dH_dgamma\n";
  os.precision(10);
  for (std::size_t i = 0; i < prof.size(); ++i) {
    os << prof[i].gamma << ',' << prof[i].loss << ',' << prof[i].std_error << ',' << entropy_model(prof[i].gamma, sched)
       << ',' << gumbel_density(prof[i].gamma, sched) << ',' << deriv[i].derivative << '\n';
  }
  std::cout << "wrote " << (dir / "profile.csv").string() << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& c, const std::string& which, int seeds) {
  const Task t = load_task(c);
  if (!t.preset) throw ConfigError("task", "ablations need a task preset");
  const fs::path dir = out_dir(c);
  EvalOptions eo;
  eo.eval_sequences = c.eval_sequences;
  eo.elbo_steps = c.elbo_steps;
  eo.elbo_draws = c.elbo_draws;
  eo.divergence = c.divergence == "exact" ? DivergenceMode::Exact : DivergenceMode::Hutchinson;
  eo.probes = c.probes;
  eo.sampler_steps = c.sampler_steps;
  eo.samples = c.samples;
  eo.workers = c.workers;
  TaskPreset task = *t.preset;
  task.dim = t.dim;
  std::vector<std::uint64_t> seed_list;
  for (int i = 0; i < seeds; ++i) seed_list.push_back(c.train.seed + static_cast<std::uint64_t>(i));
  auto progress = [](const std::string& s) { std::cerr << s << '\n'; };
  auto run = [&](const std::string& name, const std::vector<AblationArm>& arms) {
    const auto rows = run_ablation(task, arms, seed_list, eo, progress);
    std::ofstream os(dir / ("ablation_" + name + ".csv"));
    os << header("ablate", c);
    write_ablation_csv(os, rows);
    write_ablation_csv(std::cout, rows);
  };
  if (which == "sc" || which == "both") run("sc", self_conditioning_arms(c.train));
  if (which == "loss" || which == "both") run("loss", loss_arms(c.train));
  return 0;
}

int cmd_oracle(const RunConfig& c) {
  bool ok = true;
  for (const auto& r : run_oracle_checks(c.train.seed)) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " error=" << r.error << " tol=" << r.tolerance << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : kExitOracle;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"catflow: continuous flow language modelling on toy token processes"};
  app.require_subcommand(1);
  Flags flags;
  std::string checkpoint;
  bool trajectory = false;
  int points = 41;
  int profile_draws = 4;
  std::string which = "both";
  int seeds = 3;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint + CSV log");
  auto* sample_cmd = app.add_subcommand("sample", "Sample token sequences from a checkpoint");
  auto* eval_cmd = app.add_subcommand("eval-nll", "Per-sequence likelihood bound");
  auto* profile_cmd = app.add_subcommand("profile", "Cross-entropy loss profile over gamma");
  auto* ablate_cmd = app.add_subcommand("ablate", "Paired self-conditioning and CE-vs-MSE ablations");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Run the oracle suites");
  for (auto* sub : {train_cmd, sample_cmd, eval_cmd, profile_cmd, ablate_cmd, oracle_cmd}) add_common(sub, flags);
  for (auto* sub : {sample_cmd, eval_cmd, profile_cmd}) {
    sub->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  }
  sample_cmd->add_flag("--trajectory", trajectory, "Also write trajectory.csv");
  profile_cmd->add_option("--points", points, "Grid points")->check(CLI::Range(3, 100000));
  profile_cmd->add_option("--draws", profile_draws, "Noise draws per sequence")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--which", which, "Which ablation")->check(CLI::IsMember({"sc", "loss", "both"}));
  ablate_cmd->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig c = resolve(*sub, flags, checkpoint);
    if (sub == ablate_cmd && sub->count("--task") == 0 && flags.config_path.empty()) c.task = "markov16";
    if (sub == train_cmd) return cmd_train(c);
    if (sub == sample_cmd) return cmd_sample(c, checkpoint, trajectory);
    if (sub == eval_cmd) return cmd_eval(c, checkpoint);
    if (sub == profile_cmd) return cmd_profile(c, checkpoint, points, profile_draws);
    if (sub == ablate_cmd) return cmd_ablate(c, which, seeds);
    return cmd_oracle(c);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
