#include "catflow/bayes.hpp"
#include "catflow/likelihood.hpp"
#include "catflow/sampler.hpp"
#include "catflow/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace catflow;

namespace {

ModelState make_state(const TaskPreset& task, int hidden, int batch) {
  TrainConfig c;
  c.hidden = hidden;
  c.batch = batch;
  c.seed = 1;
  return ModelState::create(c, task.process.vocab_size(), task.dim);
}

}  // namespace

static void BM_DenoiserForward(benchmark::State& state) {
  const TaskPreset task = task_preset("markov16");
  const int batch = static_cast<int>(state.range(0));
  const ModelState s = make_state(task, 128, batch);
  const NetworkDenoiser model = s.raw_denoiser();
  Rng rng(2);
  const Matrix z = rng.normal_matrix(batch * task.length, task.dim);
  const Matrix sc = Matrix::Zero(z.rows(), z.cols());
  const std::vector<double> gammas(static_cast<std::size_t>(batch), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(z, gammas, sc, task.length));
  state.SetItemsProcessed(state.iterations() * batch * task.length);
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  const TaskPreset task = task_preset(state.range(0) == 0 ? "markov4" : "markov16");
  ModelState s = make_state(task, static_cast<int>(state.range(1)), 64);
  const DataSource data = DataSource::from_process(task.process, task.length);
  Rng rng(3);
  for (auto _ : state) {
    const auto batch = data.next_batch(64, rng);
    benchmark::DoNotOptimize(train_step(s, batch));
  }
}
BENCHMARK(BM_TrainStep)->Args({0, 32})->Args({1, 64})->Args({1, 128})->Unit(benchmark::kMillisecond);

static void BM_ElboSequence(benchmark::State& state) {
  const TaskPreset task = task_preset("markov4");
  const ModelState s = make_state(task, 64, 16);
  const NetworkDenoiser model = s.raw_denoiser();
  Rng rng(4);
  const TokenSeq x = generate(task.process, task.length, 1, rng).front();
  ElboOptions o;
  o.steps = 32;
  o.draws = 2;
  o.mode = state.range(0) == 0 ? DivergenceMode::Exact : DivergenceMode::Hutchinson;
  o.probes = 4;
  for (auto _ : state) benchmark::DoNotOptimize(elbo(x, model, s.scheduler_params(), o, rng));
}
BENCHMARK(BM_ElboSequence)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_MarkovOracle(benchmark::State& state) {
  const TaskPreset task = task_preset("markov16");
  Rng rng(5);
  const EmbeddingTable table = EmbeddingTable::random(task.process.vocab_size(), task.dim, rng);
  const NoisySequence z{rng.normal_matrix(task.length, task.dim), 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(bayes_posterior_markov(z, table, task.process));
}
BENCHMARK(BM_MarkovOracle);

static void BM_SampleOracle(benchmark::State& state) {
  const TaskPreset task = task_preset("markov4");
  Rng rng(6);
  const MarkovBayesDenoiser model(EmbeddingTable::random(4, task.dim, rng), task.process);
  SampleOptions o;
  o.steps = 64;
  o.length = task.length;
  o.count = 64;
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, SchedulerParams::initial(4), o, rng));
  state.SetItemsProcessed(state.iterations() * o.count);
}
BENCHMARK(BM_SampleOracle)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
