#include "catflow/experiments.hpp"

#include "catflow/bayes.hpp"
#include "catflow/embedding.hpp"
#include "catflow/metrics.hpp"
#include "catflow/objective.hpp"
#include "catflow/sampler.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

namespace catflow {

EvalSummary evaluate(const ModelState& state, const TaskPreset& task, const EvalOptions& options, Rng& rng) {
  const NetworkDenoiser model = state.ema_denoiser();
  const SchedulerParams schedule = state.ema_scheduler();
  EvalSummary s;

  const auto eval_set = generate(task.process, task.length, options.eval_sequences, rng);
  ElboOptions eo;
  eo.steps = options.elbo_steps;
  eo.draws = options.elbo_draws;
  eo.mode = options.divergence;
  eo.probes = options.probes;
  std::vector<double> nll;
  for (const auto& seq : eval_set) nll.push_back(-elbo(seq, model, schedule, eo, rng).total / task.length);
  const MeanStat bound = mean_and_stderr(nll);
  s.elbo_nll = bound.mean;
  s.elbo_se = bound.std_error;
  s.elbo_ppl = std::exp(bound.mean);

  SampleOptions so;
  so.steps = options.sampler_steps;
  so.length = task.length;
  so.count = options.samples;
  so.workers = options.workers;
  const SampleResult samples = sample(model, schedule, so, rng);
  double gen = 0.0;
  double ent = 0.0;
  for (const auto& seq : samples.tokens) {
    gen += true_nll(task.process, seq);
    ent += sequence_entropy(seq);
  }
  s.gen_nll = gen / static_cast<double>(samples.tokens.size());
  s.gen_ppl = std::exp(s.gen_nll);
  s.sample_entropy = ent / static_cast<double>(samples.tokens.size());

  const auto nnd = nnd_distribution(model.table());
  double acc = 0.0;
  for (double d : nnd) acc += d;
  s.mean_nnd = acc / static_cast<double>(nnd.size());
  return s;
}

std::vector<AblationRow> run_ablation(const TaskPreset& task, const std::vector<AblationArm>& arms,
                                      const std::vector<std::uint64_t>& seeds, const EvalOptions& options,
                                      const Progress& progress) {
  std::vector<AblationRow> rows;
  const DataSource data = DataSource::from_process(task.process, task.length);
  for (std::uint64_t seed : seeds) {
    for (const auto& arm : arms) {
      TrainConfig cfg = arm.config;
      cfg.seed = seed;
      ModelState state = ModelState::create(cfg, task.process.vocab_size(), task.dim);
      train(state, data, cfg.steps);
      // Evaluation randomness depends on the seed only, so both arms of a
      // pair see the same eval sequences and initial noise.
      Rng eval_rng(seed ^ 0x9e3779b97f4a7c15ULL);
      AblationRow row{arm.name, seed, evaluate(state, task, options, eval_rng)};
      if (progress) {
        progress(arm.name + " seed=" + std::to_string(seed) + " elbo_ppl=" + std::to_string(row.summary.elbo_ppl) +
                 " gen_ppl=" + std::to_string(row.summary.gen_ppl) + " nnd=" + std::to_string(row.summary.mean_nnd));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<AblationArm> self_conditioning_arms(const TrainConfig& base) {
  TrainConfig on = base;
  if (on.p_sc == 0.0) on.p_sc = 0.25;
  TrainConfig off = base;
  off.p_sc = 0.0;
  return {{"sc_on", on}, {"sc_off", off}};
}

std::vector<AblationArm> loss_arms(const TrainConfig& base) {
  TrainConfig ce = base;
  ce.loss = LossKind::CrossEntropy;
  TrainConfig mse = base;
  mse.loss = LossKind::Mse;
  return {{"ce", ce}, {"mse", mse}};
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "arm,seed,elbo_nll,elbo_se,elbo_ppl,gen_nll,gen_ppl,sample_entropy,mean_nnd\n";
  os.precision(10);
  for (const auto& r : rows) {
    const auto& s = r.summary;
    os << r.arm << ',' << r.seed << ',' << s.elbo_nll << ',' << s.elbo_se << ',' << s.elbo_ppl << ',' << s.gen_nll
       << ',' << s.gen_ppl << ',' << s.sample_entropy << ',' << s.mean_nnd << '\n';
  }
}

std::vector<GradientAudit> gradient_audit(ModelState& state, std::span<const TokenSeq> batch, const StepDraws& draws,
                                          double r) {
  const LossParts base = compute_loss(state, batch, draws, r, true);
  // Freeze the self-conditioning input: it is stop-gradiented by design.
  StepDraws fixed = draws;
  fixed.sc_input = base.sc_input;
  std::vector<GradientAudit> out;
  for (auto* p : state.trainables()) {
    const Matrix analytic = p->grad;
    const bool is_sched = p == &state.scheduler;
    const Matrix numeric = diff::finite_difference_gradient(*p, [&] {
      const LossParts l = compute_loss(state, batch, fixed, r, false);
      return is_sched ? l.scheduler : l.main;
    });
    const double scale = std::max(analytic.norm(), numeric.norm());
    const double err = scale < 1e-12 ? 0.0 : (analytic - numeric).norm() / scale;
    out.push_back({p->name, err});
  }
  // Leave grads as the analytic pass produced them.
  compute_loss(state, batch, draws, r, true);
  return out;
}

namespace {

CheckResult make(const std::string& name, double error, double tol) { return {name, error, tol, error < tol}; }

}  // namespace

std::vector<CheckResult> run_oracle_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  {  // VP identity and gamma round trip
    double e1 = 0.0;
    double e2 = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double g = -50.0 + 100.0 * rng.uniform();
      const auto [a, s] = coeffs(g);
      e1 = std::max(e1, std::abs(a * a + s * s - 1.0));
      e2 = std::max(e2, std::abs(gamma_of(a, s) - g));
    }
    out.push_back(make("vp_identity", e1, 1e-12));
    out.push_back(make("gamma_round_trip", e2, 1e-9));
  }
  {  // Bregman tower: E_p[D(p, q)] - D(p*, q) does not depend on q
    const auto gen = negative_entropy();
    double worst = 0.0;
    for (int v : {2, 3, 8}) {
      auto simplex = [&] {
        Vector x(v);
        for (int k = 0; k < v; ++k) x(k) = -std::log(1.0 - rng.uniform());
        return Vector(x / x.sum());
      };
      const Vector pstar = simplex();
      const Vector q1 = simplex();
      const Vector q2 = simplex();
      auto gap = [&](const Vector& q) {
        double e = 0.0;
        for (int k = 0; k < v; ++k) e += pstar(k) * bregman(gen, Vector::Unit(v, k), q);
        return e - bregman(gen, pstar, q);
      };
      worst = std::max(worst, std::abs(gap(q1) - gap(q2)));
    }
    out.push_back(make("bregman_tower", worst, 1e-12));
  }
  {  // Context-free posterior vs direct Gaussian Bayes
    Rng r2 = rng.split();
    const EmbeddingTable table = EmbeddingTable::random(3, 2, r2);
    Vector prior(3);
    prior << 0.5, 0.3, 0.2;
    double worst = 0.0;
    for (double g : {-3.0, 0.0, 2.5}) {
      const Vector z = r2.normal_matrix(2, 1).col(0);
      const Vector post = bayes_posterior_contextfree(z, g, table, prior);
      const auto [a, s] = coeffs(g);
      Vector direct(3);
      for (int k = 0; k < 3; ++k) {
        const double d2 = (z - a * table.rows().row(k).transpose()).squaredNorm();
        direct(k) = prior(k) * std::exp(-d2 / (2 * s * s)) / (2 * std::numbers::pi * s * s);
      }
      direct /= direct.sum();
      worst = std::max(worst, (post - direct).cwiseAbs().maxCoeff());
    }
    out.push_back(make("bayes_contextfree", worst, 1e-10));
  }
  {  // Enumeration vs forward-backward, V=3, L=3
    Rng r2 = rng.split();
    Matrix t(3, 3);
    t << 0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5;
    const auto process = MarkovProcess::stationary_chain(t);
    const EmbeddingTable table = EmbeddingTable::random(3, 2, r2);
    const NoisySequence z{r2.normal_matrix(3, 2), 0.5};
    const double err = (bayes_posterior_sequence(z, table, process) - bayes_posterior_markov(z, table, process))
                           .cwiseAbs()
                           .maxCoeff();
    out.push_back(make("bayes_sequence", err, 1e-10));
  }
  {  // Gradient audit on a tiny model
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.gamma_features = 4;
    cfg.seed = seed;
    cfg.p_sc = 0.5;
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::Mse}) {
      cfg.loss = kind;
      ModelState state = ModelState::create(cfg, 4, 3);
      const auto process = task_preset("markov4").process;
      const auto batch = generate(process, 3, 4, state.rng);
      const StepDraws draws = draw_step(state, 4, 3, state.rng);
      double worst = 0.0;
      for (const auto& a : gradient_audit(state, batch, draws, 0.5)) worst = std::max(worst, a.rel_error);
      out.push_back(make("gradient_audit_" + to_string(kind), worst, 1e-4));
    }
  }
  {  // Euler step is exact for frozen z_hat
    Rng r2 = rng.split();
    const Matrix z = r2.normal_matrix(2, 3);
    const Matrix zh = r2.normal_matrix(2, 3);
    const double g0 = 1.5;
    const double g1 = -0.5;
    const Matrix one = euler_step(z, zh, coeffs(g0), coeffs(g1));
    // Fine RK4 on dz/dgamma = (alpha^2/2) z - (alpha/2) z_hat.
    Matrix y = z;
    const int n = 4000;
    const double h = (g1 - g0) / n;
    auto f = [&](double g, const Matrix& s) { return velocity_from_denoiser({s, g}, zh); };
    for (int i = 0; i < n; ++i) {
      const double g = g0 + i * h;
      const Matrix k1 = f(g, y);
      const Matrix k2 = f(g + h / 2, y + h / 2 * k1);
      const Matrix k3 = f(g + h / 2, y + h / 2 * k2);
      const Matrix k4 = f(g + h, y + h * k3);
      y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    out.push_back(make("euler_frozen_exact", (one - y).cwiseAbs().maxCoeff(), 1e-10));
  }
  {  // Scheduler inverse pair and Gumbel recovery
    const SchedulerParams p = SchedulerParams::from_values(2.0, 0.7, 1.6);
    double worst = 0.0;
    for (int i = 1; i < 1000; ++i) {
      const double q = i / 1000.0;
      worst = std::max(worst, std::abs(gumbel_cdf(quantile(q, p), p) - q));
    }
    out.push_back(make("quantile_cdf_pair", worst, 1e-9));
    Rng r2 = rng.split();
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 400; ++i) {
      const double g = -6.0 + 14.0 * i / 399.0;
      pairs.emplace_back(g, entropy_model(g, p) + 0.01 * r2.normal());
    }
    const FitResult fit = fit_check(pairs);
    const double rel = std::max({std::abs(fit.params.h_inf() / 2.0 - 1.0), std::abs(fit.params.mu / 0.7 - 1.0),
                                 std::abs(fit.params.beta() / 1.6 - 1.0)});
    out.push_back(make("gumbel_recovery", rel, 0.05));
  }
  {  // Divergence of z_d^2 at (1, 2, 3)
    VectorField f;
    f.rows = 1;
    f.cols = 3;
    f.value = [](const Matrix& z) { return Matrix(z.cwiseAbs2()); };
    f.vjp = [](const Matrix& z, const Matrix& u) { return Matrix(2.0 * z.cwiseProduct(u)); };
    Matrix p(1, 3);
    p << 1, 2, 3;
    out.push_back(make("divergence_hand", std::abs(divergence_exact(f, p) - 12.0), 1e-12));
  }
  {  // Markov oracle VJP against finite differences of its forward
    Rng r2 = rng.split();
    const auto preset = task_preset("markov4");
    const EmbeddingTable table = EmbeddingTable::random(4, 2, r2);
    const MarkovBayesDenoiser oracle(table, preset.process);
    const int len = 3;
    const Matrix z = r2.normal_matrix(len, 2);
    const Matrix u = r2.normal_matrix(len, 2);
    const Matrix zero = Matrix::Zero(len, 2);
    const double g[1] = {0.3};
    const Matrix vjp = oracle.z_hat_vjp(z, g, zero, len, u);
    Matrix fd(len, 2);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      Matrix zp = z;
      Matrix zm = z;
      zp.data()[i] += h;
      zm.data()[i] -= h;
      fd.data()[i] = (oracle.forward(zp, g, zero, len).z_hat.cwiseProduct(u).sum() -
                      oracle.forward(zm, g, zero, len).z_hat.cwiseProduct(u).sum()) /
                     (2 * h);
    }
    out.push_back(make("markov_oracle_vjp", (vjp - fd).norm() / std::max(1e-12, fd.norm()), 1e-6));
  }
  {  // Hand cross-entropy value
    Matrix probs(2, 3);
    probs << 0.5, 0.3, 0.2, 0.1, 0.8, 0.1;
    const std::vector<int> tokens{0, 1};
    out.push_back(make("ce_hand", std::abs(ce_loss(probs, tokens) - 0.458145365937078), 1e-12));
  }
  return out;
}

}  // namespace catflow
