#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <type_traits>
#include <vector>

#include "replik/evalx.hpp"
#include "replik/profiles.hpp"
#include "replik/robust.hpp"
#include "replik/synth.hpp"
#include "replik/util.hpp"

using namespace replik;

// Training never sees the evaluation-only known-association set: the fit
// entry point's signature mentions neither the type nor anything derived
// from it.
static_assert(std::is_same_v<decltype(&fit),
                             FitResult (*)(const InstanceDataset&, std::span<const Repertoire>,
                                           const ModelConfig&, const TrainConfig&,
                                           const FitObserver&)>);

namespace {

SynthConfig tiny_bench(uint64_t seed = 11) {
  SynthConfig cfg;
  cfg.n_pos_bags = 8;
  cfg.n_neg_bags = 8;
  cfg.seqs_per_bag = 25;
  cfg.len_min = 7;
  cfg.len_max = 11;
  cfg.motifs = {"WQKF"};
  cfg.witness_rate_pos = 0.25;
  cfg.contamination_rate_neg = 0.02;
  cfg.n_v_genes = 5;
  cfg.n_j_genes = 4;
  cfg.seed = seed;
  return cfg;
}

struct TinyRun {
  SynthDataset ds;
  InstanceDataset train;
  std::vector<Repertoire> val;
  ModelConfig model;
};

TinyRun make_run(uint64_t seed = 11) {
  TinyRun run;
  run.ds = generate(tiny_bench(seed));
  std::vector<Repertoire> train_reps;
  for (size_t i = 0; i < run.ds.repertoires.size(); ++i)
    (i % 4 == 3 ? run.val : train_reps).push_back(run.ds.repertoires[i]);
  run.train = flatten_to_instances(train_reps);
  ModelConfig cfg;
  cfg.token_dim = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  run.model = resolve_model_config(cfg, run.ds.repertoires, run.ds.vocab);
  return run;
}

TrainConfig quick_train() {
  TrainConfig cfg;
  cfg.alpha = 0.8;
  cfg.beta = 0.7;
  cfg.warmup_epochs = 2;
  cfg.max_epochs = 6;
  cfg.patience = 6;
  cfg.batch_size = 64;
  cfg.lr = 0.01;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("init_targets follows the asymmetric smoothing rule exactly") {
  std::vector<int> noisy = {1, 0, 1, 0, 0};
  TargetTable table = init_targets(noisy, 0.7);
  CHECK(table.t[0] == 1.0 - 0.7);
  CHECK(table.t[1] == 0.0);
  CHECK(table.t[2] == 1.0 - 0.7);
  CHECK(table.t[3] == 0.0);
  CHECK(table.epoch == 0);

  TargetTable plain = init_targets(noisy, 0.0);
  CHECK(plain.t[0] == 1.0);
  CHECK(plain.t[1] == 0.0);

  CHECK_THROWS_AS(init_targets(noisy, 1.0), std::invalid_argument);
}

TEST_CASE("ema_update blends predictions into the table") {
  TargetTable table;
  table.t = {0.3};
  ema_update(table, std::vector<double>{0.9}, 0.99);
  CHECK(table.t[0] == doctest::Approx(0.306).epsilon(1e-12));
  CHECK(table.epoch == 1);

  TargetTable fp;
  fp.t = {0.42};
  ema_update(fp, std::vector<double>{0.42}, 0.77);
  CHECK(fp.t[0] == doctest::Approx(0.42).epsilon(1e-15));

  TargetTable zero;
  zero.t = {0.9, 0.1};
  ema_update(zero, std::vector<double>{0.25, 0.75}, 0.0);
  CHECK(zero.t == std::vector<double>{0.25, 0.75});

  TargetTable bad;
  bad.t = {0.5};
  CHECK_THROWS_AS(ema_update(bad, std::vector<double>{0.1, 0.2}, 0.5), std::invalid_argument);
}

TEST_CASE("ema keeps targets inside [0, 1] for any update sequence") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    TargetTable table;
    table.t = {rng.next_double()};
    double alpha = rng.next_double();
    for (int step = 0; step < 200; ++step) {
      ema_update(table, std::vector<double>{rng.next_double()}, alpha);
      CHECK(table.t[0] >= 0.0);
      CHECK(table.t[0] <= 1.0);
    }
  }
}

TEST_CASE("constant predictions contract geometrically") {
  double alpha = 0.9, p_star = 0.2, t0 = 0.95;
  TargetTable table;
  table.t = {t0};
  for (int j = 1; j <= 60; ++j) {
    ema_update(table, std::vector<double>{p_star}, alpha);
    double expected = std::pow(alpha, j) * std::abs(t0 - p_star);
    CHECK(std::abs(table.t[0] - p_star) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("positives-only mode freezes negative targets") {
  std::vector<int> noisy = {1, 0};
  TargetTable table = init_targets(noisy, 0.7);
  ema_update(table, std::vector<double>{0.5, 0.5}, 0.5, true, noisy);
  CHECK(table.t[0] == doctest::Approx(0.4));
  CHECK(table.t[1] == 0.0);
}

TEST_CASE("soft cross-entropy values") {
  // t = 0.5, p = 0.5 -> ln 2.
  SoftCeResult r1 = soft_ce_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5});
  CHECK(r1.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // t = 0.3, p1 = 0.3: -(0.3 ln 0.3 + 0.7 ln 0.7) = 0.6108643020548935,
  // evaluated by hand from the definition.
  SoftCeResult r2 = soft_ce_loss(std::vector<double>{0.7, 0.3}, std::vector<double>{0.3});
  CHECK(r2.loss == doctest::Approx(0.6108643020548935).epsilon(1e-12));

  // Confident and correct: loss collapses to ~0.
  SoftCeResult r3 =
      soft_ce_loss(std::vector<double>{1e-12, 1.0 - 1e-12}, std::vector<double>{1.0});
  CHECK(r3.loss < 1e-11);

  // Gradient: d/dp1 of -t log p1 is -t/p1 (scaled by 1/B).
  SoftCeResult r4 = soft_ce_loss(std::vector<double>{0.6, 0.4}, std::vector<double>{0.8});
  CHECK(r4.dprobs[1] == doctest::Approx(-0.8 / 0.4).epsilon(1e-12));
  CHECK(r4.dprobs[0] == doctest::Approx(-0.2 / 0.6).epsilon(1e-12));
}

TEST_CASE("soft CE with hard labels equals an independent hard cross-entropy") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 16;
    std::vector<double> probs(2 * n);
    std::vector<double> targets(n);
    for (size_t i = 0; i < n; ++i) {
      double p1 = 0.05 + 0.9 * rng.next_double();
      probs[2 * i] = 1.0 - p1;
      probs[2 * i + 1] = p1;
      targets[i] = rng.next_below(2) ? 1.0 : 0.0;
    }
    double hard = 0.0;  // textbook CE, written independently of the library
    for (size_t i = 0; i < n; ++i)
      hard -= targets[i] == 1.0 ? std::log(probs[2 * i + 1]) : std::log(probs[2 * i]);
    hard /= static_cast<double>(n);
    CHECK(soft_ce_loss(probs, targets).loss == doctest::Approx(hard).epsilon(1e-12));
  }
}

TEST_CASE("warm-up freezes the target tables, EMA moves them afterwards") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  cfg.warmup_epochs = 3;
  cfg.max_epochs = 5;
  TargetTable init = init_targets(run.train.noisy_label, cfg.beta);
  bool moved_after_warmup = false;
  fit(run.train, run.val, run.model, cfg,
      [&](int epoch, const TargetTable& a, const TargetTable* b) {
        REQUIRE(b != nullptr);
        if (epoch < cfg.warmup_epochs) {
          CHECK(a.t == init.t);
          CHECK(b->t == init.t);
        } else if (a.t != init.t) {
          moved_after_warmup = true;
        }
      });
  CHECK(moved_after_warmup);
}

TEST_CASE("disabling ASA pins hard labels for the whole run") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  cfg.asa_enabled = false;
  cfg.cotrain_enabled = false;
  std::vector<double> hard(run.train.size());
  for (size_t i = 0; i < run.train.size(); ++i)
    hard[i] = static_cast<double>(run.train.noisy_label[i]);
  FitResult fitted = fit(run.train, run.val, run.model, cfg,
                         [&](int, const TargetTable& a, const TargetTable* b) {
                           CHECK(a.t == hard);
                           CHECK(b == nullptr);
                         });
  CHECK_FALSE(fitted.model_b.has_value());
  CHECK(fitted.history.size() >= 1);
  for (const auto& h : fitted.history) CHECK(std::isnan(h.loss_b));
}

TEST_CASE("identical seeds reproduce identical runs") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  FitResult a = fit(run.train, run.val, run.model, cfg);
  FitResult b = fit(run.train, run.val, run.model, cfg);
  CHECK(a.model_a.weights == b.model_a.weights);
  CHECK(a.model_b->weights == b.model_b->weights);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].val_auc == b.history[i].val_auc);
    CHECK(a.history[i].loss_a == b.history[i].loss_a);
  }
}

TEST_CASE("swapping peer seeds swaps the models but not the ensemble") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  FitResult normal = fit(run.train, run.val, run.model, cfg);
  TrainConfig swapped_cfg = cfg;
  std::swap(swapped_cfg.seed_model_a, swapped_cfg.seed_model_b);
  FitResult swapped = fit(run.train, run.val, run.model, swapped_cfg);

  CHECK(normal.model_a.weights == swapped.model_b->weights);
  CHECK(normal.model_b->weights == swapped.model_a.weights);
  std::vector<double> e1 =
      ensemble_proba(normal.model_a, *normal.model_b, run.train.features, 1);
  std::vector<double> e2 =
      ensemble_proba(swapped.model_a, *swapped.model_b, run.train.features, 1);
  CHECK(e1 == e2);
  REQUIRE(normal.history.size() == swapped.history.size());
  for (size_t i = 0; i < normal.history.size(); ++i)
    CHECK(normal.history[i].val_auc == swapped.history[i].val_auc);
}

TEST_CASE("serial and parallel peer execution match bit for bit") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  cfg.parallel_peers = true;
  FitResult par = fit(run.train, run.val, run.model, cfg);
  cfg.parallel_peers = false;
  cfg.threads = 1;
  FitResult ser = fit(run.train, run.val, run.model, cfg);
  CHECK(par.model_a.weights == ser.model_a.weights);
  CHECK(par.model_b->weights == ser.model_b->weights);
  for (size_t i = 0; i < par.history.size(); ++i)
    CHECK(par.history[i].val_auc == ser.history[i].val_auc);
}

TEST_CASE("fit validates its inputs") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  std::vector<Repertoire> empty;
  CHECK_THROWS_AS(fit(run.train, empty, run.model, cfg), std::invalid_argument);

  TrainConfig bad = cfg;
  bad.warmup_epochs = bad.max_epochs;
  CHECK_THROWS_AS(fit(run.train, run.val, run.model, bad), std::invalid_argument);

  ModelConfig too_short = run.model;
  too_short.max_cdr3_len = 3;
  CHECK_THROWS_AS(fit(run.train, run.val, too_short, cfg), std::invalid_argument);
}

TEST_CASE("ensemble_proba averages and is symmetric") {
  TinyRun run = make_run();
  ModelState a = init_params(run.model, 100);
  ModelState b = init_params(run.model, 200);
  std::span<const SequenceRecord> probe(run.train.features.data(), 32);
  std::vector<double> pa = predict_proba(a, probe);
  std::vector<double> pb = predict_proba(b, probe);
  std::vector<double> mean = ensemble_proba(a, b, probe);
  std::vector<double> swapped = ensemble_proba(b, a, probe);
  for (size_t i = 0; i < mean.size(); ++i) {
    CHECK(mean[i] == 0.5 * (pa[i] + pb[i]));
    CHECK(mean[i] == swapped[i]);
  }
  std::vector<double> self = ensemble_proba(a, a, probe);
  CHECK(self == pa);

  ModelConfig other_cfg = run.model;
  other_cfg.token_dim = 16;
  ModelState c = init_params(other_cfg, 5);
  CHECK_THROWS_AS(ensemble_proba(a, c, probe), std::invalid_argument);
}

TEST_CASE("score_repertoire is the frequency-weighted mean of sequence scores") {
  TinyRun run = make_run();
  ModelState state = init_params(run.model, 55);
  const Repertoire& rep = run.ds.repertoires[0];
  std::vector<double> f = predict_proba(state, rep.sequences);
  double manual = 0.0;
  for (size_t i = 0; i < f.size(); ++i) manual += rep.sequences[i].frequency * f[i];
  CHECK(score_repertoire(state, nullptr, rep) == doctest::Approx(manual).epsilon(1e-15));

  // Constant scores: zero head forces f = 0.5, so F(R) = 0.5 * sum(rho) = 0.5.
  auto head_w = state.tensor("head_w");
  std::fill(head_w.begin(), head_w.end(), 0.0);
  auto head_b = state.tensor("head_b");
  std::fill(head_b.begin(), head_b.end(), 0.0);
  CHECK(score_repertoire(state, nullptr, rep) ==
        doctest::Approx(0.5).epsilon(1e-9));

  Repertoire empty;
  empty.id = "none";
  CHECK_THROWS_AS(score_repertoire(state, nullptr, empty), std::invalid_argument);
}

TEST_CASE("single-model self-training updates its own table") {
  TinyRun run = make_run();
  TrainConfig cfg = quick_train();
  cfg.cotrain_enabled = false;
  cfg.warmup_epochs = 1;
  cfg.max_epochs = 4;
  TargetTable init = init_targets(run.train.noisy_label, cfg.beta);
  bool moved = false;
  FitResult fitted = fit(run.train, run.val, run.model, cfg,
                         [&](int epoch, const TargetTable& a, const TargetTable*) {
                           if (epoch >= 2 && a.t != init.t) moved = true;
                         });
  CHECK(moved);
  CHECK_FALSE(fitted.model_b.has_value());
}
