#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "replik/evalx.hpp"
#include "replik/profiles.hpp"
#include "replik/synth.hpp"
#include "replik/util.hpp"

using namespace replik;

namespace {

// Brute-force Mann-Whitney oracle: count wins and half-count ties over every
// positive/negative pair.
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  size_t np = 0, nn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    ++np;
    for (size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (int l : labels) nn += l == 0;
  return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

struct RandomCase {
  std::vector<double> scores;
  std::vector<int> labels;
};

RandomCase random_case(Rng& rng, size_t n, bool with_ties) {
  RandomCase c;
  c.scores.resize(n);
  c.labels.resize(n);
  bool has_pos = false, has_neg = false;
  for (size_t i = 0; i < n; ++i) {
    // Quantized scores inject plenty of exact ties.
    c.scores[i] = with_ties ? std::floor(rng.next_double() * 20.0) / 20.0 : rng.next_double();
    c.labels[i] = rng.next_below(2) ? 1 : 0;
    (c.labels[i] ? has_pos : has_neg) = true;
  }
  if (!has_pos) c.labels[0] = 1;
  if (!has_neg) c.labels[n - 1] = 0;
  return c;
}

}  // namespace

TEST_CASE("roc_auc handles the trivial rankings") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.4, 0.4}, std::vector<int>{1, 0}) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.4, 0.5}, std::vector<int>{1, 1}),
                  std::invalid_argument);
}

TEST_CASE("roc_auc equals the pairwise oracle on random tied inputs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    RandomCase c = random_case(rng, 200, true);
    CHECK(roc_auc(c.scores, c.labels) == auc_oracle(c.scores, c.labels));
  }
}

TEST_CASE("rank-based path agrees with the pairwise oracle above the cutover") {
  Rng rng(77);
  RandomCase c = random_case(rng, 10001, true);  // forces the ranked branch
  CHECK(roc_auc(c.scores, c.labels) == auc_oracle(c.scores, c.labels));
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
  Rng rng(5);
  RandomCase c = random_case(rng, 150, true);
  double base = roc_auc(c.scores, c.labels);
  std::vector<double> warped = c.scores;
  for (auto& s : warped) s = std::exp(3.0 * s) + 7.0;
  CHECK(roc_auc(warped, c.labels) == base);
}

TEST_CASE("complementing labels flips tie-free AUC") {
  Rng rng(6);
  RandomCase c = random_case(rng, 151, false);
  std::vector<int> flipped = c.labels;
  for (auto& l : flipped) l = 1 - l;
  CHECK(roc_auc(c.scores, c.labels) + roc_auc(c.scores, flipped) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("select_threshold returns the midpoint on separated data") {
  std::vector<double> scores = {0.9, 0.8, 0.2, 0.1};
  std::vector<int> labels = {1, 1, 0, 0};
  CHECK(select_threshold(scores, labels) == doctest::Approx(0.5));

  std::vector<double> equal = {0.4, 0.4, 0.4};
  std::vector<int> lab = {1, 0, 1};
  CHECK(select_threshold(equal, lab) == 0.4);
}

TEST_CASE("select_threshold beats a 101-point grid search") {
  Rng rng(91);
  for (int trial = 0; trial < 40; ++trial) {
    RandomCase c = random_case(rng, 80, trial % 2 == 0);
    double chosen = select_threshold(c.scores, c.labels);
    double best_chosen = f1_accuracy(c.scores, c.labels, chosen).f1;
    for (int g = 0; g <= 100; ++g) {
      double t = static_cast<double>(g) / 100.0;
      CHECK(best_chosen >= f1_accuracy(c.scores, c.labels, t).f1);
    }
  }
}

TEST_CASE("f1_accuracy on hand-checked cases") {
  std::vector<double> scores = {0.9, 0.8, 0.2, 0.1};
  std::vector<int> labels = {1, 1, 0, 0};
  F1Accuracy perfect = f1_accuracy(scores, labels, 0.5);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.accuracy == 1.0);

  // Nothing predicted positive, half the labels positive.
  F1Accuracy none = f1_accuracy(scores, labels, 2.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.accuracy == 0.5);

  // Random case against an independently built confusion matrix.
  Rng rng(17);
  RandomCase c = random_case(rng, 97, true);
  double threshold = 0.45;
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < c.scores.size(); ++i) {
    bool pred = c.scores[i] >= threshold;
    bool truth = c.labels[i] == 1;
    if (pred && truth) ++tp;
    if (pred && !truth) ++fp;
    if (!pred && !truth) ++tn;
    if (!pred && truth) ++fn;
  }
  F1Accuracy got = f1_accuracy(c.scores, c.labels, threshold);
  double precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
  double recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
  double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  CHECK(got.f1 == doctest::Approx(f1).epsilon(1e-12));
  CHECK(got.accuracy == doctest::Approx(static_cast<double>(tp + tn) / c.scores.size()));
}

TEST_CASE("roc_points sweep is monotone and complete") {
  Rng rng(12);
  RandomCase c = random_case(rng, 60, true);
  std::vector<RocPoint> pts = roc_points(c.scores, c.labels);
  CHECK(pts.front().fpr == 0.0);
  CHECK(pts.front().tpr == 0.0);
  CHECK(pts.back().fpr == 1.0);
  CHECK(pts.back().tpr == 1.0);
  for (size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].fpr >= pts[i - 1].fpr);
    CHECK(pts[i].tpr >= pts[i - 1].tpr);
    CHECK(pts[i].threshold < pts[i - 1].threshold);
  }
}

TEST_CASE("hit_frequency sums matching clone mass") {
  KnownAssociationSet known;
  known.insert("CASSA");
  known.insert("CASSC");
  Repertoire rep;
  rep.id = "r";
  rep.label = 1;
  rep.sequences = {{"CASSA", 1, 0, 1, 0.01}, {"CASSC", 1, 0, 1, 0.02}, {"CASSD", 1, 0, 1, 0.9}};
  CHECK(hit_frequency(rep, known) == doctest::Approx(0.03).epsilon(1e-12));

  KnownAssociationSet none;
  none.insert("XXXX");
  CHECK(hit_frequency(rep, none) == 0.0);

  KnownAssociationSet all;
  for (const auto& rec : rep.sequences) all.insert(rec.cdr3);
  CHECK(hit_frequency(rep, all) == doctest::Approx(0.93).epsilon(1e-12));
  double total = 0.0;
  for (const auto& rec : rep.sequences) total += rec.frequency;
  CHECK(hit_frequency(rep, all) <= total);
}

TEST_CASE("confidence_curves mirrors the history") {
  std::vector<EpochStats> history(3);
  for (int e = 0; e < 3; ++e) {
    history[static_cast<size_t>(e)].epoch = e;
    history[static_cast<size_t>(e)].mean_conf_pos = 0.1 * e;
    history[static_cast<size_t>(e)].mean_conf_neg = 0.2 * e;
  }
  std::vector<ConfidencePoint> pts = confidence_curves(history);
  REQUIRE(pts.size() == 3);
  CHECK(pts[2].mean_conf_neg == doctest::Approx(0.4));
  CHECK(pts[2].mean_conf_pos == doctest::Approx(0.2));
}

namespace {

SynthConfig eval_bench(uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.n_pos_bags = 8;
  cfg.n_neg_bags = 8;
  cfg.seqs_per_bag = 20;
  cfg.len_min = 7;
  cfg.len_max = 10;
  cfg.motifs = {"WQKF"};
  cfg.witness_rate_pos = 0.3;
  cfg.contamination_rate_neg = 0.03;
  cfg.n_v_genes = 4;
  cfg.n_j_genes = 3;
  cfg.seed = seed;
  return cfg;
}

TrainConfig eval_train() {
  TrainConfig cfg;
  cfg.warmup_epochs = 1;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.batch_size = 64;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("sequence identification eval on a constant-score model gives 0.5") {
  SynthDataset ds = generate(eval_bench());
  ModelConfig cfg;
  cfg.token_dim = 8;
  ModelConfig resolved = resolve_model_config(cfg, ds.repertoires, ds.vocab);
  ModelState state = init_params(resolved, 4);
  auto head_w = state.tensor("head_w");
  std::fill(head_w.begin(), head_w.end(), 0.0);
  auto head_b = state.tensor("head_b");
  std::fill(head_b.begin(), head_b.end(), 0.0);
  KnownAssociationSet known = ds.known_set();
  SequenceEval eval = sequence_identification_eval(state, nullptr, ds.repertoires, known);
  CHECK(eval.auc == 0.5);
  CHECK(eval.n_pos > 0);
  CHECK(eval.n_neg > 0);

  KnownAssociationSet disjoint;
  disjoint.insert("AAAAAAA");
  CHECK_THROWS_AS(sequence_identification_eval(state, nullptr, ds.repertoires, disjoint),
                  std::runtime_error);
}

TEST_CASE("a model scoring ground truth exactly gets sequence AUC 1") {
  SynthDataset ds = generate(eval_bench(5));
  KnownAssociationSet known = ds.known_set();
  // Oracle scores, bypassing any model: the AUC machinery alone is on trial.
  std::vector<double> scores;
  std::vector<int> labels;
  for (size_t b = 0; b < ds.repertoires.size(); ++b)
    for (size_t s = 0; s < ds.truth[b].size(); ++s) {
      if (known.contains(ds.repertoires[b].sequences[s].cdr3)) {
        scores.push_back(1.0);
        labels.push_back(1);
      } else if (*ds.repertoires[b].label == 0) {
        scores.push_back(0.0);
        labels.push_back(0);
      }
    }
  CHECK(roc_auc(scores, labels) == 1.0);
}

TEST_CASE("cross-validation pipeline is deterministic and leak-free") {
  SynthDataset ds = generate(eval_bench(9));
  ModelConfig base;
  base.token_dim = 8;
  ModelConfig model_cfg = resolve_model_config(base, ds.repertoires, ds.vocab);
  KnownAssociationSet known = ds.known_set();
  TrainConfig tc = eval_train();

  CvReport r1 = run_cv_experiment(ds.repertoires, &known, ds.vocab, model_cfg, tc, 4, 31);
  CvReport r2 = run_cv_experiment(ds.repertoires, &known, ds.vocab, model_cfg, tc, 4, 31);
  REQUIRE(r1.folds.size() == 4);
  CHECK(r1.rep_auc.mean == r2.rep_auc.mean);
  CHECK(r1.rep_auc.std == r2.rep_auc.std);
  for (size_t f = 0; f < r1.folds.size(); ++f) {
    CHECK(r1.folds[f].rep_auc == r2.folds[f].rep_auc);
    CHECK(r1.folds[f].threshold == r2.folds[f].threshold);
    CHECK(r1.folds[f].seq_auc == r2.folds[f].seq_auc);
  }
  CHECK(r1.rep_auc.std >= 0.0);

  // Data-flow audit: flipping test-fold labels must not move the trained
  // model by a single bit; only the reported metrics may change.
  std::vector<std::string> ids;
  for (const auto& rep : ds.repertoires) ids.push_back(rep.id);
  FoldSplit split = kfold_split(ids, 4, 31);
  std::vector<Repertoire> train_reps, val_reps, test_reps;
  for (const auto& rep : ds.repertoires) {
    int fold = split.fold_of.at(rep.id);
    if (fold == 0)
      test_reps.push_back(rep);
    else if (fold == 1)
      val_reps.push_back(rep);
    else
      train_reps.push_back(rep);
  }
  InstanceDataset train = flatten_to_instances(train_reps);
  FitResult f1 = fit(train, val_reps, model_cfg, tc);
  for (auto& rep : test_reps) rep.label = 1 - *rep.label;  // perturb test labels
  FitResult f2 = fit(train, val_reps, model_cfg, tc);
  CHECK(f1.model_a.weights == f2.model_a.weights);
  CHECK(f1.model_b->weights == f2.model_b->weights);
}

TEST_CASE("ablation harness covers the four modes deterministically") {
  SynthDataset ds = generate(eval_bench(13));
  ModelConfig base;
  base.token_dim = 8;
  ModelConfig model_cfg = resolve_model_config(base, ds.repertoires, ds.vocab);
  TrainConfig tc = eval_train();
  std::vector<uint64_t> seeds = {0, 1};
  AblationResult r1 = run_ablation(ds.repertoires, nullptr, ds.vocab, model_cfg, tc, seeds, 4, 7);
  AblationResult r2 = run_ablation(ds.repertoires, nullptr, ds.vocab, model_cfg, tc, seeds, 4, 7);
  REQUIRE(r1.rows.size() == 4);
  CHECK(to_string(r1.rows[0].mode) == "full");
  CHECK(to_string(r1.rows[3].mode) == "erm");
  for (size_t row = 0; row < 4; ++row) {
    CHECK(r1.rows[row].cells.size() == 2);
    CHECK(r1.rows[row].rep_auc.mean == r2.rows[row].rep_auc.mean);
    CHECK_FALSE(r1.rows[row].seq_auc.has_value());
  }
  CHECK_THROWS_AS(run_ablation(ds.repertoires, nullptr, ds.vocab, model_cfg, tc,
                               std::vector<uint64_t>{0}, 4, 7),
                  std::invalid_argument);
}

TEST_CASE("csv and json writers emit the documented headers") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "replik_evalx_csv";
  fs::create_directories(dir);
  std::vector<EpochStats> history(2);
  history[1].epoch = 1;
  history[1].loss_b = std::numeric_limits<double>::quiet_NaN();
  write_history_csv(history, dir / "history.csv");
  std::ifstream in(dir / "history.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,loss_a,loss_b,val_auc,mean_conf_pos,mean_conf_neg");
  fs::remove_all(dir);
}
