#include "replik/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "replik/util.hpp"

namespace replik {

namespace {

void check_scores(std::span<const double> scores, std::span<const int> labels,
                  const char* who) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(who) + ": scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
  bool has_pos = false, has_neg = false;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      has_pos = true;
    else if (labels[i] == 0)
      has_neg = true;
    else
      throw std::invalid_argument(std::string(who) + ": labels must be 0/1");
    if (!std::isfinite(scores[i]))
      throw std::invalid_argument(std::string(who) + ": non-finite score");
  }
  if (!has_pos || !has_neg)
    throw std::invalid_argument(std::string(who) + ": both classes must be present");
}

double auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  size_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  for (int l : labels) n_neg += l == 0;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_ranked(std::span<const double> scores, std::span<const int> labels) {
  size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Average rank of the tie group, 1-based.
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  size_t n_neg = n - n_pos;
  double pos = static_cast<double>(n_pos);
  return (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * static_cast<double>(n_neg));
}

Aggregate aggregate_of(std::span<const double> xs) {
  return Aggregate{mean_of(xs), stddev_of(xs)};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels, "roc_auc");
  return scores.size() <= 10000 ? auc_pairwise(scores, labels) : auc_ranked(scores, labels);
}

double select_threshold(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels, "select_threshold");
  // Distinct score values descending, with per-group class counts.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  struct Group {
    double value;
    size_t pos = 0, neg = 0;
  };
  std::vector<Group> groups;
  for (size_t i = 0; i < order.size();) {
    Group grp;
    grp.value = scores[order[i]];
    size_t j = i;
    for (; j < order.size() && scores[order[j]] == grp.value; ++j)
      ++(labels[order[j]] == 1 ? grp.pos : grp.neg);
    groups.push_back(grp);
    i = j;
  }
  size_t total_pos = 0;
  for (const auto& grp : groups) total_pos += grp.pos;

  double best_f1 = -1.0, best_threshold = groups.front().value;
  size_t tp = 0, fp = 0;
  for (size_t k = 0; k < groups.size(); ++k) {
    tp += groups[k].pos;
    fp += groups[k].neg;
    size_t fn = total_pos - tp;
    double denom = static_cast<double>(2 * tp + fp + fn);
    double f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
    // Larger thresholds come first, so a strict improvement keeps the tie
    // rule "toward the larger threshold".
    if (f1 > best_f1) {
      best_f1 = f1;
      best_threshold = k + 1 < groups.size() ? 0.5 * (groups[k].value + groups[k + 1].value)
                                             : groups[k].value;
    }
  }
  return best_threshold;
}

F1Accuracy f1_accuracy(std::span<const double> scores, std::span<const int> labels,
                       double threshold) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("f1_accuracy: scores and labels differ in length");
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      ++(pred ? tp : fn);
    else
      ++(pred ? fp : tn);
  }
  F1Accuracy out;
  double denom = static_cast<double>(2 * tp + fp + fn);
  out.f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  out.accuracy =
      scores.empty() ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  return out;
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels, "roc_points");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  size_t total_pos = 0;
  for (int l : labels) total_pos += l == 1;
  size_t total_neg = labels.size() - total_pos;
  std::vector<RocPoint> points;
  points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < order.size();) {
    double value = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == value; ++i)
      ++(labels[order[i]] == 1 ? tp : fp);
    points.push_back({static_cast<double>(fp) / static_cast<double>(total_neg),
                      static_cast<double>(tp) / static_cast<double>(total_pos), value});
  }
  return points;
}

double hit_frequency(const Repertoire& rep, const KnownAssociationSet& known,
                     const GeneVocab* vocab, bool match_v) {
  double sum = 0.0;
  for (const auto& rec : rep.sequences) {
    bool hit;
    if (match_v && known.carries_v() && vocab)
      hit = known.contains(rec.cdr3, vocab->name(GeneVocab::Family::V, rec.v_gene));
    else
      hit = known.contains(rec.cdr3);
    if (hit) sum += rec.frequency;
  }
  return sum;
}

KnownAssociationSet known_set_from_truth(std::span<const Repertoire> repertoires,
                                         std::span<const uint8_t> truth) {
  size_t total = 0;
  for (const auto& rep : repertoires) total += rep.sequences.size();
  if (truth.size() != total)
    throw std::invalid_argument("known_set_from_truth: truth misaligned with instances");
  KnownAssociationSet set;
  size_t i = 0;
  for (const auto& rep : repertoires)
    for (const auto& rec : rep.sequences) {
      if (truth[i]) set.insert(rec.cdr3);
      ++i;
    }
  return set;
}

SequenceEval sequence_identification_eval(const ModelState& model_a, const ModelState* model_b,
                                          std::span<const Repertoire> test_repertoires,
                                          const KnownAssociationSet& known,
                                          const GeneVocab* vocab, bool match_v, int n_threads) {
  if (known.empty())
    throw std::invalid_argument("sequence_identification_eval: empty known set");
  std::vector<SequenceRecord> samples;
  std::vector<int> labels;
  for (const auto& rep : test_repertoires) {
    for (const auto& rec : rep.sequences) {
      bool hit;
      if (match_v && known.carries_v() && vocab)
        hit = known.contains(rec.cdr3, vocab->name(GeneVocab::Family::V, rec.v_gene));
      else
        hit = known.contains(rec.cdr3);
      if (hit) {
        samples.push_back(rec);
        labels.push_back(1);
      } else if (rep.label && *rep.label == 0) {
        samples.push_back(rec);
        labels.push_back(0);
      }
    }
  }
  size_t n_pos = static_cast<size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0)
    throw std::runtime_error(
        "sequence_identification_eval: no known-associated sequence in the test fold; "
        "use larger folds or a bigger known set");
  if (n_pos == labels.size())
    throw std::runtime_error("sequence_identification_eval: no negative sequences in test fold");
  std::vector<double> scores = model_b ? ensemble_proba(model_a, *model_b, samples, n_threads)
                                       : predict_proba(model_a, samples, n_threads);
  SequenceEval eval;
  eval.n_pos = n_pos;
  eval.n_neg = labels.size() - n_pos;
  eval.auc = roc_auc(scores, labels);
  eval.roc = roc_points(scores, labels);
  return eval;
}

std::vector<ConfidencePoint> confidence_curves(std::span<const EpochStats> history) {
  std::vector<ConfidencePoint> points;
  points.reserve(history.size());
  for (const auto& h : history) points.push_back({h.epoch, h.mean_conf_neg, h.mean_conf_pos});
  return points;
}

namespace {

struct FoldData {
  std::vector<Repertoire> train, val, test;
};

FoldData split_rotation(std::span<const Repertoire> reps, const FoldSplit& split, int rotation) {
  FoldData data;
  int k = split.k;
  int test_fold = rotation % k;
  int val_fold = (rotation + 1) % k;
  for (const auto& rep : reps) {
    int fold = split.fold_of.at(rep.id);
    if (fold == test_fold)
      data.test.push_back(rep);
    else if (fold == val_fold)
      data.val.push_back(rep);
    else
      data.train.push_back(rep);
  }
  return data;
}

TrainConfig derive_seeds(TrainConfig cfg, uint64_t cell) {
  cfg.seed_model_a = derive_seed(cfg.seed_model_a, cell * 3 + 0);
  cfg.seed_model_b = derive_seed(cfg.seed_model_b, cell * 3 + 1);
  cfg.seed_data = derive_seed(cfg.seed_data, cell * 3 + 2);
  return cfg;
}

}  // namespace

CvReport run_cv_experiment(std::span<const Repertoire> repertoires,
                           const KnownAssociationSet* known, const GeneVocab& vocab,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg, int k,
                           uint64_t split_seed) {
  std::vector<std::string> ids;
  for (const auto& rep : repertoires) ids.push_back(rep.id);
  FoldSplit split = kfold_split(ids, k, split_seed);
  int threads = thread_budget(train_cfg.threads);

  CvReport report;
  std::vector<double> rep_aucs, f1s, accs, seq_aucs;
  for (int rotation = 0; rotation < k; ++rotation) {
    FoldData data = split_rotation(repertoires, split, rotation);
    InstanceDataset train = flatten_to_instances(data.train);
    FitResult fitted = fit(train, data.val, model_cfg,
                           derive_seeds(train_cfg, static_cast<uint64_t>(rotation)));
    const ModelState* peer = fitted.model_b ? &*fitted.model_b : nullptr;

    std::vector<double> val_scores = score_repertoires(fitted.model_a, peer, data.val, threads);
    std::vector<int> val_labels;
    for (const auto& rep : data.val) val_labels.push_back(*rep.label);
    double threshold = select_threshold(val_scores, val_labels);

    std::vector<double> test_scores = score_repertoires(fitted.model_a, peer, data.test, threads);
    std::vector<int> test_labels;
    for (const auto& rep : data.test) test_labels.push_back(*rep.label);

    FoldOutcome fold;
    fold.fold = rotation;
    fold.threshold = threshold;
    fold.rep_auc = roc_auc(test_scores, test_labels);
    auto fa = f1_accuracy(test_scores, test_labels, threshold);
    fold.f1 = fa.f1;
    fold.accuracy = fa.accuracy;
    fold.history = fitted.history;
    fold.rep_roc = roc_points(test_scores, test_labels);
    if (known) {
      SequenceEval seq = sequence_identification_eval(fitted.model_a, peer, data.test, *known,
                                                      &vocab, false, threads);
      fold.seq_auc = seq.auc;
      fold.seq_roc = std::move(seq.roc);
      seq_aucs.push_back(seq.auc);
    }
    rep_aucs.push_back(fold.rep_auc);
    f1s.push_back(fold.f1);
    accs.push_back(fold.accuracy);
    report.folds.push_back(std::move(fold));
  }
  report.rep_auc = aggregate_of(rep_aucs);
  report.f1 = aggregate_of(f1s);
  report.accuracy = aggregate_of(accs);
  if (!seq_aucs.empty()) report.seq_auc = aggregate_of(seq_aucs);
  return report;
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::Full: return "full";
    case AblationMode::NoAsa: return "no_asa";
    case AblationMode::NoCoTrain: return "no_cotrain";
    default: return "erm";
  }
}

TrainConfig apply_mode(TrainConfig cfg, AblationMode mode) {
  switch (mode) {
    case AblationMode::Full:
      cfg.asa_enabled = true;
      cfg.cotrain_enabled = true;
      break;
    case AblationMode::NoAsa:
      cfg.asa_enabled = false;
      cfg.cotrain_enabled = true;
      break;
    case AblationMode::NoCoTrain:
      cfg.asa_enabled = true;
      cfg.cotrain_enabled = false;
      break;
    case AblationMode::Erm:
      cfg.asa_enabled = false;
      cfg.cotrain_enabled = false;
      break;
  }
  return cfg;
}

AblationResult run_ablation(std::span<const Repertoire> repertoires,
                            const KnownAssociationSet* known, const GeneVocab& vocab,
                            const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            std::span<const uint64_t> seeds, int k, uint64_t split_seed) {
  if (seeds.size() < 2) throw std::invalid_argument("run_ablation: need at least 2 seeds");
  std::vector<std::string> ids;
  for (const auto& rep : repertoires) ids.push_back(rep.id);
  FoldSplit split = kfold_split(ids, k, split_seed);
  int threads = thread_budget(train_cfg.threads);

  AblationResult result;
  for (AblationMode mode : {AblationMode::Full, AblationMode::NoAsa, AblationMode::NoCoTrain,
                            AblationMode::Erm}) {
    AblationResult::Row row;
    row.mode = mode;
    std::vector<double> rep_aucs, seq_aucs;
    for (uint64_t seed : seeds) {
      FoldData data = split_rotation(repertoires, split, static_cast<int>(seed % k));
      InstanceDataset train = flatten_to_instances(data.train);
      TrainConfig cfg = apply_mode(derive_seeds(train_cfg, seed), mode);
      FitResult fitted = fit(train, data.val, model_cfg, cfg);
      const ModelState* peer = fitted.model_b ? &*fitted.model_b : nullptr;

      AblationCell cell;
      cell.seed = seed;
      std::vector<double> test_scores =
          score_repertoires(fitted.model_a, peer, data.test, threads);
      std::vector<int> test_labels;
      for (const auto& rep : data.test) test_labels.push_back(*rep.label);
      cell.rep_auc = roc_auc(test_scores, test_labels);
      if (known) {
        SequenceEval seq = sequence_identification_eval(fitted.model_a, peer, data.test, *known,
                                                        &vocab, false, threads);
        cell.seq_auc = seq.auc;
        seq_aucs.push_back(seq.auc);
      }
      cell.history = fitted.history;
      rep_aucs.push_back(cell.rep_auc);
      row.cells.push_back(std::move(cell));
    }
    row.rep_auc = aggregate_of(rep_aucs);
    if (!seq_aucs.empty()) row.seq_auc = aggregate_of(seq_aucs);
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_history_csv(std::span<const EpochStats> history, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "epoch,loss_a,loss_b,val_auc,mean_conf_pos,mean_conf_neg\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << format_double(h.loss_a) << ','
        << (std::isnan(h.loss_b) ? std::string() : format_double(h.loss_b)) << ','
        << format_double(h.val_auc) << ',' << format_double(h.mean_conf_pos) << ','
        << format_double(h.mean_conf_neg) << '\n';
  }
}

void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : points)
    out << format_double(p.fpr) << ',' << format_double(p.tpr) << ','
        << format_double(p.threshold) << '\n';
}

void write_ablation_csv(const AblationResult& result, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mode,n_seeds,rep_auc_mean,rep_auc_std,seq_auc_mean,seq_auc_std\n";
  for (const auto& row : result.rows) {
    out << to_string(row.mode) << ',' << row.cells.size() << ','
        << format_double(row.rep_auc.mean) << ',' << format_double(row.rep_auc.std) << ',';
    if (row.seq_auc)
      out << format_double(row.seq_auc->mean) << ',' << format_double(row.seq_auc->std);
    else
      out << ',';
    out << '\n';
  }
}

void write_report_json(const CvReport& report, const std::filesystem::path& path) {
  nlohmann::json doc;
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{{"mean", a.mean}, {"std", a.std}};
  };
  doc["repertoire_auc"] = agg(report.rep_auc);
  doc["f1"] = agg(report.f1);
  doc["accuracy"] = agg(report.accuracy);
  if (report.seq_auc) doc["sequence_auc"] = agg(*report.seq_auc);
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& fold : report.folds) {
    nlohmann::json f;
    f["fold"] = fold.fold;
    f["threshold"] = fold.threshold;
    f["repertoire_auc"] = fold.rep_auc;
    f["f1"] = fold.f1;
    f["accuracy"] = fold.accuracy;
    if (fold.seq_auc) f["sequence_auc"] = *fold.seq_auc;
    folds.push_back(std::move(f));
  }
  doc["folds"] = std::move(folds);
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
}

}  // namespace replik
