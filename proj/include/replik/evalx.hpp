#pragma once
// Metrics and experiment protocols: ROC/AUC, threshold selection, F1 and
// accuracy, associated-sequence identification, hit frequency, confidence
// curves, cross-validation and the ablation harness.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "replik/core.hpp"
#include "replik/nn.hpp"
#include "replik/robust.hpp"

namespace replik {

// Mann-Whitney AUC with half credit for ties: exact over all pos/neg pairs
// up to 10^4 scores, tie-aware rank statistic above (the two agree exactly).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Threshold maximizing validation F1 under the score >= threshold convention.
// Returns the midpoint of the maximizing interval; ties break toward the
// larger threshold.
double select_threshold(std::span<const double> scores, std::span<const int> labels);

struct F1Accuracy {
  double f1 = 0.0;
  double accuracy = 0.0;
};
F1Accuracy f1_accuracy(std::span<const double> scores, std::span<const int> labels,
                       double threshold);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels);

// Summed clone frequency of sequences matching the known set. Matching is on
// cdr3 alone unless match_v is set and the set carries V annotations.
double hit_frequency(const Repertoire& rep, const KnownAssociationSet& known,
                     const GeneVocab* vocab = nullptr, bool match_v = false);

struct SequenceEval {
  double auc = 0.0;
  size_t n_pos = 0;
  size_t n_neg = 0;
  std::vector<RocPoint> roc;
};

// Builds an evaluation known set from per-instance ground truth: the cdr3 of
// every true-associated instance (truth aligned with flatten order).
KnownAssociationSet known_set_from_truth(std::span<const Repertoire> repertoires,
                                         std::span<const uint8_t> truth);

// Positives: test-fold sequences matching the known set. Negatives: sequences
// of negative-labelled test repertoires not in the set.
SequenceEval sequence_identification_eval(const ModelState& model_a, const ModelState* model_b,
                                          std::span<const Repertoire> test_repertoires,
                                          const KnownAssociationSet& known,
                                          const GeneVocab* vocab = nullptr, bool match_v = false,
                                          int n_threads = 1);

struct ConfidencePoint {
  int epoch = 0;
  double mean_conf_neg = 0.0;
  double mean_conf_pos = 0.0;
};
std::vector<ConfidencePoint> confidence_curves(std::span<const EpochStats> history);

struct FoldOutcome {
  int fold = 0;
  double threshold = 0.0;
  double rep_auc = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::optional<double> seq_auc;
  std::vector<EpochStats> history;
  std::vector<RocPoint> rep_roc;
  std::vector<RocPoint> seq_roc;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
};

struct CvReport {
  std::vector<FoldOutcome> folds;
  Aggregate rep_auc, f1, accuracy;
  std::optional<Aggregate> seq_auc;
};

// k rotations of train(k-2) / validation(1) / test(1); threshold chosen on
// the validation fold only, metrics reported on the test fold.
CvReport run_cv_experiment(std::span<const Repertoire> repertoires,
                           const KnownAssociationSet* known, const GeneVocab& vocab,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg, int k,
                           uint64_t split_seed);

enum class AblationMode { Full, NoAsa, NoCoTrain, Erm };
std::string to_string(AblationMode mode);
TrainConfig apply_mode(TrainConfig cfg, AblationMode mode);

struct AblationCell {
  uint64_t seed = 0;
  double rep_auc = 0.0;
  std::optional<double> seq_auc;
  std::vector<EpochStats> history;
};

struct AblationResult {
  struct Row {
    AblationMode mode = AblationMode::Full;
    std::vector<AblationCell> cells;
    Aggregate rep_auc;
    std::optional<Aggregate> seq_auc;
  };
  std::vector<Row> rows;
};

// {full, w/o ASA, w/o CT, ERM} x seeds on one dataset; each cell trains on
// the rotation seed % k of a shared fold split.
AblationResult run_ablation(std::span<const Repertoire> repertoires,
                            const KnownAssociationSet* known, const GeneVocab& vocab,
                            const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            std::span<const uint64_t> seeds, int k, uint64_t split_seed);

// CSV / JSON emission (formats documented in the README).
void write_history_csv(std::span<const EpochStats> history, const std::filesystem::path& path);
void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path);
void write_ablation_csv(const AblationResult& result, const std::filesystem::path& path);
void write_report_json(const CvReport& report, const std::filesystem::path& path);

}  // namespace replik
