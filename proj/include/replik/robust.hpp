#pragma once
// Robust training schema: asymmetric smoothed target initialization, EMA
// self-adaptive target correction, soft cross-entropy, warm-up, co-training
// with peer target exchange, ensembling, and frequency-weighted repertoire
// scoring.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "replik/core.hpp"
#include "replik/nn.hpp"

namespace replik {

// Per-instance soft training targets, one table per peer model.
struct TargetTable {
  std::vector<double> t;
  int64_t epoch = 0;  // number of EMA updates applied
};

// t0 = 1 - beta for noisy-positive instances, exactly 0 for noisy-negative
// ones; the asymmetry is what keeps clean negatives anchored.
TargetTable init_targets(std::span<const int> noisy_labels, double beta);

// t <- alpha * t + (1 - alpha) * p, elementwise. When positives_only is set
// only entries with noisy label 1 move (noisy_labels may be empty otherwise).
void ema_update(TargetTable& table, std::span<const double> preds, double alpha,
                bool positives_only = false, std::span<const int> noisy_labels = {});

struct SoftCeResult {
  double loss = 0.0;
  std::vector<double> dprobs;  // row-major B x 2
};

// Mean over the batch of -[t log p1 + (1-t) log p0], logs clamped at eps_log.
SoftCeResult soft_ce_loss(std::span<const double> probs, std::span<const double> targets,
                          double eps_log = 1e-12);

struct TrainConfig {
  double alpha = 0.99;       // EMA coefficient
  double beta = 0.7;         // asymmetric smoothing
  int warmup_epochs = 15;    // epochs on the initial targets before EMA starts
  int max_epochs = 60;
  int patience = 10;         // early stopping on validation repertoire AUC
  int batch_size = 256;
  double lr = 0.005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double eps_log = 1e-12;
  bool asa_enabled = true;      // smoothed init + EMA correction
  bool cotrain_enabled = true;  // two peers with target exchange
  // Resolved variants of under-specified behaviours; defaults follow the
  // update equation as written and the peer-exchange reading of co-training.
  bool ema_positives_only = false;   // alternative: freeze negative targets
  bool train_on_own_table = false;   // alternative: self-training tables
  bool early_stop_on_ensemble = true;
  bool record_confidence = true;     // per-epoch confidence pass (costs one
                                     // forward over the training set)
  bool parallel_peers = true;
  uint64_t seed_model_a = 1;
  uint64_t seed_model_b = 2;
  uint64_t seed_data = 3;
  int threads = 0;  // 0 = thread_budget()

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss_a = 0.0;
  double loss_b = 0.0;  // NaN for single-model runs
  double val_auc = 0.0;
  // Mean predicted probability of the instance's noisy class, per class.
  double mean_conf_pos = 0.0;
  double mean_conf_neg = 0.0;
};

struct FitResult {
  ModelState model_a;                  // best-validation checkpoint
  std::optional<ModelState> model_b;   // present when co-training
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_auc = 0.0;
};

// Observer invoked after every epoch with the current target tables; used by
// tests to audit warm-up freezing and EMA dynamics.
using FitObserver =
    std::function<void(int epoch, const TargetTable& table_a, const TargetTable* table_b)>;

// Trains one model (or a co-trained pair) on bag-labelled instances.
// Protocol per epoch: (optional) EMA-update each model's own table from its
// previous-epoch clean predictions once warm-up has passed, train each model
// against its peer's table (own table without co-training), then evaluate
// validation repertoire AUC for early stopping.
FitResult fit(const InstanceDataset& train, std::span<const Repertoire> validation,
              const ModelConfig& model_cfg, const TrainConfig& train_cfg,
              const FitObserver& observer = {});

// Elementwise mean of the two models' p(y=1); peers must share the config.
std::vector<double> ensemble_proba(const ModelState& a, const ModelState& b,
                                   std::span<const SequenceRecord> records, int n_threads = 1);

// F(R) = sum over (s, rho) of rho * f(s); model_b selects the ensemble.
double score_repertoire(const ModelState& a, const ModelState* b, const Repertoire& rep,
                        int n_threads = 1);

std::vector<double> score_repertoires(const ModelState& a, const ModelState* b,
                                      std::span<const Repertoire> reps, int n_threads = 1);

}  // namespace replik
