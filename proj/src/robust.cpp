#include "replik/robust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "replik/evalx.hpp"
#include "replik/util.hpp"

namespace replik {

namespace {

// Clean-mode predictions over the whole training set, written per-slot so the
// result does not depend on the worker count.
void predict_into(const ModelState& model, const InstanceDataset& train,
                  std::vector<double>& out, int n_threads) {
  out = predict_proba(model, train.features, n_threads);
}

}  // namespace

TargetTable init_targets(std::span<const int> noisy_labels, double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    throw std::invalid_argument("init_targets: beta must be in [0, 1)");
  TargetTable table;
  table.t.resize(noisy_labels.size());
  for (size_t i = 0; i < noisy_labels.size(); ++i)
    table.t[i] = noisy_labels[i] == 1 ? 1.0 - beta : 0.0;
  return table;
}

void ema_update(TargetTable& table, std::span<const double> preds, double alpha,
                bool positives_only, std::span<const int> noisy_labels) {
  if (preds.size() != table.t.size())
    throw std::invalid_argument("ema_update: prediction vector does not match table size");
  if (positives_only && noisy_labels.size() != table.t.size())
    throw std::invalid_argument("ema_update: noisy labels required for positives-only update");
  for (size_t i = 0; i < table.t.size(); ++i) {
    if (positives_only && noisy_labels[i] != 1) continue;
    table.t[i] = alpha * table.t[i] + (1.0 - alpha) * preds[i];
  }
  table.epoch += 1;
}

namespace {

// Per-row loss and dLoss/dprobs for one instance, scaled by `scale` so batch
// means come out of a plain sum.
inline double soft_ce_row(const double* probs, double target, double eps_log, double scale,
                          double dprobs[2]) {
  double p0 = std::max(probs[0], eps_log);
  double p1 = std::max(probs[1], eps_log);
  double loss = -(target * std::log(p1) + (1.0 - target) * std::log(p0)) * scale;
  dprobs[0] = probs[0] > eps_log ? -(1.0 - target) / p0 * scale : 0.0;
  dprobs[1] = probs[1] > eps_log ? -target / p1 * scale : 0.0;
  return loss;
}

}  // namespace

SoftCeResult soft_ce_loss(std::span<const double> probs, std::span<const double> targets,
                          double eps_log) {
  if (probs.size() != targets.size() * 2)
    throw std::invalid_argument("soft_ce_loss: probs must be B x 2 for B targets");
  SoftCeResult result;
  result.dprobs.assign(probs.size(), 0.0);
  if (targets.empty()) return result;
  double scale = 1.0 / static_cast<double>(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] >= 0.0 && targets[i] <= 1.0))
      throw std::invalid_argument("soft_ce_loss: target outside [0, 1]");
    result.loss += soft_ce_row(&probs[i * 2], targets[i], eps_log, scale, &result.dprobs[i * 2]);
  }
  return result;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("train config: alpha must be in [0, 1]");
  if (!(beta >= 0.0 && beta < 1.0))
    throw std::invalid_argument("train config: beta must be in [0, 1)");
  if (warmup_epochs < 0 || max_epochs < 1 || warmup_epochs >= max_epochs)
    throw std::invalid_argument("train config: need 0 <= warmup_epochs < max_epochs");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be >= 0");
  if (!(eps_log > 0.0)) throw std::invalid_argument("train config: eps_log must be > 0");
}

namespace {

// One model's training epoch over a fixed batch order against a fixed target
// table. Row gradients are accumulated into kGradChunks buffers reduced in
// chunk order, so the result is independent of the worker count.
double train_one_epoch(ModelState& model, const InstanceDataset& train,
                       std::span<const size_t> order, const TargetTable& targets,
                       const TrainConfig& cfg, uint64_t run_seed, int epoch, int n_threads) {
  size_t n = order.size();
  AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  std::vector<std::vector<double>> partial(
      std::min<size_t>(kGradChunks, static_cast<size_t>(cfg.batch_size)));
  for (auto& buf : partial) buf.assign(model.layout.total, 0.0);
  std::vector<double> grad(model.layout.total);
  std::vector<double> chunk_loss(partial.size());
  std::vector<SequenceRecord> rows;
  std::vector<double> row_targets;
  double loss_sum = 0.0;

  size_t n_batches = (n + static_cast<size_t>(cfg.batch_size) - 1) /
                     static_cast<size_t>(cfg.batch_size);
  for (size_t b = 0; b < n_batches; ++b) {
    size_t lo = b * static_cast<size_t>(cfg.batch_size);
    size_t hi = std::min(n, lo + static_cast<size_t>(cfg.batch_size));
    rows.clear();
    row_targets.clear();
    for (size_t i = lo; i < hi; ++i) {
      rows.push_back(train.features[order[i]]);
      row_targets.push_back(targets.t[order[i]]);
    }
    Batch batch = encode_batch(rows, model.config);
    uint64_t dropout_seed = derive_seed(run_seed, (static_cast<uint64_t>(epoch) << 32) | b);
    double inv_rows = 1.0 / static_cast<double>(batch.rows);

    int chunks = static_cast<int>(std::min<size_t>(kGradChunks, static_cast<size_t>(batch.rows)));
    for (int c = 0; c < chunks; ++c) {
      std::fill(partial[static_cast<size_t>(c)].begin(), partial[static_cast<size_t>(c)].end(),
                0.0);
      chunk_loss[static_cast<size_t>(c)] = 0.0;
    }
    parallel_chunks(static_cast<size_t>(batch.rows), kGradChunks, n_threads,
                    [&](int c, size_t rlo, size_t rhi) {
                      thread_local RowWorkspace ws;
                      auto& buf = partial[static_cast<size_t>(c)];
                      double probs[2], dprobs[2];
                      double local = 0.0;
                      for (size_t r = rlo; r < rhi; ++r) {
                        forward_row(model, batch, static_cast<int>(r), true, dropout_seed, ws,
                                    probs);
                        local += soft_ce_row(probs, row_targets[r], cfg.eps_log, inv_rows, dprobs);
                        backward_row(model, batch, static_cast<int>(r), ws, dprobs, buf);
                      }
                      chunk_loss[static_cast<size_t>(c)] = local;
                    });
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    for (int c = 0; c < chunks; ++c) {
      const auto& buf = partial[static_cast<size_t>(c)];
      for (size_t i = 0; i < grad.size(); ++i) grad[i] += buf[i];
      batch_loss += chunk_loss[static_cast<size_t>(c)];
    }
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch));
    adam_step(model, grad, adam);
    loss_sum += batch_loss * static_cast<double>(batch.rows);
  }
  return n == 0 ? 0.0 : loss_sum / static_cast<double>(n);
}

}  // namespace

FitResult fit(const InstanceDataset& train, std::span<const Repertoire> validation,
              const ModelConfig& model_cfg, const TrainConfig& train_cfg,
              const FitObserver& observer) {
  model_cfg.validate();
  train_cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  if (validation.empty()) throw std::invalid_argument("fit: empty validation set");
  for (const auto& rep : validation)
    if (!rep.label) throw std::invalid_argument("fit: unlabeled validation repertoire " + rep.id);
  for (const auto& rec : train.features)
    if (static_cast<int>(rec.cdr3.size()) > model_cfg.max_cdr3_len)
      throw std::invalid_argument("fit: training sequence longer than max_cdr3_len");

  int threads = thread_budget(train_cfg.threads);
  bool cotrain = train_cfg.cotrain_enabled;
  int peer_threads = cotrain ? std::max(1, threads / 2) : threads;

  ModelState model_a = init_params(model_cfg, train_cfg.seed_model_a);
  std::optional<ModelState> model_b;
  if (cotrain) model_b = init_params(model_cfg, train_cfg.seed_model_b);

  // Hard labels when ASA is disabled; smoothed asymmetric targets otherwise.
  TargetTable table_a, table_b;
  if (train_cfg.asa_enabled) {
    table_a = init_targets(train.noisy_label, train_cfg.beta);
  } else {
    table_a.t.assign(train.size(), 0.0);
    for (size_t i = 0; i < train.size(); ++i)
      table_a.t[i] = static_cast<double>(train.noisy_label[i]);
  }
  table_b = table_a;

  std::vector<int> val_labels(validation.size());
  for (size_t i = 0; i < validation.size(); ++i) val_labels[i] = *validation[i].label;

  std::vector<double> preds_a(train.size(), 0.0), preds_b;
  if (cotrain) preds_b.assign(train.size(), 0.0);
  bool preds_ready = false;

  FitResult result;
  result.model_a = model_a;
  if (cotrain) result.model_b = model_b;

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int last_strict_improvement = 0;

  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    if (train_cfg.asa_enabled && epoch >= train_cfg.warmup_epochs && preds_ready) {
      // Eq-style correction: each model's own table moves toward its
      // previous-epoch clean predictions.
      ema_update(table_a, preds_a, train_cfg.alpha, train_cfg.ema_positives_only,
                 train.noisy_label);
      if (cotrain)
        ema_update(table_b, preds_b, train_cfg.alpha, train_cfg.ema_positives_only,
                   train.noisy_label);
    }

    Rng perm_rng(derive_seed(train_cfg.seed_data, static_cast<uint64_t>(epoch)));
    perm_rng.shuffle(order);

    // Peer exchange: model A trains against B's table and vice versa.
    const TargetTable& targets_for_a =
        (cotrain && !train_cfg.train_on_own_table) ? table_b : table_a;
    const TargetTable& targets_for_b = train_cfg.train_on_own_table ? table_b : table_a;

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss_b = std::numeric_limits<double>::quiet_NaN();
    if (cotrain && train_cfg.parallel_peers && threads > 1) {
      double loss_a = 0.0, loss_b = 0.0;
      std::exception_ptr err_a, err_b;
      std::thread tb([&] {
        try {
          loss_b = train_one_epoch(*model_b, train, order, targets_for_b, train_cfg,
                                   train_cfg.seed_model_b, epoch, peer_threads);
          predict_into(*model_b, train, preds_b, peer_threads);
        } catch (...) {
          err_b = std::current_exception();
        }
      });
      try {
        loss_a = train_one_epoch(model_a, train, order, targets_for_a, train_cfg,
                                 train_cfg.seed_model_a, epoch, peer_threads);
        predict_into(model_a, train, preds_a, peer_threads);
      } catch (...) {
        err_a = std::current_exception();
      }
      tb.join();
      if (err_a) std::rethrow_exception(err_a);
      if (err_b) std::rethrow_exception(err_b);
      stats.loss_a = loss_a;
      stats.loss_b = loss_b;
    } else {
      stats.loss_a = train_one_epoch(model_a, train, order, targets_for_a, train_cfg,
                                     train_cfg.seed_model_a, epoch, threads);
      predict_into(model_a, train, preds_a, threads);
      if (cotrain) {
        stats.loss_b = train_one_epoch(*model_b, train, order, targets_for_b, train_cfg,
                                       train_cfg.seed_model_b, epoch, threads);
        predict_into(*model_b, train, preds_b, threads);
      }
    }
    preds_ready = true;

    if (train_cfg.record_confidence) {
      double sum_pos = 0.0, sum_neg = 0.0;
      size_t n_pos = 0, n_neg = 0;
      for (size_t i = 0; i < train.size(); ++i) {
        double p1 = cotrain ? 0.5 * (preds_a[i] + preds_b[i]) : preds_a[i];
        if (train.noisy_label[i] == 1) {
          sum_pos += p1;
          ++n_pos;
        } else {
          sum_neg += 1.0 - p1;
          ++n_neg;
        }
      }
      stats.mean_conf_pos = n_pos ? sum_pos / static_cast<double>(n_pos) : 0.0;
      stats.mean_conf_neg = n_neg ? sum_neg / static_cast<double>(n_neg) : 0.0;
    }

    const ModelState* ens_b =
        (cotrain && train_cfg.early_stop_on_ensemble) ? &*model_b : nullptr;
    std::vector<double> val_scores = score_repertoires(model_a, ens_b, validation, threads);
    stats.val_auc = roc_auc(val_scores, val_labels);
    result.history.push_back(stats);
    if (observer) observer(epoch, table_a, cotrain ? &table_b : nullptr);

    // Checkpoint prefers the newest epoch among validation ties (training
    // keeps sharpening sequence scores after repertoire AUC saturates);
    // patience counts epochs since the last strict improvement.
    if (result.best_epoch < 0 || stats.val_auc > result.best_val_auc) {
      result.best_val_auc = stats.val_auc;
      result.best_epoch = epoch;
      last_strict_improvement = epoch;
      result.model_a = model_a;
      if (cotrain) result.model_b = *model_b;
    } else if (stats.val_auc == result.best_val_auc) {
      result.best_epoch = epoch;
      result.model_a = model_a;
      if (cotrain) result.model_b = *model_b;
    }
    if (epoch - last_strict_improvement >= train_cfg.patience) break;
  }
  return result;
}

std::vector<double> ensemble_proba(const ModelState& a, const ModelState& b,
                                   std::span<const SequenceRecord> records, int n_threads) {
  if (!(a.config == b.config))
    throw std::invalid_argument("ensemble_proba: peer models have different configs");
  std::vector<double> pa = predict_proba(a, records, n_threads);
  std::vector<double> pb = predict_proba(b, records, n_threads);
  for (size_t i = 0; i < pa.size(); ++i) pa[i] = 0.5 * (pa[i] + pb[i]);
  return pa;
}

double score_repertoire(const ModelState& a, const ModelState* b, const Repertoire& rep,
                        int n_threads) {
  if (rep.sequences.empty())
    throw std::invalid_argument("score_repertoire: repertoire '" + rep.id + "' is empty");
  std::vector<double> f = b ? ensemble_proba(a, *b, rep.sequences, n_threads)
                            : predict_proba(a, rep.sequences, n_threads);
  double score = 0.0;
  for (size_t i = 0; i < rep.sequences.size(); ++i) score += rep.sequences[i].frequency * f[i];
  return score;
}

std::vector<double> score_repertoires(const ModelState& a, const ModelState* b,
                                      std::span<const Repertoire> reps, int n_threads) {
  std::vector<double> scores(reps.size());
  for (size_t i = 0; i < reps.size(); ++i) scores[i] = score_repertoire(a, b, reps[i], n_threads);
  return scores;
}

}  // namespace replik
