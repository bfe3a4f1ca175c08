// replik: repertoire-level weak supervision for sequence-level TCR
// classification. Subcommands: synth, train, eval, predict, cv, ablate.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <optional>
#include <sstream>

#include "replik/checkpoint.hpp"
#include "replik/core.hpp"
#include "replik/evalx.hpp"
#include "replik/ingest.hpp"
#include "replik/kvconfig.hpp"
#include "replik/nn.hpp"
#include "replik/profiles.hpp"
#include "replik/robust.hpp"
#include "replik/synth.hpp"
#include "replik/util.hpp"

namespace fs = std::filesystem;
using namespace replik;

namespace {

// Config / input problems exit with 2, failures during a run with 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string join_csv_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ',';
    out += item;
  }
  return out;
}

SynthConfig synth_from_kv(const KvConfig& kv) {
  SynthConfig cfg = benchmark_config();
  cfg.n_pos_bags = static_cast<int>(kv.get_int("n_pos_bags", cfg.n_pos_bags));
  cfg.n_neg_bags = static_cast<int>(kv.get_int("n_neg_bags", cfg.n_neg_bags));
  cfg.seqs_per_bag = static_cast<int>(kv.get_int("seqs_per_bag", cfg.seqs_per_bag));
  cfg.len_min = static_cast<int>(kv.get_int("len_min", cfg.len_min));
  cfg.len_max = static_cast<int>(kv.get_int("len_max", cfg.len_max));
  if (kv.has("motifs")) cfg.motifs = split_csv_list(kv.get_string("motifs", ""));
  if (kv.has("neg_motifs")) cfg.neg_motifs = split_csv_list(kv.get_string("neg_motifs", ""));
  cfg.witness_rate_pos = kv.get_double("witness_rate_pos", cfg.witness_rate_pos);
  cfg.contamination_rate_neg =
      kv.get_double("contamination_rate_neg", cfg.contamination_rate_neg);
  cfg.freq_law = kv.get_double("freq_law", cfg.freq_law);
  cfg.assoc_freq_multiplier = kv.get_double("assoc_freq_multiplier", cfg.assoc_freq_multiplier);
  cfg.correlate_v_gene = kv.get_bool("correlate_v_gene", cfg.correlate_v_gene);
  cfg.n_v_genes = static_cast<int>(kv.get_int("n_v_genes", cfg.n_v_genes));
  cfg.n_j_genes = static_cast<int>(kv.get_int("n_j_genes", cfg.n_j_genes));
  cfg.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(cfg.seed)));
  return cfg;
}

void synth_to_kv(const SynthConfig& cfg, KvConfig& kv) {
  kv.set("n_pos_bags", static_cast<int64_t>(cfg.n_pos_bags));
  kv.set("n_neg_bags", static_cast<int64_t>(cfg.n_neg_bags));
  kv.set("seqs_per_bag", static_cast<int64_t>(cfg.seqs_per_bag));
  kv.set("len_min", static_cast<int64_t>(cfg.len_min));
  kv.set("len_max", static_cast<int64_t>(cfg.len_max));
  kv.set("motifs", join_csv_list(cfg.motifs));
  kv.set("neg_motifs", join_csv_list(cfg.neg_motifs));
  kv.set("witness_rate_pos", cfg.witness_rate_pos);
  kv.set("contamination_rate_neg", cfg.contamination_rate_neg);
  kv.set("freq_law", cfg.freq_law);
  kv.set("assoc_freq_multiplier", cfg.assoc_freq_multiplier);
  kv.set("correlate_v_gene", cfg.correlate_v_gene);
  kv.set("n_v_genes", static_cast<int64_t>(cfg.n_v_genes));
  kv.set("n_j_genes", static_cast<int64_t>(cfg.n_j_genes));
  kv.set("seed", static_cast<int64_t>(cfg.seed));
}

struct Profiles {
  ModelConfig model;
  TrainConfig train;
};

Profiles profile_defaults(const std::string& name) {
  if (name == "cmv") return {cmv_model_base(), cmv_train_profile()};
  if (name == "cancer") return {cancer_model_base(), cancer_train_profile()};
  if (name == "synth" || name == "custom") return {synth_model_base(), synth_train_profile()};
  throw UsageError("unknown profile '" + name + "' (expected cmv, cancer, synth, or custom)");
}

ModelConfig model_from_kv(const KvConfig& kv, ModelConfig cfg) {
  cfg.token_dim = static_cast<int>(kv.get_int("token_dim", cfg.token_dim));
  cfg.n_layers = static_cast<int>(kv.get_int("n_layers", cfg.n_layers));
  cfg.n_heads = static_cast<int>(kv.get_int("n_heads", cfg.n_heads));
  cfg.dropout = kv.get_double("dropout", cfg.dropout);
  cfg.max_cdr3_len = static_cast<int>(kv.get_int("max_cdr3_len", cfg.max_cdr3_len));
  cfg.ffn_mult = kv.get_double("ffn_mult", cfg.ffn_mult);
  return cfg;
}

TrainConfig train_from_kv(const KvConfig& kv, TrainConfig cfg) {
  cfg.alpha = kv.get_double("alpha", cfg.alpha);
  cfg.beta = kv.get_double("beta", cfg.beta);
  cfg.warmup_epochs = static_cast<int>(kv.get_int("warmup_epochs", cfg.warmup_epochs));
  cfg.max_epochs = static_cast<int>(kv.get_int("max_epochs", cfg.max_epochs));
  cfg.patience = static_cast<int>(kv.get_int("patience", cfg.patience));
  cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
  cfg.lr = kv.get_double("lr", cfg.lr);
  cfg.adam_beta1 = kv.get_double("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = kv.get_double("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = kv.get_double("adam_eps", cfg.adam_eps);
  cfg.eps_log = kv.get_double("eps_log", cfg.eps_log);
  cfg.asa_enabled = kv.get_bool("asa_enabled", cfg.asa_enabled);
  cfg.cotrain_enabled = kv.get_bool("cotrain_enabled", cfg.cotrain_enabled);
  cfg.ema_positives_only = kv.get_bool("ema_positives_only", cfg.ema_positives_only);
  cfg.train_on_own_table = kv.get_bool("train_on_own_table", cfg.train_on_own_table);
  cfg.early_stop_on_ensemble = kv.get_bool("early_stop_on_ensemble", cfg.early_stop_on_ensemble);
  cfg.record_confidence = kv.get_bool("record_confidence", cfg.record_confidence);
  cfg.parallel_peers = kv.get_bool("parallel_peers", cfg.parallel_peers);
  cfg.seed_model_a = static_cast<uint64_t>(kv.get_int("seed_model_a", static_cast<int64_t>(cfg.seed_model_a)));
  cfg.seed_model_b = static_cast<uint64_t>(kv.get_int("seed_model_b", static_cast<int64_t>(cfg.seed_model_b)));
  cfg.seed_data = static_cast<uint64_t>(kv.get_int("seed_data", static_cast<int64_t>(cfg.seed_data)));
  return cfg;
}

void model_to_kv(const ModelConfig& cfg, KvConfig& kv) {
  kv.set("token_dim", static_cast<int64_t>(cfg.token_dim));
  kv.set("n_layers", static_cast<int64_t>(cfg.n_layers));
  kv.set("n_heads", static_cast<int64_t>(cfg.n_heads));
  kv.set("dropout", cfg.dropout);
  kv.set("max_cdr3_len", static_cast<int64_t>(cfg.max_cdr3_len));
  kv.set("ffn_mult", cfg.ffn_mult);
}

void train_to_kv(const TrainConfig& cfg, KvConfig& kv) {
  kv.set("alpha", cfg.alpha);
  kv.set("beta", cfg.beta);
  kv.set("warmup_epochs", static_cast<int64_t>(cfg.warmup_epochs));
  kv.set("max_epochs", static_cast<int64_t>(cfg.max_epochs));
  kv.set("patience", static_cast<int64_t>(cfg.patience));
  kv.set("batch_size", static_cast<int64_t>(cfg.batch_size));
  kv.set("lr", cfg.lr);
  kv.set("adam_beta1", cfg.adam_beta1);
  kv.set("adam_beta2", cfg.adam_beta2);
  kv.set("adam_eps", cfg.adam_eps);
  kv.set("eps_log", cfg.eps_log);
  kv.set("asa_enabled", cfg.asa_enabled);
  kv.set("cotrain_enabled", cfg.cotrain_enabled);
  kv.set("ema_positives_only", cfg.ema_positives_only);
  kv.set("train_on_own_table", cfg.train_on_own_table);
  kv.set("early_stop_on_ensemble", cfg.early_stop_on_ensemble);
  kv.set("record_confidence", cfg.record_confidence);
  kv.set("parallel_peers", cfg.parallel_peers);
  kv.set("seed_model_a", static_cast<int64_t>(cfg.seed_model_a));
  kv.set("seed_model_b", static_cast<int64_t>(cfg.seed_model_b));
  kv.set("seed_data", static_cast<int64_t>(cfg.seed_data));
}

// Options shared by train / cv / ablate.
struct RunOptions {
  std::string data;
  std::string config_file;
  std::string profile = "synth";
  std::string known_file;
  bool known_from_truth = false;
  std::string out = "out";
  double subsample = 1.0;
  double val_fraction = 0.2;
  int k = 5;
  uint64_t split_seed = 9;
  std::optional<uint64_t> seed;
  std::optional<double> alpha, beta, lr, dropout;
  std::optional<int> warmup, max_epochs, patience, batch_size, token_dim, n_layers, n_heads;
  bool no_asa = false;
  bool no_cotrain = false;
  int threads = 0;
};

void add_run_options(CLI::App* cmd, RunOptions& opt, bool with_data = true) {
  if (with_data)
    cmd->add_option("--data", opt.data, "dataset manifest.json")->required();
  cmd->add_option("--config", opt.config_file, "key=value config file");
  cmd->add_option("--profile", opt.profile, "cmv|cancer|synth|custom (default synth)");
  cmd->add_option("--out", opt.out, "output directory");
  cmd->add_option("--known", opt.known_file, "known-association list for sequence-level eval");
  cmd->add_flag("--known-from-truth", opt.known_from_truth,
                "build the known set from the dataset's ground-truth sidecar");
  cmd->add_option("--subsample", opt.subsample,
                  "keep this fraction of top-frequency sequences per repertoire");
  cmd->add_option("--seed", opt.seed, "base seed for model init and data order");
  cmd->add_option("--split-seed", opt.split_seed, "fold split seed");
  cmd->add_option("--k", opt.k, "number of folds");
  cmd->add_option("--val-fraction", opt.val_fraction, "validation share for plain training");
  cmd->add_option("--alpha", opt.alpha, "EMA coefficient");
  cmd->add_option("--beta", opt.beta, "label smoothing");
  cmd->add_option("--warmup", opt.warmup, "warm-up epochs");
  cmd->add_option("--max-epochs", opt.max_epochs, "maximum epochs");
  cmd->add_option("--patience", opt.patience, "early-stopping patience");
  cmd->add_option("--batch-size", opt.batch_size, "batch size");
  cmd->add_option("--lr", opt.lr, "learning rate");
  cmd->add_option("--dropout", opt.dropout, "dropout rate");
  cmd->add_option("--token-dim", opt.token_dim, "token dimension");
  cmd->add_option("--n-layers", opt.n_layers, "transformer layers");
  cmd->add_option("--n-heads", opt.n_heads, "attention heads");
  cmd->add_flag("--no-asa", opt.no_asa, "disable asymmetric self-adaptive correction");
  cmd->add_flag("--no-cotrain", opt.no_cotrain, "disable co-training");
  cmd->add_option("--threads", opt.threads, "worker thread cap (or REPLIK_THREADS)");
}

struct ResolvedRun {
  ModelConfig model;
  TrainConfig train;
  KvConfig resolved;
};

ResolvedRun resolve_run(const RunOptions& opt) {
  Profiles base = profile_defaults(opt.profile);
  KvConfig kv;
  if (!opt.config_file.empty()) {
    try {
      kv = KvConfig::from_file(opt.config_file);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  ModelConfig model;
  TrainConfig train;
  try {
    model = model_from_kv(kv, base.model);
    train = train_from_kv(kv, base.train);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (opt.alpha) train.alpha = *opt.alpha;
  if (opt.beta) train.beta = *opt.beta;
  if (opt.warmup) train.warmup_epochs = *opt.warmup;
  if (opt.max_epochs) train.max_epochs = *opt.max_epochs;
  if (opt.patience) train.patience = *opt.patience;
  if (opt.batch_size) train.batch_size = *opt.batch_size;
  if (opt.lr) train.lr = *opt.lr;
  if (opt.dropout) model.dropout = *opt.dropout;
  if (opt.token_dim) model.token_dim = *opt.token_dim;
  if (opt.n_layers) model.n_layers = *opt.n_layers;
  if (opt.n_heads) model.n_heads = *opt.n_heads;
  if (opt.no_asa) train.asa_enabled = false;
  if (opt.no_cotrain) train.cotrain_enabled = false;
  if (opt.seed) {
    train.seed_model_a = derive_seed(*opt.seed, 1);
    train.seed_model_b = derive_seed(*opt.seed, 2);
    train.seed_data = derive_seed(*opt.seed, 3);
  }
  train.threads = opt.threads;

  ResolvedRun run;
  run.model = model;
  run.train = train;
  run.resolved.set("profile", opt.profile);
  model_to_kv(model, run.resolved);
  train_to_kv(train, run.resolved);
  run.resolved.set("subsample", opt.subsample);
  run.resolved.set("split_seed", static_cast<int64_t>(opt.split_seed));
  run.resolved.set("k", static_cast<int64_t>(opt.k));
  run.resolved.set("val_fraction", opt.val_fraction);
  return run;
}

struct LoadedData {
  std::vector<Repertoire> repertoires;
  GeneVocab vocab;
  std::optional<KnownAssociationSet> known;
};

LoadedData load_data(const RunOptions& opt) {
  LoadedData data;
  try {
    DatasetManifest manifest = load_manifest(opt.data);
    LoadResult loaded = load_repertoires(manifest);
    if (loaded.skipped_rows > 0)
      std::cerr << "warning: skipped " << loaded.skipped_rows << " malformed rows\n";
    data.repertoires = std::move(loaded.repertoires);
    data.vocab = std::move(loaded.vocab);
    if (opt.known_from_truth) {
      auto truth = load_ground_truth(manifest, data.repertoires);
      data.known = known_set_from_truth(data.repertoires, truth);
    } else if (!opt.known_file.empty()) {
      data.known = load_known_set(opt.known_file);
    }
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (opt.subsample < 1.0) {
    for (auto& rep : data.repertoires) rep = subsample_top_frequency(rep, opt.subsample);
  }
  return data;
}

int cmd_synth(const std::string& config_file, const std::string& out,
              std::optional<uint64_t> seed) {
  KvConfig kv;
  if (!config_file.empty()) {
    try {
      kv = KvConfig::from_file(config_file);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  SynthConfig cfg;
  try {
    cfg = synth_from_kv(kv);
    if (seed) cfg.seed = *seed;
    validate(cfg);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  SynthDataset ds = generate(cfg);
  fs::create_directories(out);
  std::vector<uint8_t> truth = ds.flat_truth();
  write_repertoires(ds.repertoires, ds.vocab, out, truth);
  KvConfig resolved;
  synth_to_kv(cfg, resolved);
  resolved.write(fs::path(out) / "resolved_config.txt");
  NoiseProfile np = noise_profile(ds);
  std::cout << "wrote " << ds.repertoires.size() << " repertoires ("
            << np.total() << " sequences) to " << out << "\n"
            << "noisy-label profile: " << np.false_positives << " false positives, "
            << np.false_negatives << " false negatives\n";
  return 0;
}

int cmd_train(const RunOptions& opt) {
  ResolvedRun run = resolve_run(opt);
  LoadedData data = load_data(opt);
  for (const auto& rep : data.repertoires)
    if (!rep.label) throw UsageError("repertoire '" + rep.id + "' has no label");

  // Seeded validation holdout by repertoire.
  std::vector<size_t> order(data.repertoires.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(opt.split_seed);
  rng.shuffle(order);
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(
                                         opt.val_fraction * static_cast<double>(order.size()))));
  if (n_val >= order.size()) throw UsageError("validation fraction leaves no training data");
  std::vector<Repertoire> val, train_reps;
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val : train_reps).push_back(data.repertoires[order[i]]);

  ModelConfig model_cfg = resolve_model_config(run.model, data.repertoires, data.vocab);
  InstanceDataset train = flatten_to_instances(train_reps);
  FitResult fitted = fit(train, val, model_cfg, run.train);

  fs::create_directories(opt.out);
  const ModelState* peer = fitted.model_b ? &*fitted.model_b : nullptr;
  std::vector<double> val_scores =
      score_repertoires(fitted.model_a, peer, val, thread_budget(opt.threads));
  std::vector<int> val_labels;
  for (const auto& rep : val) val_labels.push_back(*rep.label);
  double threshold = select_threshold(val_scores, val_labels);

  save_checkpoint(fitted.model_a, data.vocab, threshold, fs::path(opt.out) / "checkpoint_a.json");
  if (fitted.model_b)
    save_checkpoint(*fitted.model_b, data.vocab, threshold,
                    fs::path(opt.out) / "checkpoint_b.json");
  write_history_csv(fitted.history, fs::path(opt.out) / "history.csv");
  run.resolved.set("data", opt.data);
  run.resolved.write(fs::path(opt.out) / "resolved_config.txt");
  std::cout << "best epoch " << fitted.best_epoch << ", validation repertoire AUC "
            << format_double(fitted.best_val_auc) << ", threshold " << format_double(threshold)
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_a, const std::string& ckpt_b, const std::string& data,
             const std::string& known_file, bool known_from_truth,
             std::optional<double> threshold_override, const std::string& out, int threads) {
  Checkpoint a;
  std::optional<Checkpoint> b;
  RunOptions loader;
  loader.data = data;
  loader.known_file = known_file;
  loader.known_from_truth = known_from_truth;
  try {
    a = load_checkpoint(ckpt_a);
    if (!ckpt_b.empty()) {
      b = load_checkpoint(ckpt_b);
      if (!(b->state.config == a.state.config))
        throw std::runtime_error("checkpoints have different model configs");
    }
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  LoadedData data_loaded;
  try {
    DatasetManifest manifest = load_manifest(data);
    LoadResult loaded = load_repertoires(manifest, &a.vocab);
    data_loaded.repertoires = std::move(loaded.repertoires);
    data_loaded.vocab = a.vocab;
    if (known_from_truth) {
      auto truth = load_ground_truth(manifest, data_loaded.repertoires);
      data_loaded.known = known_set_from_truth(data_loaded.repertoires, truth);
    } else if (!known_file.empty()) {
      data_loaded.known = load_known_set(known_file);
    }
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  int n_threads = thread_budget(threads);
  const ModelState* peer = b ? &b->state : nullptr;
  std::vector<Repertoire> labeled;
  for (const auto& rep : data_loaded.repertoires)
    if (rep.label) labeled.push_back(rep);
  if (labeled.empty()) throw UsageError("dataset has no labeled repertoires to evaluate");

  std::vector<double> scores = score_repertoires(a.state, peer, labeled, n_threads);
  std::vector<int> labels;
  for (const auto& rep : labeled) labels.push_back(*rep.label);
  double threshold = threshold_override ? *threshold_override : a.threshold.value_or(0.5);

  fs::create_directories(out);
  nlohmann::json doc;
  doc["repertoire_auc"] = roc_auc(scores, labels);
  auto fa = f1_accuracy(scores, labels, threshold);
  doc["f1"] = fa.f1;
  doc["accuracy"] = fa.accuracy;
  doc["threshold"] = threshold;
  doc["n_repertoires"] = labeled.size();
  write_roc_csv(roc_points(scores, labels), fs::path(out) / "roc_points.csv");
  if (data_loaded.known) {
    SequenceEval seq = sequence_identification_eval(a.state, peer, labeled, *data_loaded.known,
                                                    &data_loaded.vocab, false, n_threads);
    doc["sequence_auc"] = seq.auc;
    doc["sequence_positives"] = seq.n_pos;
    doc["sequence_negatives"] = seq.n_neg;
    write_roc_csv(seq.roc, fs::path(out) / "seq_roc_points.csv");
  }
  std::ofstream report(fs::path(out) / "report.json", std::ios::binary);
  report << doc.dump(2) << '\n';
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_predict(const std::string& ckpt_a, const std::string& ckpt_b,
                const std::string& input, int threads) {
  Checkpoint a;
  std::optional<Checkpoint> b;
  Repertoire rep;
  try {
    a = load_checkpoint(ckpt_a);
    if (!ckpt_b.empty()) {
      b = load_checkpoint(ckpt_b);
      if (!(b->state.config == a.state.config))
        throw std::runtime_error("checkpoints have different model configs");
    }
    rep = load_repertoire_tsv(input, ColumnMap{}, a.vocab);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  int n_threads = thread_budget(threads);
  std::vector<double> f = b ? ensemble_proba(a.state, b->state, rep.sequences, n_threads)
                            : predict_proba(a.state, rep.sequences, n_threads);
  double score = 0.0;
  std::cout << "cdr3\tv_gene\td_gene\tj_gene\tfrequency\tscore\n";
  for (size_t i = 0; i < rep.sequences.size(); ++i) {
    const auto& rec = rep.sequences[i];
    score += rec.frequency * f[i];
    std::cout << rec.cdr3 << '\t' << a.vocab.name(GeneVocab::Family::V, rec.v_gene) << '\t'
              << a.vocab.name(GeneVocab::Family::D, rec.d_gene) << '\t'
              << a.vocab.name(GeneVocab::Family::J, rec.j_gene) << '\t'
              << format_double(rec.frequency) << '\t' << format_double(f[i]) << '\n';
  }
  std::cout << "repertoire_score = " << format_double(score) << '\n';
  return 0;
}

int cmd_cv(const RunOptions& opt) {
  ResolvedRun run = resolve_run(opt);
  LoadedData data = load_data(opt);
  ModelConfig model_cfg = resolve_model_config(run.model, data.repertoires, data.vocab);
  CvReport report =
      run_cv_experiment(data.repertoires, data.known ? &*data.known : nullptr, data.vocab,
                        model_cfg, run.train, opt.k, opt.split_seed);
  fs::create_directories(opt.out);
  write_report_json(report, fs::path(opt.out) / "report.json");
  for (const auto& fold : report.folds) {
    std::string tag = "_fold" + std::to_string(fold.fold);
    write_history_csv(fold.history, fs::path(opt.out) / ("history" + tag + ".csv"));
    write_roc_csv(fold.rep_roc, fs::path(opt.out) / ("rep_roc" + tag + ".csv"));
    if (!fold.seq_roc.empty())
      write_roc_csv(fold.seq_roc, fs::path(opt.out) / ("seq_roc" + tag + ".csv"));
  }
  run.resolved.set("data", opt.data);
  run.resolved.write(fs::path(opt.out) / "resolved_config.txt");
  std::cout << "repertoire AUC " << format_double(report.rep_auc.mean) << " +/- "
            << format_double(report.rep_auc.std);
  if (report.seq_auc)
    std::cout << ", sequence AUC " << format_double(report.seq_auc->mean) << " +/- "
              << format_double(report.seq_auc->std);
  std::cout << " over " << report.folds.size() << " folds\n";
  return 0;
}

int cmd_ablate(const RunOptions& opt, int n_seeds) {
  if (n_seeds < 2) throw UsageError("--seeds must be >= 2");
  ResolvedRun run = resolve_run(opt);
  LoadedData data = load_data(opt);
  ModelConfig model_cfg = resolve_model_config(run.model, data.repertoires, data.vocab);
  std::vector<uint64_t> seeds(static_cast<size_t>(n_seeds));
  std::iota(seeds.begin(), seeds.end(), uint64_t{0});
  AblationResult result =
      run_ablation(data.repertoires, data.known ? &*data.known : nullptr, data.vocab, model_cfg,
                   run.train, seeds, opt.k, opt.split_seed);
  fs::create_directories(opt.out);
  write_ablation_csv(result, fs::path(opt.out) / "ablation.csv");
  run.resolved.set("data", opt.data);
  run.resolved.set("n_seeds", static_cast<int64_t>(n_seeds));
  run.resolved.write(fs::path(opt.out) / "resolved_config.txt");
  for (const auto& row : result.rows) {
    std::cout << to_string(row.mode) << ": repertoire AUC " << format_double(row.rep_auc.mean)
              << " +/- " << format_double(row.rep_auc.std);
    if (row.seq_auc)
      std::cout << ", sequence AUC " << format_double(row.seq_auc->mean) << " +/- "
                << format_double(row.seq_auc->std);
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"replik: noisy-label sequence classification for immune repertoires"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
  std::string synth_config, synth_out = "synth_out";
  std::optional<uint64_t> synth_seed;
  synth->add_option("--config", synth_config, "key=value synth config");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "override the config seed");

  RunOptions train_opt;
  auto* train = app.add_subcommand("train", "train on a labeled dataset with a holdout");
  add_run_options(train, train_opt);

  auto* eval = app.add_subcommand("eval", "evaluate checkpoints on a dataset");
  std::string eval_ckpt_a, eval_ckpt_b, eval_data, eval_known, eval_out = "eval_out";
  bool eval_known_truth = false;
  std::optional<double> eval_threshold;
  int eval_threads = 0;
  eval->add_option("--checkpoint", eval_ckpt_a, "model A checkpoint")->required();
  eval->add_option("--checkpoint-b", eval_ckpt_b, "model B checkpoint (ensemble)");
  eval->add_option("--data", eval_data, "dataset manifest.json")->required();
  eval->add_option("--known", eval_known, "known-association list");
  eval->add_flag("--known-from-truth", eval_known_truth, "known set from ground-truth sidecar");
  eval->add_option("--threshold", eval_threshold, "override the stored decision threshold");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--threads", eval_threads, "worker thread cap");

  auto* predict = app.add_subcommand("predict", "score one repertoire TSV to stdout");
  std::string pred_ckpt_a, pred_ckpt_b, pred_input;
  int pred_threads = 0;
  predict->add_option("--checkpoint", pred_ckpt_a, "model A checkpoint")->required();
  predict->add_option("--checkpoint-b", pred_ckpt_b, "model B checkpoint (ensemble)");
  predict->add_option("--input", pred_input, "repertoire TSV")->required();
  predict->add_option("--threads", pred_threads, "worker thread cap");

  RunOptions cv_opt;
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation experiment");
  add_run_options(cv, cv_opt);

  RunOptions ablate_opt;
  int ablate_seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "ablation table over training modes");
  add_run_options(ablate, ablate_opt);
  ablate->add_option("--seeds", ablate_seeds, "number of seeds per mode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_config, synth_out, synth_seed);
    if (train->parsed()) return cmd_train(train_opt);
    if (eval->parsed())
      return cmd_eval(eval_ckpt_a, eval_ckpt_b, eval_data, eval_known, eval_known_truth,
                      eval_threshold, eval_out, eval_threads);
    if (predict->parsed()) return cmd_predict(pred_ckpt_a, pred_ckpt_b, pred_input, pred_threads);
    if (cv->parsed()) return cmd_cv(cv_opt);
    if (ablate->parsed()) return cmd_ablate(ablate_opt, ablate_seeds);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
