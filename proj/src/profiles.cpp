#include "replik/profiles.hpp"

#include <algorithm>
#include <stdexcept>

namespace replik {

ModelConfig cmv_model_base() {
  ModelConfig cfg;
  cfg.token_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.dropout = 0.0;
  return cfg;
}

TrainConfig cmv_train_profile() {
  TrainConfig cfg;
  cfg.alpha = 0.99;
  cfg.beta = 0.7;
  cfg.warmup_epochs = 15;
  cfg.max_epochs = 60;
  cfg.patience = 10;
  cfg.batch_size = 256;
  cfg.lr = 0.005;
  return cfg;
}

ModelConfig cancer_model_base() {
  ModelConfig cfg;
  cfg.token_dim = 192;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.dropout = 0.1;
  return cfg;
}

TrainConfig cancer_train_profile() {
  TrainConfig cfg;
  cfg.alpha = 0.95;
  cfg.beta = 0.4;
  cfg.warmup_epochs = 8;
  cfg.max_epochs = 60;
  cfg.patience = 10;
  cfg.batch_size = 256;
  cfg.lr = 0.0005;
  return cfg;
}

ModelConfig synth_model_base() {
  ModelConfig cfg;
  cfg.token_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.dropout = 0.0;
  return cfg;
}

TrainConfig synth_train_profile() {
  TrainConfig cfg;
  cfg.alpha = 0.9;
  cfg.beta = 0.7;
  cfg.warmup_epochs = 4;
  cfg.max_epochs = 24;
  cfg.patience = 6;
  cfg.batch_size = 256;
  cfg.lr = 0.005;
  return cfg;
}

SynthConfig benchmark_config() {
  SynthConfig cfg;
  cfg.n_pos_bags = 100;
  cfg.n_neg_bags = 100;
  cfg.seqs_per_bag = 200;
  cfg.len_min = 10;
  cfg.len_max = 18;
  cfg.motifs = {"WQKF", "NDRG", "YHPM"};
  cfg.witness_rate_pos = 0.04;
  cfg.contamination_rate_neg = 0.005;
  cfg.freq_law = 1.0;
  cfg.n_v_genes = 20;
  cfg.n_j_genes = 12;
  cfg.seed = 2024;
  return cfg;
}

SynthConfig symmetric_control_config(uint64_t seed) {
  SynthConfig cfg = benchmark_config();
  cfg.motifs = {"WQKF", "NDRG", "YHPM"};
  cfg.neg_motifs = {"CETA", "LSVI", "RGHW"};
  cfg.witness_rate_pos = 1.0;
  cfg.contamination_rate_neg = 0.0;
  cfg.seed = seed;
  return cfg;
}

ModelConfig resolve_model_config(ModelConfig base, std::span<const Repertoire> repertoires,
                                 const GeneVocab& vocab) {
  base.v_vocab = vocab.size(GeneVocab::Family::V);
  base.d_vocab = vocab.size(GeneVocab::Family::D);
  base.j_vocab = vocab.size(GeneVocab::Family::J);
  int longest = 0;
  for (const auto& rep : repertoires)
    for (const auto& rec : rep.sequences)
      longest = std::max(longest, static_cast<int>(rec.cdr3.size()));
  if (longest == 0) throw std::invalid_argument("resolve_model_config: dataset has no sequences");
  base.max_cdr3_len = std::max(base.max_cdr3_len, longest);
  return base;
}

}  // namespace replik
