#pragma once
// Seeded generator of synthetic repertoire datasets with hidden per-sequence
// ground truth, controllable witness rate, and asymmetric label noise.

#include <cstdint>
#include <string>
#include <vector>

#include "replik/core.hpp"

namespace replik {

struct SynthConfig {
  int n_pos_bags = 100;
  int n_neg_bags = 100;
  int seqs_per_bag = 200;
  int len_min = 10;
  int len_max = 18;
  // Patterns whose presence as a substring defines "disease-associated".
  std::vector<std::string> motifs;
  // Optional decoy patterns implanted into every non-associated sequence;
  // used to build class-symmetric control datasets. Empty = plain background.
  std::vector<std::string> neg_motifs;
  double witness_rate_pos = 0.04;        // in (0, 1]
  double contamination_rate_neg = 0.005; // in [0, 1), < witness_rate_pos
  double freq_law = 1.0;                 // Zipf exponent of clone sizes
  double assoc_freq_multiplier = 1.0;    // frequency boost for associated clones
  bool correlate_v_gene = false;         // associated clones all get V gene 1
  int n_v_genes = 20;
  int n_j_genes = 12;
  uint64_t seed = 1;
};

void validate(const SynthConfig& cfg);  // throws std::invalid_argument

struct SynthDataset {
  std::vector<Repertoire> repertoires;
  // truth[bag][row] == 1 iff the sequence contains a configured motif.
  std::vector<std::vector<uint8_t>> truth;
  GeneVocab vocab;

  // Ground truth aligned with flatten_to_instances(repertoires).
  std::vector<uint8_t> flat_truth() const;
  // All motif-bearing cdr3 strings; evaluation-side stand-in for a curated
  // association list.
  KnownAssociationSet known_set() const;
};

// Deterministic in cfg.seed; per-bag RNG streams, so bag content does not
// depend on generation order.
SynthDataset generate(const SynthConfig& cfg);

struct NoiseProfile {
  size_t false_positives = 0;  // noisy 1, true 0
  size_t false_negatives = 0;  // noisy 0, true 1
  size_t true_positives = 0;
  size_t true_negatives = 0;
  size_t total() const {
    return false_positives + false_negatives + true_positives + true_negatives;
  }
};

NoiseProfile noise_profile(const SynthDataset& ds);

}  // namespace replik
