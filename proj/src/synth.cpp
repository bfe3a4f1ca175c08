#include "replik/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "replik/util.hpp"

namespace replik {

namespace {

bool contains_any(std::string_view s, const std::vector<std::string>& motifs) {
  for (const auto& m : motifs)
    if (s.find(m) != std::string_view::npos) return true;
  return false;
}

std::string random_background(Rng& rng, int len) {
  std::string s(static_cast<size_t>(len), 'A');
  for (auto& c : s) c = kAminoAcids[rng.next_below(kAaAlphabetSize)];
  return s;
}

std::string gene_name(const char* prefix, uint64_t id) {
  std::string s = prefix;
  if (id < 10) s += '0';
  s += std::to_string(id);
  return s;
}

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.n_pos_bags < 1 || cfg.n_neg_bags < 1)
    throw std::invalid_argument("synth: need at least one bag per class");
  if (cfg.seqs_per_bag < 1) throw std::invalid_argument("synth: seqs_per_bag must be >= 1");
  if (cfg.len_min < 1 || cfg.len_max < cfg.len_min)
    throw std::invalid_argument("synth: invalid sequence length range");
  if (cfg.motifs.empty()) throw std::invalid_argument("synth: motifs must be non-empty");
  for (const auto& family : {cfg.motifs, cfg.neg_motifs})
    for (const auto& m : family) {
      if (!valid_cdr3(m)) throw std::invalid_argument("synth: motif '" + m + "' is not a valid AA string");
      if (static_cast<int>(m.size()) > cfg.len_min)
        throw std::invalid_argument("synth: motif '" + m + "' longer than min sequence length");
    }
  if (!(cfg.witness_rate_pos > 0.0 && cfg.witness_rate_pos <= 1.0))
    throw std::invalid_argument("synth: witness_rate_pos must be in (0, 1]");
  if (!(cfg.contamination_rate_neg >= 0.0 && cfg.contamination_rate_neg < 1.0))
    throw std::invalid_argument("synth: contamination_rate_neg must be in [0, 1)");
  if (cfg.contamination_rate_neg >= cfg.witness_rate_pos)
    throw std::invalid_argument("synth: contamination_rate_neg must be < witness_rate_pos");
  if (cfg.freq_law < 0.0) throw std::invalid_argument("synth: freq_law must be >= 0");
  if (cfg.assoc_freq_multiplier <= 0.0)
    throw std::invalid_argument("synth: assoc_freq_multiplier must be > 0");
  if (cfg.n_v_genes < 1 || cfg.n_j_genes < 1)
    throw std::invalid_argument("synth: gene vocabulary sizes must be >= 1");
}

SynthDataset generate(const SynthConfig& cfg) {
  validate(cfg);
  SynthDataset ds;
  for (int g = 1; g <= cfg.n_v_genes; ++g)
    ds.vocab.intern(GeneVocab::Family::V, gene_name("SYNV", static_cast<uint64_t>(g)));
  for (int g = 1; g <= cfg.n_j_genes; ++g)
    ds.vocab.intern(GeneVocab::Family::J, gene_name("SYNJ", static_cast<uint64_t>(g)));

  int n_bags = cfg.n_pos_bags + cfg.n_neg_bags;
  ds.repertoires.resize(static_cast<size_t>(n_bags));
  ds.truth.resize(static_cast<size_t>(n_bags));

  for (int bag = 0; bag < n_bags; ++bag) {
    bool positive = bag < cfg.n_pos_bags;
    double rate = positive ? cfg.witness_rate_pos : cfg.contamination_rate_neg;
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(bag)));

    Repertoire rep;
    rep.id = (positive ? "SYNP" : "SYNN") + std::to_string(positive ? bag : bag - cfg.n_pos_bags);
    rep.label = positive ? 1 : 0;
    rep.sequences.resize(static_cast<size_t>(cfg.seqs_per_bag));
    auto& truth = ds.truth[static_cast<size_t>(bag)];
    truth.resize(static_cast<size_t>(cfg.seqs_per_bag));

    std::unordered_set<std::string> used;
    used.reserve(static_cast<size_t>(cfg.seqs_per_bag) * 2);
    std::vector<char> assoc(static_cast<size_t>(cfg.seqs_per_bag), 0);

    for (int s = 0; s < cfg.seqs_per_bag; ++s) {
      bool is_assoc = rng.next_double() < rate;
      assoc[static_cast<size_t>(s)] = is_assoc ? 1 : 0;
      std::string cdr3;
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
          throw std::runtime_error("synth: failed to generate a fresh sequence for bag " + rep.id);
        int len = cfg.len_min + static_cast<int>(rng.next_below(
                                    static_cast<uint64_t>(cfg.len_max - cfg.len_min) + 1));
        cdr3 = random_background(rng, len);
        if (is_assoc) {
          const std::string& motif = cfg.motifs[rng.next_below(cfg.motifs.size())];
          size_t offset = rng.next_below(cdr3.size() - motif.size() + 1);
          cdr3.replace(offset, motif.size(), motif);
        } else if (!cfg.neg_motifs.empty()) {
          const std::string& motif = cfg.neg_motifs[rng.next_below(cfg.neg_motifs.size())];
          size_t offset = rng.next_below(cdr3.size() - motif.size() + 1);
          cdr3.replace(offset, motif.size(), motif);
        }
        // Non-associated sequences must not carry a motif by accident, and
        // duplicate clones within a bag are regenerated.
        if (!is_assoc && contains_any(cdr3, cfg.motifs)) continue;
        if (used.count(cdr3)) continue;
        break;
      }
      used.insert(cdr3);
      auto& rec = rep.sequences[static_cast<size_t>(s)];
      rec.cdr3 = std::move(cdr3);
      rec.v_gene = (cfg.correlate_v_gene && is_assoc)
                       ? 1
                       : 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.n_v_genes)));
      rec.d_gene = 0;
      rec.j_gene = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.n_j_genes)));
      truth[static_cast<size_t>(s)] = contains_any(rec.cdr3, cfg.motifs) ? 1 : 0;
    }

    // Zipf clone-size law: rank r gets weight r^-freq_law, ranks randomly
    // assigned, associated clones scaled by the configured multiplier.
    std::vector<size_t> ranks(static_cast<size_t>(cfg.seqs_per_bag));
    std::iota(ranks.begin(), ranks.end(), 1);
    rng.shuffle(ranks);
    double mass = 0.0;
    std::vector<double> w(static_cast<size_t>(cfg.seqs_per_bag));
    for (int s = 0; s < cfg.seqs_per_bag; ++s) {
      double weight = std::pow(static_cast<double>(ranks[static_cast<size_t>(s)]), -cfg.freq_law);
      if (assoc[static_cast<size_t>(s)]) weight *= cfg.assoc_freq_multiplier;
      w[static_cast<size_t>(s)] = weight;
      mass += weight;
    }
    for (int s = 0; s < cfg.seqs_per_bag; ++s)
      rep.sequences[static_cast<size_t>(s)].frequency = w[static_cast<size_t>(s)] / mass;

    validate_repertoire(rep, &ds.vocab);
    ds.repertoires[static_cast<size_t>(bag)] = std::move(rep);
  }
  return ds;
}

std::vector<uint8_t> SynthDataset::flat_truth() const {
  std::vector<uint8_t> flat;
  size_t total = 0;
  for (const auto& t : truth) total += t.size();
  flat.reserve(total);
  for (const auto& t : truth) flat.insert(flat.end(), t.begin(), t.end());
  return flat;
}

KnownAssociationSet SynthDataset::known_set() const {
  KnownAssociationSet set;
  for (size_t b = 0; b < repertoires.size(); ++b)
    for (size_t s = 0; s < truth[b].size(); ++s)
      if (truth[b][s]) set.insert(repertoires[b].sequences[s].cdr3);
  return set;
}

NoiseProfile noise_profile(const SynthDataset& ds) {
  if (ds.truth.size() != ds.repertoires.size())
    throw std::invalid_argument("noise_profile: ground truth missing");
  NoiseProfile np;
  for (size_t b = 0; b < ds.repertoires.size(); ++b) {
    const auto& rep = ds.repertoires[b];
    if (!rep.label) throw std::invalid_argument("noise_profile: unlabeled repertoire " + rep.id);
    if (ds.truth[b].size() != rep.sequences.size())
      throw std::invalid_argument("noise_profile: truth misaligned for " + rep.id);
    for (uint8_t y : ds.truth[b]) {
      if (*rep.label == 1)
        ++(y ? np.true_positives : np.false_positives);
      else
        ++(y ? np.false_negatives : np.true_negatives);
    }
  }
  return np;
}

}  // namespace replik
