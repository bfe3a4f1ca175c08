#pragma once
// Domain types shared by all modules: sequences, repertoires, flattened
// instance datasets, fold splits, gene vocabularies, and the evaluation-only
// known-association set.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace replik {

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kAaAlphabetSize = 20;

// Index of c in the amino-acid alphabet, or -1.
int aa_index(char c);
bool valid_cdr3(std::string_view s);

// Per-dataset gene-name interning. Id 0 is reserved for "missing"/unknown in
// every family; ids are dense and stable in first-appearance order.
class GeneVocab {
 public:
  enum class Family { V, D, J };

  GeneVocab();

  int intern(Family f, const std::string& name);      // "" maps to 0
  int lookup(Family f, std::string_view name) const;  // 0 if unknown
  const std::string& name(Family f, int id) const;
  int size(Family f) const;  // includes the missing slot

 private:
  struct Table {
    std::vector<std::string> names;
    std::unordered_map<std::string, int> index;
  };
  Table& table(Family f);
  const Table& table(Family f) const;
  Table v_, d_, j_;
};

struct SequenceRecord {
  std::string cdr3;
  int v_gene = 0;
  int d_gene = 0;  // 0 = missing (common for TCRbeta exports)
  int j_gene = 0;
  double frequency = 0.0;

  bool operator==(const SequenceRecord&) const = default;
};

struct Repertoire {
  std::string id;
  std::optional<int> label;  // 0/1 when known
  std::vector<SequenceRecord> sequences;

  bool operator==(const Repertoire&) const = default;
};

// Throw std::invalid_argument with an identifying message on violation.
void validate_record(const SequenceRecord& rec, const GeneVocab* vocab = nullptr);
// Checks record validity, non-emptiness, frequency mass <= 1 + 1e-6 and
// rejects exact duplicate (cdr3, v, d, j) rows.
void validate_repertoire(const Repertoire& rep, const GeneVocab* vocab = nullptr);

// One row per sequence; instance_index is the position (dense 0..n-1).
struct InstanceDataset {
  std::vector<SequenceRecord> features;
  std::vector<int> noisy_label;
  std::vector<int> bag_index;        // into bag_ids
  std::vector<std::string> bag_ids;  // one entry per source repertoire

  size_t size() const { return features.size(); }
  const std::string& bag_id(size_t i) const { return bag_ids[static_cast<size_t>(bag_index[i])]; }
};

// Copies every repertoire's label onto its sequences. Repertoires must be
// labeled and non-empty.
InstanceDataset flatten_to_instances(std::span<const Repertoire> repertoires);

struct FoldSplit {
  int k = 0;
  std::map<std::string, int> fold_of;
  std::vector<std::vector<std::string>> folds;
};

// Deterministic given (ids, k, seed); insensitive to input order; fold sizes
// differ by at most one.
FoldSplit kfold_split(std::vector<std::string> ids, int k, uint64_t seed);

// Keeps the max(1, floor(fraction * M)) highest-frequency sequences, ties
// broken toward the lexicographically smaller cdr3. Frequencies are left
// untouched unless renormalize is set.
Repertoire subsample_top_frequency(const Repertoire& rep, double fraction,
                                   bool renormalize = false);

// Disease-associated sequences known from prior studies. Evaluation-only by
// interface design: no training entry point accepts this type.
class KnownAssociationSet {
 public:
  void insert(std::string cdr3, std::string v_name = "");
  bool contains(std::string_view cdr3) const;
  bool contains(std::string_view cdr3, std::string_view v_name) const;
  bool carries_v() const { return with_v_; }
  size_t size() const { return cdr3_only_.size() + cdr3_v_.size(); }
  bool empty() const { return size() == 0; }

 private:
  bool with_v_ = false;
  std::unordered_set<std::string> cdr3_only_;
  std::unordered_set<std::string> cdr3_v_;  // "cdr3\tv"
  std::unordered_set<std::string> cdr3_any_;
};

}  // namespace replik
