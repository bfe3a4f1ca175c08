#include "replik/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "replik/util.hpp"

namespace replik {

namespace {

std::array<int, 256> build_aa_table() {
  std::array<int, 256> t{};
  t.fill(-1);
  for (size_t i = 0; i < kAminoAcids.size(); ++i)
    t[static_cast<unsigned char>(kAminoAcids[i])] = static_cast<int>(i);
  return t;
}

const std::array<int, 256> kAaTable = build_aa_table();

}  // namespace

int aa_index(char c) { return kAaTable[static_cast<unsigned char>(c)]; }

bool valid_cdr3(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return aa_index(c) >= 0; });
}

GeneVocab::GeneVocab() {
  for (Table* t : {&v_, &d_, &j_}) {
    t->names.emplace_back("");
    t->index.emplace("", 0);
  }
}

GeneVocab::Table& GeneVocab::table(Family f) {
  switch (f) {
    case Family::V: return v_;
    case Family::D: return d_;
    default: return j_;
  }
}

const GeneVocab::Table& GeneVocab::table(Family f) const {
  return const_cast<GeneVocab*>(this)->table(f);
}

int GeneVocab::intern(Family f, const std::string& name) {
  Table& t = table(f);
  auto it = t.index.find(name);
  if (it != t.index.end()) return it->second;
  int id = static_cast<int>(t.names.size());
  t.names.push_back(name);
  t.index.emplace(name, id);
  return id;
}

int GeneVocab::lookup(Family f, std::string_view name) const {
  const Table& t = table(f);
  auto it = t.index.find(std::string(name));
  return it == t.index.end() ? 0 : it->second;
}

const std::string& GeneVocab::name(Family f, int id) const {
  const Table& t = table(f);
  if (id < 0 || id >= static_cast<int>(t.names.size()))
    throw std::invalid_argument("GeneVocab::name: id out of range");
  return t.names[static_cast<size_t>(id)];
}

int GeneVocab::size(Family f) const { return static_cast<int>(table(f).names.size()); }

void validate_record(const SequenceRecord& rec, const GeneVocab* vocab) {
  if (!valid_cdr3(rec.cdr3))
    throw std::invalid_argument("invalid cdr3 '" + rec.cdr3 + "': must be non-empty over " +
                                std::string(kAminoAcids));
  if (!(rec.frequency >= 0.0 && rec.frequency <= 1.0))
    throw std::invalid_argument("frequency " + format_double(rec.frequency) + " for '" +
                                rec.cdr3 + "' outside [0, 1]");
  if (rec.v_gene < 0 || rec.d_gene < 0 || rec.j_gene < 0)
    throw std::invalid_argument("negative gene id for '" + rec.cdr3 + "'");
  if (vocab) {
    if (rec.v_gene >= vocab->size(GeneVocab::Family::V) ||
        rec.d_gene >= vocab->size(GeneVocab::Family::D) ||
        rec.j_gene >= vocab->size(GeneVocab::Family::J))
      throw std::invalid_argument("gene id out of vocabulary for '" + rec.cdr3 + "'");
  }
}

void validate_repertoire(const Repertoire& rep, const GeneVocab* vocab) {
  if (rep.sequences.empty())
    throw std::invalid_argument("repertoire '" + rep.id + "' has no sequences");
  if (rep.label && *rep.label != 0 && *rep.label != 1)
    throw std::invalid_argument("repertoire '" + rep.id + "' has non-binary label");
  double mass = 0.0;
  std::unordered_set<std::string> seen;
  seen.reserve(rep.sequences.size());
  for (const auto& rec : rep.sequences) {
    validate_record(rec, vocab);
    mass += rec.frequency;
    std::string key = rec.cdr3 + '\t' + std::to_string(rec.v_gene) + '\t' +
                      std::to_string(rec.d_gene) + '\t' + std::to_string(rec.j_gene);
    if (!seen.insert(std::move(key)).second)
      throw std::invalid_argument("repertoire '" + rep.id + "' has duplicate row for '" +
                                  rec.cdr3 + "'");
  }
  if (mass > 1.0 + 1e-6)
    throw std::invalid_argument("repertoire '" + rep.id + "' frequency mass " +
                                format_double(mass) + " exceeds 1");
}

InstanceDataset flatten_to_instances(std::span<const Repertoire> repertoires) {
  InstanceDataset ds;
  size_t total = 0;
  for (const auto& rep : repertoires) total += rep.sequences.size();
  ds.features.reserve(total);
  ds.noisy_label.reserve(total);
  ds.bag_index.reserve(total);
  ds.bag_ids.reserve(repertoires.size());
  for (const auto& rep : repertoires) {
    if (!rep.label)
      throw std::invalid_argument("repertoire '" + rep.id + "' has no label; cannot flatten");
    if (rep.sequences.empty())
      throw std::invalid_argument("repertoire '" + rep.id + "' has no sequences");
    int bag = static_cast<int>(ds.bag_ids.size());
    ds.bag_ids.push_back(rep.id);
    for (const auto& rec : rep.sequences) {
      ds.features.push_back(rec);
      ds.noisy_label.push_back(*rep.label);
      ds.bag_index.push_back(bag);
    }
  }
  return ds;
}

FoldSplit kfold_split(std::vector<std::string> ids, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (static_cast<size_t>(k) > ids.size())
    throw std::invalid_argument("kfold_split: k exceeds number of repertoires");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("kfold_split: repertoire ids are not unique");
  Rng rng(seed);
  rng.shuffle(ids);
  FoldSplit split;
  split.k = k;
  split.folds.resize(static_cast<size_t>(k));
  for (size_t i = 0; i < ids.size(); ++i) {
    int fold = static_cast<int>(i % static_cast<size_t>(k));
    split.fold_of.emplace(ids[i], fold);
    split.folds[static_cast<size_t>(fold)].push_back(std::move(ids[i]));
  }
  return split;
}

Repertoire subsample_top_frequency(const Repertoire& rep, double fraction, bool renormalize) {
  if (rep.sequences.empty())
    throw std::invalid_argument("subsample_top_frequency: repertoire '" + rep.id + "' is empty");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample_top_frequency: fraction must be in (0, 1]");
  size_t m = rep.sequences.size();
  size_t keep = std::max<size_t>(1, static_cast<size_t>(std::floor(fraction * static_cast<double>(m))));
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto& ra = rep.sequences[a];
    const auto& rb = rep.sequences[b];
    if (ra.frequency != rb.frequency) return ra.frequency > rb.frequency;
    if (ra.cdr3 != rb.cdr3) return ra.cdr3 < rb.cdr3;
    return a < b;
  });
  std::vector<char> kept(m, 0);
  for (size_t i = 0; i < keep; ++i) kept[order[i]] = 1;
  Repertoire out;
  out.id = rep.id;
  out.label = rep.label;
  out.sequences.reserve(keep);
  double mass = 0.0;
  for (size_t i = 0; i < m; ++i) {
    if (!kept[i]) continue;
    out.sequences.push_back(rep.sequences[i]);
    mass += rep.sequences[i].frequency;
  }
  if (renormalize && mass > 0.0)
    for (auto& rec : out.sequences) rec.frequency /= mass;
  return out;
}

void KnownAssociationSet::insert(std::string cdr3, std::string v_name) {
  cdr3_any_.insert(cdr3);
  if (v_name.empty()) {
    cdr3_only_.insert(std::move(cdr3));
  } else {
    with_v_ = true;
    cdr3_v_.insert(cdr3 + '\t' + v_name);
  }
}

bool KnownAssociationSet::contains(std::string_view cdr3) const {
  return cdr3_any_.count(std::string(cdr3)) > 0;
}

bool KnownAssociationSet::contains(std::string_view cdr3, std::string_view v_name) const {
  std::string key(cdr3);
  if (cdr3_only_.count(key) > 0) return true;
  key += '\t';
  key += v_name;
  return cdr3_v_.count(key) > 0;
}

}  // namespace replik
