#pragma once
// Delimited-file ingestion and emission: repertoire TSVs, dataset manifests,
// gene vocabularies, ground-truth sidecars, and known-association lists.
//
// On-disk layout of a dataset directory:
//   manifest.json      points at everything below (paths relative to it)
//   metadata.tsv       repertoire_id <tab> label <tab> file
//   rep_*.tsv          cdr3, v_gene, d_gene, j_gene, frequency (header row)
//   gene_vocab.json    {"v": [names...], "d": [...], "j": [...]}, index == id
//   ground_truth.tsv   instance_key <tab> y   (optional; key = "<rep_id>:<row>")

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "replik/core.hpp"

namespace replik {

struct ColumnMap {
  std::string cdr3 = "cdr3";
  std::string v_gene = "v_gene";
  std::string d_gene = "d_gene";  // empty string disables the column
  std::string j_gene = "j_gene";
  std::string frequency = "frequency";
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding the files below
  std::filesystem::path metadata;
  ColumnMap columns;
  std::string label_column = "label";
  std::optional<std::filesystem::path> ground_truth;
  std::optional<std::filesystem::path> gene_vocab;
};

// Reads manifest.json and checks every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

struct LoadResult {
  std::vector<Repertoire> repertoires;
  GeneVocab vocab;
  size_t skipped_rows = 0;
  std::vector<std::string> warnings;  // capped; one entry per skipped row kind
};

// Parses every repertoire listed in the metadata file, in metadata order.
// Rows violating SequenceRecord invariants (or duplicating an earlier row)
// are skipped and counted. With fixed_vocab (or a manifest-provided
// vocabulary) gene names map through it, unknown names to id 0; otherwise
// names are interned in file order.
LoadResult load_repertoires(const DatasetManifest& manifest,
                            const GeneVocab* fixed_vocab = nullptr);

// Parses one sequence TSV outside any manifest (inference input). Gene names
// map through the given vocabulary, unknown names to the missing id.
Repertoire load_repertoire_tsv(const std::filesystem::path& path, const ColumnMap& columns,
                               const GeneVocab& vocab, size_t* skipped_rows = nullptr);

// Ground truth aligned with flatten_to_instances(repertoires); errors if the
// sidecar does not cover exactly the loaded instances.
std::vector<uint8_t> load_ground_truth(const DatasetManifest& manifest,
                                       std::span<const Repertoire> repertoires);

// One cdr3 per line, optionally "<tab>v_gene_name". Duplicates collapse;
// empty file is an error.
KnownAssociationSet load_known_set(const std::filesystem::path& path);

// Writes the full dataset directory (see layout above) and returns the
// manifest. truth, when given, must align with flatten_to_instances order.
DatasetManifest write_repertoires(std::span<const Repertoire> repertoires,
                                  const GeneVocab& vocab,
                                  const std::filesystem::path& dir,
                                  std::span<const uint8_t> truth = {});

void save_gene_vocab(const GeneVocab& vocab, const std::filesystem::path& path);
GeneVocab load_gene_vocab(const std::filesystem::path& path);

}  // namespace replik
