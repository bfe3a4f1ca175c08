#include "replik/ingest.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "replik/util.hpp"

namespace replik {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr size_t kMaxWarnings = 50;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Splits on '\n', tolerating a trailing '\r' per line and a missing final
// newline. Returns non-empty lines only at the caller's discretion.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t pos = text.find('\n', start);
    std::string_view line =
        pos == std::string_view::npos ? text.substr(start) : text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

void warn(LoadResult& result, std::string msg) {
  ++result.skipped_rows;
  if (result.warnings.size() < kMaxWarnings) result.warnings.push_back(std::move(msg));
}

int find_column(std::span<const std::string_view> header, const std::string& name,
                const fs::path& file) {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw std::runtime_error("file '" + file.string() + "' is missing mapped column '" + name + "'");
}

struct MetadataRow {
  std::string id;
  std::optional<int> label;
  fs::path file;
};

std::vector<MetadataRow> load_metadata(const DatasetManifest& manifest) {
  std::string text = read_file(manifest.metadata);
  auto lines = split_lines(text);
  if (lines.empty()) throw std::runtime_error("metadata file '" + manifest.metadata.string() + "' is empty");
  auto header = split_tab(lines[0]);
  int id_col = find_column(header, "repertoire_id", manifest.metadata);
  int label_col = find_column(header, manifest.label_column, manifest.metadata);
  int file_col = find_column(header, "file", manifest.metadata);
  std::vector<MetadataRow> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = split_tab(lines[i]);
    if (static_cast<int>(fields.size()) <= std::max({id_col, label_col, file_col}))
      throw std::runtime_error("metadata row " + std::to_string(i) + " has too few columns");
    MetadataRow row;
    row.id = std::string(fields[static_cast<size_t>(id_col)]);
    std::string_view label = fields[static_cast<size_t>(label_col)];
    if (!label.empty()) {
      auto v = parse_long(label);
      if (!v || (*v != 0 && *v != 1))
        throw std::runtime_error("metadata row for '" + row.id + "' has non-binary label '" +
                                 std::string(label) + "'");
      row.label = static_cast<int>(*v);
    }
    row.file = manifest.root / fs::path(std::string(fields[static_cast<size_t>(file_col)]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("metadata file lists no repertoires");
  return rows;
}

std::string sanitize_for_filename(const std::string& id) {
  std::string out;
  for (char c : id)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& manifest_path) {
  json doc = json::parse(read_file(manifest_path));
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  m.metadata = m.root / fs::path(doc.at("metadata").get<std::string>());
  if (doc.contains("columns")) {
    const auto& c = doc["columns"];
    if (c.contains("cdr3")) m.columns.cdr3 = c["cdr3"].get<std::string>();
    if (c.contains("v_gene")) m.columns.v_gene = c["v_gene"].get<std::string>();
    if (c.contains("d_gene")) m.columns.d_gene = c["d_gene"].get<std::string>();
    if (c.contains("j_gene")) m.columns.j_gene = c["j_gene"].get<std::string>();
    if (c.contains("frequency")) m.columns.frequency = c["frequency"].get<std::string>();
  }
  if (doc.contains("label_column")) m.label_column = doc["label_column"].get<std::string>();
  if (doc.contains("ground_truth"))
    m.ground_truth = m.root / fs::path(doc["ground_truth"].get<std::string>());
  if (doc.contains("gene_vocab"))
    m.gene_vocab = m.root / fs::path(doc["gene_vocab"].get<std::string>());

  if (!fs::exists(m.metadata))
    throw std::runtime_error("manifest references missing metadata file '" + m.metadata.string() + "'");
  if (m.ground_truth && !fs::exists(*m.ground_truth))
    throw std::runtime_error("manifest references missing ground truth '" + m.ground_truth->string() + "'");
  if (m.gene_vocab && !fs::exists(*m.gene_vocab))
    throw std::runtime_error("manifest references missing gene vocab '" + m.gene_vocab->string() + "'");
  for (const auto& row : load_metadata(m))
    if (!fs::exists(row.file))
      throw std::runtime_error("manifest references missing sequence file '" + row.file.string() + "'");
  return m;
}

namespace {

using GeneIdFn = std::function<int(GeneVocab::Family, std::string_view)>;

Repertoire parse_sequence_file(const fs::path& file, const std::string& id,
                               std::optional<int> label, const ColumnMap& cm,
                               const GeneIdFn& gene_id, LoadResult& result) {
  std::string text = read_file(file);
  auto lines = split_lines(text);
  if (lines.empty()) throw std::runtime_error("sequence file '" + file.string() + "' is empty");
  auto header = split_tab(lines[0]);
  int cdr3_col = find_column(header, cm.cdr3, file);
  int v_col = find_column(header, cm.v_gene, file);
  int d_col = cm.d_gene.empty() ? -1 : find_column(header, cm.d_gene, file);
  int j_col = find_column(header, cm.j_gene, file);
  int freq_col = find_column(header, cm.frequency, file);

  Repertoire rep;
  rep.id = id;
  rep.label = label;
  std::unordered_set<std::string> seen;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = split_tab(lines[i]);
    auto field = [&](int col) -> std::string_view {
      return col >= 0 && col < static_cast<int>(fields.size()) ? fields[static_cast<size_t>(col)]
                                                               : std::string_view{};
    };
    SequenceRecord rec;
    rec.cdr3 = std::string(field(cdr3_col));
    if (!valid_cdr3(rec.cdr3)) {
      warn(result, id + " row " + std::to_string(i) + ": invalid cdr3 '" + rec.cdr3 + "'");
      continue;
    }
    auto freq = parse_double(field(freq_col));
    if (!freq || !(*freq >= 0.0 && *freq <= 1.0)) {
      warn(result, id + " row " + std::to_string(i) + ": frequency '" +
                       std::string(field(freq_col)) + "' outside [0, 1]");
      continue;
    }
    rec.frequency = *freq;
    rec.v_gene = gene_id(GeneVocab::Family::V, field(v_col));
    rec.d_gene = d_col < 0 ? 0 : gene_id(GeneVocab::Family::D, field(d_col));
    rec.j_gene = gene_id(GeneVocab::Family::J, field(j_col));
    std::string key = rec.cdr3 + '\t' + std::to_string(rec.v_gene) + '\t' +
                      std::to_string(rec.d_gene) + '\t' + std::to_string(rec.j_gene);
    if (!seen.insert(std::move(key)).second) {
      warn(result, id + " row " + std::to_string(i) + ": duplicate of an earlier row");
      continue;
    }
    rep.sequences.push_back(std::move(rec));
  }
  return rep;
}

}  // namespace

LoadResult load_repertoires(const DatasetManifest& manifest, const GeneVocab* fixed_vocab) {
  LoadResult result;
  bool fixed = fixed_vocab != nullptr;
  if (fixed) {
    result.vocab = *fixed_vocab;
  } else if (manifest.gene_vocab) {
    result.vocab = load_gene_vocab(*manifest.gene_vocab);
    fixed = true;
  }
  GeneIdFn gene_id = [&result, fixed](GeneVocab::Family f, std::string_view name) {
    if (name.empty()) return 0;
    return fixed ? result.vocab.lookup(f, name) : result.vocab.intern(f, std::string(name));
  };
  for (const auto& meta : load_metadata(manifest)) {
    Repertoire rep =
        parse_sequence_file(meta.file, meta.id, meta.label, manifest.columns, gene_id, result);
    validate_repertoire(rep, &result.vocab);
    result.repertoires.push_back(std::move(rep));
  }
  return result;
}

Repertoire load_repertoire_tsv(const fs::path& path, const ColumnMap& columns,
                               const GeneVocab& vocab, size_t* skipped_rows) {
  LoadResult scratch;
  scratch.vocab = vocab;
  GeneIdFn gene_id = [&scratch](GeneVocab::Family f, std::string_view name) {
    return name.empty() ? 0 : scratch.vocab.lookup(f, name);
  };
  Repertoire rep = parse_sequence_file(path, path.stem().string(), std::nullopt, columns, gene_id,
                                       scratch);
  if (skipped_rows) *skipped_rows = scratch.skipped_rows;
  validate_repertoire(rep, &vocab);
  return rep;
}

std::vector<uint8_t> load_ground_truth(const DatasetManifest& manifest,
                                       std::span<const Repertoire> repertoires) {
  if (!manifest.ground_truth)
    throw std::runtime_error("dataset manifest carries no ground-truth sidecar");
  std::string text = read_file(*manifest.ground_truth);
  auto lines = split_lines(text);
  if (lines.size() < 2) throw std::runtime_error("ground-truth sidecar is empty");
  auto header = split_tab(lines[0]);
  int key_col = find_column(header, "instance_key", *manifest.ground_truth);
  int y_col = find_column(header, "y", *manifest.ground_truth);
  std::unordered_map<std::string, uint8_t> by_key;
  by_key.reserve(lines.size());
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = split_tab(lines[i]);
    auto y = parse_long(fields[static_cast<size_t>(y_col)]);
    if (!y || (*y != 0 && *y != 1))
      throw std::runtime_error("ground-truth row " + std::to_string(i) + " has non-binary y");
    by_key.emplace(std::string(fields[static_cast<size_t>(key_col)]), static_cast<uint8_t>(*y));
  }
  std::vector<uint8_t> truth;
  for (const auto& rep : repertoires) {
    for (size_t s = 0; s < rep.sequences.size(); ++s) {
      auto it = by_key.find(rep.id + ':' + std::to_string(s));
      if (it == by_key.end())
        throw std::runtime_error("ground truth missing instance '" + rep.id + ':' +
                                 std::to_string(s) + "'");
      truth.push_back(it->second);
    }
  }
  if (truth.size() != by_key.size())
    throw std::runtime_error("ground-truth sidecar covers instances not present in the dataset");
  return truth;
}

KnownAssociationSet load_known_set(const fs::path& path) {
  std::string text = read_file(path);
  auto lines = split_lines(text);
  KnownAssociationSet set;
  for (auto line : lines) {
    if (line.empty()) continue;
    auto fields = split_tab(line);
    std::string cdr3(fields[0]);
    if (!valid_cdr3(cdr3)) continue;
    set.insert(std::move(cdr3), fields.size() > 1 ? std::string(fields[1]) : std::string());
  }
  if (set.empty()) throw std::runtime_error("known-association file '" + path.string() + "' has no entries");
  return set;
}

void save_gene_vocab(const GeneVocab& vocab, const fs::path& path) {
  json doc;
  auto dump = [&](GeneVocab::Family f, const char* key) {
    json arr = json::array();
    for (int id = 0; id < vocab.size(f); ++id) arr.push_back(vocab.name(f, id));
    doc[key] = std::move(arr);
  };
  dump(GeneVocab::Family::V, "v");
  dump(GeneVocab::Family::D, "d");
  dump(GeneVocab::Family::J, "j");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

GeneVocab load_gene_vocab(const fs::path& path) {
  json doc = json::parse(read_file(path));
  GeneVocab vocab;
  auto fill = [&](GeneVocab::Family f, const char* key) {
    const auto& arr = doc.at(key);
    for (size_t i = 1; i < arr.size(); ++i) vocab.intern(f, arr[i].get<std::string>());
  };
  fill(GeneVocab::Family::V, "v");
  fill(GeneVocab::Family::D, "d");
  fill(GeneVocab::Family::J, "j");
  return vocab;
}

DatasetManifest write_repertoires(std::span<const Repertoire> repertoires,
                                  const GeneVocab& vocab, const fs::path& dir,
                                  std::span<const uint8_t> truth) {
  if (repertoires.empty()) throw std::invalid_argument("write_repertoires: no repertoires");
  size_t total = 0;
  for (const auto& rep : repertoires) total += rep.sequences.size();
  if (!truth.empty() && truth.size() != total)
    throw std::invalid_argument("write_repertoires: ground truth misaligned with instances");

  std::error_code ec;
  fs::create_directories(dir, ec);
  auto open = [&](const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
  };

  {
    auto meta = open(dir / "metadata.tsv");
    meta << "repertoire_id\tlabel\tfile\n";
    for (size_t r = 0; r < repertoires.size(); ++r) {
      const auto& rep = repertoires[r];
      std::string file = "rep_" + std::to_string(r) + '_' + sanitize_for_filename(rep.id) + ".tsv";
      meta << rep.id << '\t' << (rep.label ? std::to_string(*rep.label) : "") << '\t' << file
           << '\n';
      auto seq = open(dir / file);
      seq << "cdr3\tv_gene\td_gene\tj_gene\tfrequency\n";
      for (const auto& rec : rep.sequences)
        seq << rec.cdr3 << '\t' << vocab.name(GeneVocab::Family::V, rec.v_gene) << '\t'
            << vocab.name(GeneVocab::Family::D, rec.d_gene) << '\t'
            << vocab.name(GeneVocab::Family::J, rec.j_gene) << '\t'
            << format_double(rec.frequency) << '\n';
    }
  }
  save_gene_vocab(vocab, dir / "gene_vocab.json");
  if (!truth.empty()) {
    auto gt = open(dir / "ground_truth.tsv");
    gt << "instance_key\ty\n";
    size_t i = 0;
    for (const auto& rep : repertoires)
      for (size_t s = 0; s < rep.sequences.size(); ++s, ++i)
        gt << rep.id << ':' << s << '\t' << int(truth[i]) << '\n';
  }
  {
    json doc;
    doc["metadata"] = "metadata.tsv";
    doc["gene_vocab"] = "gene_vocab.json";
    if (!truth.empty()) doc["ground_truth"] = "ground_truth.tsv";
    auto out = open(dir / "manifest.json");
    out << doc.dump(2) << '\n';
  }
  return load_manifest(dir / "manifest.json");
}

}  // namespace replik
