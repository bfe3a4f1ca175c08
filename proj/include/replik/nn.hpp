#pragma once
// From-scratch differentiable sequence classifier in the FT-Transformer
// style: a learned pooled CDR3 residue encoder plus gene embedding tokens,
// pre-norm transformer layers, and a linear CLS head. Exact reverse-mode
// gradients, Adam updates, all in 64-bit.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "replik/core.hpp"

namespace replik {

// [CLS, cdr3, v, d, j]
inline constexpr int kTokens = 5;

// Gradient accumulation always runs over this many fixed row chunks reduced
// in chunk order, so results are bit-identical for any worker count.
inline constexpr int kGradChunks = 8;

struct ModelConfig {
  int token_dim = 16;
  int n_layers = 1;
  int n_heads = 1;
  double dropout = 0.0;
  int max_cdr3_len = 32;
  int aa_vocab = kAaAlphabetSize + 1;  // 20 residues + pad
  int v_vocab = 1;                     // includes the missing slot (id 0)
  int d_vocab = 1;
  int j_vocab = 1;
  double ffn_mult = 4.0 / 3.0;  // FT-Transformer convention

  int ffn_hidden() const;
  int head_dim() const { return token_dim / n_heads; }
  void validate() const;  // throws std::invalid_argument

  bool operator==(const ModelConfig&) const = default;
};

struct ParamLayout {
  struct Entry {
    std::string name;
    size_t offset = 0;
    int rows = 0, cols = 0;
    enum class Init { Xavier, Zero, One } init = Init::Xavier;
    size_t count() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
  };
  std::vector<Entry> entries;
  size_t total = 0;

  static ParamLayout make(const ModelConfig& cfg);
  const Entry& at(std::string_view name) const;
  // Entry containing a flat parameter index (for gradient diagnostics).
  const Entry& containing(size_t flat_index) const;
};

// Direct offsets into the flat parameter vector for the hot path.
struct ParamIndex {
  size_t aa_emb, pos_emb, proj_w, proj_b, v_emb, d_emb, j_emb, cls;
  struct Layer {
    size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  size_t head_w, head_b;

  static ParamIndex make(const ParamLayout& layout, int n_layers);
};

struct ModelState {
  ModelConfig config;
  ParamLayout layout;
  ParamIndex index;
  std::vector<double> weights;
  std::vector<double> adam_m, adam_v;  // same shape as weights
  int64_t step = 0;

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
};

// Xavier-uniform weights, zero biases, unit layer-norm scales; deterministic
// per seed.
ModelState init_params(const ModelConfig& cfg, uint64_t seed);

struct Batch {
  int rows = 0;
  int width = 0;             // max_cdr3_len
  std::vector<int> aa;       // rows x width, padded with aa_vocab-1
  std::vector<int> len;
  std::vector<int> v, d, j;
  std::vector<double> target;       // optional training targets in [0,1]
  std::vector<int> instance_index;  // optional provenance
};

// Validates characters, lengths and gene ids against the config.
Batch encode_batch(std::span<const SequenceRecord> records, const ModelConfig& cfg);

// Per-row scratch holding every intermediate needed by backward_row.
struct RowWorkspace {
  std::vector<double> pooled;                        // d
  std::vector<double> x;                             // (L+1) x T x d
  std::vector<double> ln1_out, ln2_out;              // L x T x d
  std::vector<double> ln1_mean, ln1_rstd;            // L x T
  std::vector<double> ln2_mean, ln2_rstd;            // L x T
  std::vector<double> q, k, v;                       // L x T x d
  std::vector<double> attn;                          // L x H x T x T
  std::vector<double> ctx, attn_proj, drop1, x_mid;  // L x T x d
  std::vector<double> ffn_pre, ffn_act;              // L x T x h
  std::vector<double> ffn_out, drop2;                // L x T x d
  double logits[2] = {0, 0};
  double probs[2] = {0, 0};

  void resize(const ModelConfig& cfg);
};

// Single-row forward; dropout (train_mode only) is a pure function of
// (dropout_seed, layer, row, element), independent of evaluation order.
void forward_row(const ModelState& state, const Batch& batch, int row, bool train_mode,
                 uint64_t dropout_seed, RowWorkspace& ws, double probs_out[2]);

// Exact reverse of forward_row; ws must come from the matching forward call.
// Gradients are accumulated into grad (size layout.total).
void backward_row(const ModelState& state, const Batch& batch, int row,
                  const RowWorkspace& ws, const double dprobs[2], std::span<double> grad);

struct ForwardCache {
  Batch batch;
  bool train_mode = false;
  uint64_t dropout_seed = 0;
  size_t param_count = 0;
  std::vector<RowWorkspace> rows;
};

// Whole-batch forward; returns row-major B x 2 probabilities.
std::vector<double> forward(const ModelState& state, const Batch& batch, bool train_mode,
                            uint64_t dropout_seed, ForwardCache* cache = nullptr);

// Whole-batch reverse pass from dLoss/dprobs (row-major B x 2).
std::vector<double> backward(const ModelState& state, const ForwardCache& cache,
                             std::span<const double> dprobs);

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam; throws on non-finite gradients, naming the parameter.
void adam_step(ModelState& state, std::span<const double> grad, const AdamConfig& adam);

// p(y = 1) per record; no dropout, deterministic, independent of n_threads.
std::vector<double> predict_proba(const ModelState& state,
                                  std::span<const SequenceRecord> records, int n_threads = 1);

}  // namespace replik
