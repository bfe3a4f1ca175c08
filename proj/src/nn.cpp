#include "replik/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "replik/util.hpp"

namespace replik {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// y[o] += sum_i x[i] * W[i*out+o]; W stored (in, out) row-major.
void matvec(const double* w, const double* x, double* y, int in, int out) {
  for (int i = 0; i < in; ++i) {
    double xi = x[i];
    const double* wr = w + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xi * wr[o];
  }
}

// Reverse of matvec: dW[i,o] += x[i]*dy[o]; dx[i] += sum_o W[i,o]*dy[o].
void matvec_backward(const double* w, const double* x, const double* dy, double* dw, double* dx,
                     int in, int out) {
  for (int i = 0; i < in; ++i) {
    double xi = x[i];
    double acc = 0.0;
    const double* wr = w + static_cast<size_t>(i) * out;
    double* dwr = dw + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) {
      dwr[o] += xi * dy[o];
      acc += wr[o] * dy[o];
    }
    if (dx) dx[i] += acc;
  }
}

void layer_norm(const double* x, const double* g, const double* b, int d, double* y,
                double* mean_out, double* rstd_out) {
  double mu = 0.0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mu) * rstd * g[i] + b[i];
  *mean_out = mu;
  *rstd_out = rstd;
}

void layer_norm_backward(const double* x, const double* g, double mean, double rstd,
                         const double* dy, int d, double* dx, double* dg, double* db) {
  double mean_u = 0.0, mean_ux = 0.0;
  for (int i = 0; i < d; ++i) {
    double xhat = (x[i] - mean) * rstd;
    double u = dy[i] * g[i];
    dg[i] += dy[i] * xhat;
    db[i] += dy[i];
    mean_u += u;
    mean_ux += u * xhat;
  }
  mean_u /= d;
  mean_ux /= d;
  for (int i = 0; i < d; ++i) {
    double xhat = (x[i] - mean) * rstd;
    double u = dy[i] * g[i];
    dx[i] += rstd * (u - mean_u - xhat * mean_ux);
  }
}

double dropout_scale(double rate, uint64_t seed, int layer_branch, int row, int element) {
  double u = hash_uniform(seed, static_cast<uint64_t>(layer_branch), static_cast<uint64_t>(row),
                          static_cast<uint64_t>(element));
  return u < rate ? 0.0 : 1.0 / (1.0 - rate);
}

}  // namespace

int ModelConfig::ffn_hidden() const {
  return std::max(1, static_cast<int>(std::lround(ffn_mult * token_dim)));
}

void ModelConfig::validate() const {
  if (token_dim < 1 || n_layers < 1 || n_heads < 1)
    throw std::invalid_argument("model config: dimensions must be positive");
  if (token_dim > 512)
    throw std::invalid_argument("model config: token_dim above the supported maximum of 512");
  if (token_dim % n_heads != 0)
    throw std::invalid_argument("model config: token_dim " + std::to_string(token_dim) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("model config: dropout must be in [0, 1)");
  if (max_cdr3_len < 1) throw std::invalid_argument("model config: max_cdr3_len must be >= 1");
  if (aa_vocab < kAaAlphabetSize + 1)
    throw std::invalid_argument("model config: aa_vocab must cover the alphabet plus padding");
  if (v_vocab < 1 || d_vocab < 1 || j_vocab < 1)
    throw std::invalid_argument("model config: gene vocab sizes must be >= 1");
  if (ffn_mult <= 0.0) throw std::invalid_argument("model config: ffn_mult must be > 0");
}

ParamLayout ParamLayout::make(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  auto add = [&](std::string name, int rows, int cols, Entry::Init init) {
    Entry e;
    e.name = std::move(name);
    e.offset = layout.total;
    e.rows = rows;
    e.cols = cols;
    e.init = init;
    layout.total += e.count();
    layout.entries.push_back(std::move(e));
  };
  int d = cfg.token_dim, h = cfg.ffn_hidden();
  add("aa_emb", cfg.aa_vocab, d, Entry::Init::Xavier);
  add("pos_emb", cfg.max_cdr3_len, d, Entry::Init::Xavier);
  add("cdr3_proj_w", d, d, Entry::Init::Xavier);
  add("cdr3_proj_b", 1, d, Entry::Init::Zero);
  add("v_emb", cfg.v_vocab, d, Entry::Init::Xavier);
  add("d_emb", cfg.d_vocab, d, Entry::Init::Xavier);
  add("j_emb", cfg.j_vocab, d, Entry::Init::Xavier);
  add("cls", 1, d, Entry::Init::Xavier);
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1_g", 1, d, Entry::Init::One);
    add(p + "ln1_b", 1, d, Entry::Init::Zero);
    add(p + "attn_wq", d, d, Entry::Init::Xavier);
    add(p + "attn_bq", 1, d, Entry::Init::Zero);
    add(p + "attn_wk", d, d, Entry::Init::Xavier);
    add(p + "attn_bk", 1, d, Entry::Init::Zero);
    add(p + "attn_wv", d, d, Entry::Init::Xavier);
    add(p + "attn_bv", 1, d, Entry::Init::Zero);
    add(p + "attn_wo", d, d, Entry::Init::Xavier);
    add(p + "attn_bo", 1, d, Entry::Init::Zero);
    add(p + "ln2_g", 1, d, Entry::Init::One);
    add(p + "ln2_b", 1, d, Entry::Init::Zero);
    add(p + "ffn_w1", d, h, Entry::Init::Xavier);
    add(p + "ffn_b1", 1, h, Entry::Init::Zero);
    add(p + "ffn_w2", h, d, Entry::Init::Xavier);
    add(p + "ffn_b2", 1, d, Entry::Init::Zero);
  }
  add("head_w", d, 2, Entry::Init::Xavier);
  add("head_b", 1, 2, Entry::Init::Zero);
  return layout;
}

const ParamLayout::Entry& ParamLayout::at(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::invalid_argument("unknown parameter tensor '" + std::string(name) + "'");
}

const ParamLayout::Entry& ParamLayout::containing(size_t flat_index) const {
  for (const auto& e : entries)
    if (flat_index >= e.offset && flat_index < e.offset + e.count()) return e;
  throw std::invalid_argument("parameter index out of range");
}

ParamIndex ParamIndex::make(const ParamLayout& layout, int n_layers) {
  ParamIndex idx;
  idx.aa_emb = layout.at("aa_emb").offset;
  idx.pos_emb = layout.at("pos_emb").offset;
  idx.proj_w = layout.at("cdr3_proj_w").offset;
  idx.proj_b = layout.at("cdr3_proj_b").offset;
  idx.v_emb = layout.at("v_emb").offset;
  idx.d_emb = layout.at("d_emb").offset;
  idx.j_emb = layout.at("j_emb").offset;
  idx.cls = layout.at("cls").offset;
  for (int l = 0; l < n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    ParamIndex::Layer lay;
    lay.ln1_g = layout.at(p + "ln1_g").offset;
    lay.ln1_b = layout.at(p + "ln1_b").offset;
    lay.wq = layout.at(p + "attn_wq").offset;
    lay.bq = layout.at(p + "attn_bq").offset;
    lay.wk = layout.at(p + "attn_wk").offset;
    lay.bk = layout.at(p + "attn_bk").offset;
    lay.wv = layout.at(p + "attn_wv").offset;
    lay.bv = layout.at(p + "attn_bv").offset;
    lay.wo = layout.at(p + "attn_wo").offset;
    lay.bo = layout.at(p + "attn_bo").offset;
    lay.ln2_g = layout.at(p + "ln2_g").offset;
    lay.ln2_b = layout.at(p + "ln2_b").offset;
    lay.w1 = layout.at(p + "ffn_w1").offset;
    lay.b1 = layout.at(p + "ffn_b1").offset;
    lay.w2 = layout.at(p + "ffn_w2").offset;
    lay.b2 = layout.at(p + "ffn_b2").offset;
    idx.layers.push_back(lay);
  }
  idx.head_w = layout.at("head_w").offset;
  idx.head_b = layout.at("head_b").offset;
  return idx;
}

std::span<double> ModelState::tensor(std::string_view name) {
  const auto& e = layout.at(name);
  return {weights.data() + e.offset, e.count()};
}

std::span<const double> ModelState::tensor(std::string_view name) const {
  const auto& e = layout.at(name);
  return {weights.data() + e.offset, e.count()};
}

ModelState init_params(const ModelConfig& cfg, uint64_t seed) {
  ModelState state;
  state.config = cfg;
  state.layout = ParamLayout::make(cfg);
  state.index = ParamIndex::make(state.layout, cfg.n_layers);
  state.weights.assign(state.layout.total, 0.0);
  state.adam_m.assign(state.layout.total, 0.0);
  state.adam_v.assign(state.layout.total, 0.0);
  Rng rng(seed);
  for (const auto& e : state.layout.entries) {
    double* w = state.weights.data() + e.offset;
    switch (e.init) {
      case ParamLayout::Entry::Init::Xavier: {
        double limit = std::sqrt(6.0 / (e.rows + e.cols));
        for (size_t i = 0; i < e.count(); ++i) w[i] = (2.0 * rng.next_double() - 1.0) * limit;
        break;
      }
      case ParamLayout::Entry::Init::Zero:
        break;
      case ParamLayout::Entry::Init::One:
        std::fill(w, w + e.count(), 1.0);
        break;
    }
  }
  return state;
}

Batch encode_batch(std::span<const SequenceRecord> records, const ModelConfig& cfg) {
  Batch batch;
  batch.rows = static_cast<int>(records.size());
  batch.width = cfg.max_cdr3_len;
  int pad = cfg.aa_vocab - 1;
  batch.aa.assign(static_cast<size_t>(batch.rows) * batch.width, pad);
  batch.len.resize(records.size());
  batch.v.resize(records.size());
  batch.d.resize(records.size());
  batch.j.resize(records.size());
  for (size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.cdr3.empty()) throw std::invalid_argument("encode: empty cdr3");
    if (static_cast<int>(rec.cdr3.size()) > cfg.max_cdr3_len)
      throw std::invalid_argument("encode: cdr3 '" + rec.cdr3 + "' longer than max_cdr3_len " +
                                  std::to_string(cfg.max_cdr3_len));
    for (size_t p = 0; p < rec.cdr3.size(); ++p) {
      int id = aa_index(rec.cdr3[p]);
      if (id < 0)
        throw std::invalid_argument("encode: unknown amino acid '" +
                                    std::string(1, rec.cdr3[p]) + "' in '" + rec.cdr3 + "'");
      batch.aa[r * static_cast<size_t>(batch.width) + p] = id;
    }
    batch.len[r] = static_cast<int>(rec.cdr3.size());
    if (rec.v_gene < 0 || rec.v_gene >= cfg.v_vocab || rec.d_gene < 0 ||
        rec.d_gene >= cfg.d_vocab || rec.j_gene < 0 || rec.j_gene >= cfg.j_vocab)
      throw std::invalid_argument("encode: gene id out of range for '" + rec.cdr3 + "'");
    batch.v[r] = rec.v_gene;
    batch.d[r] = rec.d_gene;
    batch.j[r] = rec.j_gene;
  }
  return batch;
}

void RowWorkspace::resize(const ModelConfig& cfg) {
  int d = cfg.token_dim, L = cfg.n_layers, h = cfg.ffn_hidden(), H = cfg.n_heads;
  size_t td = static_cast<size_t>(kTokens) * d;
  // Every buffer except `pooled` is fully overwritten by forward_row, so a
  // repeat call with the same shape only needs to clear the pooling sum.
  if (x.size() == static_cast<size_t>(L + 1) * td &&
      ffn_pre.size() == static_cast<size_t>(L) * kTokens * h &&
      attn.size() == static_cast<size_t>(L) * H * kTokens * kTokens) {
    std::fill(pooled.begin(), pooled.end(), 0.0);
    return;
  }
  pooled.assign(static_cast<size_t>(d), 0.0);
  x.assign(static_cast<size_t>(L + 1) * td, 0.0);
  ln1_out.assign(static_cast<size_t>(L) * td, 0.0);
  ln2_out.assign(static_cast<size_t>(L) * td, 0.0);
  ln1_mean.assign(static_cast<size_t>(L) * kTokens, 0.0);
  ln1_rstd.assign(static_cast<size_t>(L) * kTokens, 0.0);
  ln2_mean.assign(static_cast<size_t>(L) * kTokens, 0.0);
  ln2_rstd.assign(static_cast<size_t>(L) * kTokens, 0.0);
  q.assign(static_cast<size_t>(L) * td, 0.0);
  k.assign(static_cast<size_t>(L) * td, 0.0);
  v.assign(static_cast<size_t>(L) * td, 0.0);
  attn.assign(static_cast<size_t>(L) * H * kTokens * kTokens, 0.0);
  ctx.assign(static_cast<size_t>(L) * td, 0.0);
  attn_proj.assign(static_cast<size_t>(L) * td, 0.0);
  drop1.assign(static_cast<size_t>(L) * td, 1.0);
  x_mid.assign(static_cast<size_t>(L) * td, 0.0);
  ffn_pre.assign(static_cast<size_t>(L) * kTokens * h, 0.0);
  ffn_act.assign(static_cast<size_t>(L) * kTokens * h, 0.0);
  ffn_out.assign(static_cast<size_t>(L) * td, 0.0);
  drop2.assign(static_cast<size_t>(L) * td, 1.0);
}

void forward_row(const ModelState& state, const Batch& batch, int row, bool train_mode,
                 uint64_t dropout_seed, RowWorkspace& ws, double probs_out[2]) {
  const ModelConfig& cfg = state.config;
  const ParamIndex& idx = state.index;
  const double* w = state.weights.data();
  int d = cfg.token_dim, H = cfg.n_heads, hd = cfg.head_dim(), h = cfg.ffn_hidden();
  size_t td = static_cast<size_t>(kTokens) * d;
  ws.resize(cfg);

  // Masked mean pool of residue + position embeddings, then projection.
  int len = batch.len[static_cast<size_t>(row)];
  const int* aa = batch.aa.data() + static_cast<size_t>(row) * batch.width;
  double inv_len = 1.0 / len;
  for (int p = 0; p < len; ++p) {
    const double* ea = w + idx.aa_emb + static_cast<size_t>(aa[p]) * d;
    const double* ep = w + idx.pos_emb + static_cast<size_t>(p) * d;
    for (int i = 0; i < d; ++i) ws.pooled[static_cast<size_t>(i)] += (ea[i] + ep[i]) * inv_len;
  }

  double* x0 = ws.x.data();
  std::copy_n(w + idx.cls, d, x0);
  {
    double* tok = x0 + d;
    std::copy_n(w + idx.proj_b, d, tok);
    matvec(w + idx.proj_w, ws.pooled.data(), tok, d, d);
  }
  std::copy_n(w + idx.v_emb + static_cast<size_t>(batch.v[static_cast<size_t>(row)]) * d, d, x0 + 2 * d);
  std::copy_n(w + idx.d_emb + static_cast<size_t>(batch.d[static_cast<size_t>(row)]) * d, d, x0 + 3 * d);
  std::copy_n(w + idx.j_emb + static_cast<size_t>(batch.j[static_cast<size_t>(row)]) * d, d, x0 + 4 * d);

  bool use_dropout = train_mode && cfg.dropout > 0.0;
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = idx.layers[static_cast<size_t>(l)];
    const double* xin = ws.x.data() + static_cast<size_t>(l) * td;
    double* xout = ws.x.data() + static_cast<size_t>(l + 1) * td;
    double* ln1 = ws.ln1_out.data() + static_cast<size_t>(l) * td;
    for (int t = 0; t < kTokens; ++t)
      layer_norm(xin + static_cast<size_t>(t) * d, w + L.ln1_g, w + L.ln1_b, d,
                 ln1 + static_cast<size_t>(t) * d,
                 &ws.ln1_mean[static_cast<size_t>(l) * kTokens + t],
                 &ws.ln1_rstd[static_cast<size_t>(l) * kTokens + t]);

    double* q = ws.q.data() + static_cast<size_t>(l) * td;
    double* k = ws.k.data() + static_cast<size_t>(l) * td;
    double* v = ws.v.data() + static_cast<size_t>(l) * td;
    for (int t = 0; t < kTokens; ++t) {
      double* qt = q + static_cast<size_t>(t) * d;
      double* kt = k + static_cast<size_t>(t) * d;
      double* vt = v + static_cast<size_t>(t) * d;
      std::copy_n(w + L.bq, d, qt);
      std::copy_n(w + L.bk, d, kt);
      std::copy_n(w + L.bv, d, vt);
      const double* lt = ln1 + static_cast<size_t>(t) * d;
      matvec(w + L.wq, lt, qt, d, d);
      matvec(w + L.wk, lt, kt, d, d);
      matvec(w + L.wv, lt, vt, d, d);
    }

    double* attn = ws.attn.data() + static_cast<size_t>(l) * H * kTokens * kTokens;
    double* ctx = ws.ctx.data() + static_cast<size_t>(l) * td;
    std::fill(ctx, ctx + td, 0.0);
    for (int head = 0; head < H; ++head) {
      int off = head * hd;
      for (int t = 0; t < kTokens; ++t) {
        double* arow = attn + (static_cast<size_t>(head) * kTokens + t) * kTokens;
        double mx = -1e300;
        for (int s = 0; s < kTokens; ++s) {
          double dot = 0.0;
          const double* qt = q + static_cast<size_t>(t) * d + off;
          const double* ks = k + static_cast<size_t>(s) * d + off;
          for (int i = 0; i < hd; ++i) dot += qt[i] * ks[i];
          arow[s] = dot * scale;
          mx = std::max(mx, arow[s]);
        }
        double sum = 0.0;
        for (int s = 0; s < kTokens; ++s) {
          arow[s] = std::exp(arow[s] - mx);
          sum += arow[s];
        }
        for (int s = 0; s < kTokens; ++s) arow[s] /= sum;
        double* ct = ctx + static_cast<size_t>(t) * d + off;
        for (int s = 0; s < kTokens; ++s) {
          const double* vs = v + static_cast<size_t>(s) * d + off;
          double a = arow[s];
          for (int i = 0; i < hd; ++i) ct[i] += a * vs[i];
        }
      }
    }

    double* proj = ws.attn_proj.data() + static_cast<size_t>(l) * td;
    double* dr1 = ws.drop1.data() + static_cast<size_t>(l) * td;
    double* xm = ws.x_mid.data() + static_cast<size_t>(l) * td;
    for (int t = 0; t < kTokens; ++t) {
      double* pt = proj + static_cast<size_t>(t) * d;
      std::copy_n(w + L.bo, d, pt);
      matvec(w + L.wo, ctx + static_cast<size_t>(t) * d, pt, d, d);
    }
    for (size_t i = 0; i < td; ++i) {
      dr1[i] = use_dropout
                   ? dropout_scale(cfg.dropout, dropout_seed, 2 * l, row, static_cast<int>(i))
                   : 1.0;
      xm[i] = xin[i] + proj[i] * dr1[i];
    }

    double* ln2 = ws.ln2_out.data() + static_cast<size_t>(l) * td;
    for (int t = 0; t < kTokens; ++t)
      layer_norm(xm + static_cast<size_t>(t) * d, w + L.ln2_g, w + L.ln2_b, d,
                 ln2 + static_cast<size_t>(t) * d,
                 &ws.ln2_mean[static_cast<size_t>(l) * kTokens + t],
                 &ws.ln2_rstd[static_cast<size_t>(l) * kTokens + t]);

    double* pre = ws.ffn_pre.data() + static_cast<size_t>(l) * kTokens * h;
    double* act = ws.ffn_act.data() + static_cast<size_t>(l) * kTokens * h;
    double* fout = ws.ffn_out.data() + static_cast<size_t>(l) * td;
    double* dr2 = ws.drop2.data() + static_cast<size_t>(l) * td;
    for (int t = 0; t < kTokens; ++t) {
      double* pt = pre + static_cast<size_t>(t) * h;
      std::copy_n(w + L.b1, h, pt);
      matvec(w + L.w1, ln2 + static_cast<size_t>(t) * d, pt, d, h);
      double* at = act + static_cast<size_t>(t) * h;
      for (int i = 0; i < h; ++i) at[i] = gelu(pt[i]);
      double* ft = fout + static_cast<size_t>(t) * d;
      std::copy_n(w + L.b2, d, ft);
      matvec(w + L.w2, at, ft, h, d);
    }
    for (size_t i = 0; i < td; ++i) {
      dr2[i] = use_dropout
                   ? dropout_scale(cfg.dropout, dropout_seed, 2 * l + 1, row, static_cast<int>(i))
                   : 1.0;
      xout[i] = xm[i] + fout[i] * dr2[i];
    }
  }

  const double* cls_out = ws.x.data() + static_cast<size_t>(cfg.n_layers) * td;
  ws.logits[0] = w[idx.head_b];
  ws.logits[1] = w[idx.head_b + 1];
  for (int i = 0; i < d; ++i) {
    ws.logits[0] += cls_out[i] * w[idx.head_w + static_cast<size_t>(i) * 2];
    ws.logits[1] += cls_out[i] * w[idx.head_w + static_cast<size_t>(i) * 2 + 1];
  }
  double mx = std::max(ws.logits[0], ws.logits[1]);
  double e0 = std::exp(ws.logits[0] - mx), e1 = std::exp(ws.logits[1] - mx);
  double inv = 1.0 / (e0 + e1);
  ws.probs[0] = e0 * inv;
  ws.probs[1] = e1 * inv;
  probs_out[0] = ws.probs[0];
  probs_out[1] = ws.probs[1];
}

void backward_row(const ModelState& state, const Batch& batch, int row, const RowWorkspace& ws,
                  const double dprobs[2], std::span<double> grad) {
  const ModelConfig& cfg = state.config;
  const ParamIndex& idx = state.index;
  const double* w = state.weights.data();
  double* g = grad.data();
  if (grad.size() != state.layout.total)
    throw std::invalid_argument("backward_row: gradient buffer size mismatch");
  int d = cfg.token_dim, H = cfg.n_heads, hd = cfg.head_dim(), h = cfg.ffn_hidden();
  size_t td = static_cast<size_t>(kTokens) * d;
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // Softmax backward.
  double dot = dprobs[0] * ws.probs[0] + dprobs[1] * ws.probs[1];
  double dlogits[2] = {ws.probs[0] * (dprobs[0] - dot), ws.probs[1] * (dprobs[1] - dot)};

  // Scratch reused across calls; per-thread, so backward_row stays safe to
  // run concurrently on distinct rows.
  thread_local std::vector<double> dx, dxm, dtmp, dq, dk, dv, dln1, dctx, dpre;
  dx.assign(td, 0.0);
  const double* cls_out = ws.x.data() + static_cast<size_t>(cfg.n_layers) * td;
  g[idx.head_b] += dlogits[0];
  g[idx.head_b + 1] += dlogits[1];
  for (int i = 0; i < d; ++i) {
    g[idx.head_w + static_cast<size_t>(i) * 2] += cls_out[i] * dlogits[0];
    g[idx.head_w + static_cast<size_t>(i) * 2 + 1] += cls_out[i] * dlogits[1];
    dx[static_cast<size_t>(i)] = w[idx.head_w + static_cast<size_t>(i) * 2] * dlogits[0] +
                                 w[idx.head_w + static_cast<size_t>(i) * 2 + 1] * dlogits[1];
  }

  dxm.assign(td, 0.0);
  dtmp.assign(td, 0.0);
  dq.assign(td, 0.0);
  dk.assign(td, 0.0);
  dv.assign(td, 0.0);
  dln1.assign(td, 0.0);
  dctx.assign(td, 0.0);
  dpre.assign(static_cast<size_t>(kTokens) * h, 0.0);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = idx.layers[static_cast<size_t>(l)];
    const double* xin = ws.x.data() + static_cast<size_t>(l) * td;
    const double* ln1 = ws.ln1_out.data() + static_cast<size_t>(l) * td;
    const double* ln2 = ws.ln2_out.data() + static_cast<size_t>(l) * td;
    const double* xm = ws.x_mid.data() + static_cast<size_t>(l) * td;
    const double* pre = ws.ffn_pre.data() + static_cast<size_t>(l) * kTokens * h;
    const double* act = ws.ffn_act.data() + static_cast<size_t>(l) * kTokens * h;
    const double* dr1 = ws.drop1.data() + static_cast<size_t>(l) * td;
    const double* dr2 = ws.drop2.data() + static_cast<size_t>(l) * td;
    const double* attn = ws.attn.data() + static_cast<size_t>(l) * H * kTokens * kTokens;
    const double* q = ws.q.data() + static_cast<size_t>(l) * td;
    const double* k = ws.k.data() + static_cast<size_t>(l) * td;
    const double* v = ws.v.data() + static_cast<size_t>(l) * td;
    const double* ctx = ws.ctx.data() + static_cast<size_t>(l) * td;

    // x_out = x_mid + drop2 * ffn_out(ln2(x_mid)): dx -> dxm and FFN chain.
    std::copy(dx.begin(), dx.end(), dxm.begin());
    std::fill(dpre.begin(), dpre.end(), 0.0);
    std::fill(dtmp.begin(), dtmp.end(), 0.0);  // dln2
    for (int t = 0; t < kTokens; ++t) {
      const double* at = act + static_cast<size_t>(t) * h;
      const double* pt = pre + static_cast<size_t>(t) * h;
      double* dact_t = dpre.data() + static_cast<size_t>(t) * h;  // reuse as dact first
      // dffn_out = dx * drop2
      double dfout[512];
      for (int i = 0; i < d; ++i)
        dfout[i] = dx[static_cast<size_t>(t) * d + i] * dr2[static_cast<size_t>(t) * d + i];
      for (int i = 0; i < d; ++i) g[L.b2 + static_cast<size_t>(i)] += dfout[i];
      matvec_backward(w + L.w2, at, dfout, g + L.w2, dact_t, h, d);
      for (int i = 0; i < h; ++i) dact_t[i] *= gelu_grad(pt[i]);  // now dpre
      for (int i = 0; i < h; ++i) g[L.b1 + static_cast<size_t>(i)] += dact_t[i];
      matvec_backward(w + L.w1, ln2 + static_cast<size_t>(t) * d, dact_t, g + L.w1,
                      dtmp.data() + static_cast<size_t>(t) * d, d, h);
    }
    for (int t = 0; t < kTokens; ++t)
      layer_norm_backward(xm + static_cast<size_t>(t) * d, w + L.ln2_g,
                          ws.ln2_mean[static_cast<size_t>(l) * kTokens + t],
                          ws.ln2_rstd[static_cast<size_t>(l) * kTokens + t],
                          dtmp.data() + static_cast<size_t>(t) * d, d,
                          dxm.data() + static_cast<size_t>(t) * d, g + L.ln2_g, g + L.ln2_b);

    // x_mid = x_in + drop1 * Wo(ctx): dxm -> dx(in) and attention chain.
    std::copy(dxm.begin(), dxm.end(), dx.begin());
    std::fill(dctx.begin(), dctx.end(), 0.0);
    for (int t = 0; t < kTokens; ++t) {
      double dproj[512];
      for (int i = 0; i < d; ++i)
        dproj[i] = dxm[static_cast<size_t>(t) * d + i] * dr1[static_cast<size_t>(t) * d + i];
      for (int i = 0; i < d; ++i) g[L.bo + static_cast<size_t>(i)] += dproj[i];
      matvec_backward(w + L.wo, ctx + static_cast<size_t>(t) * d, dproj, g + L.wo,
                      dctx.data() + static_cast<size_t>(t) * d, d, d);
    }

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int head = 0; head < H; ++head) {
      int off = head * hd;
      for (int t = 0; t < kTokens; ++t) {
        const double* arow = attn + (static_cast<size_t>(head) * kTokens + t) * kTokens;
        const double* dct = dctx.data() + static_cast<size_t>(t) * d + off;
        double dattn[kTokens];
        for (int s = 0; s < kTokens; ++s) {
          const double* vs = v + static_cast<size_t>(s) * d + off;
          double acc = 0.0;
          for (int i = 0; i < hd; ++i) acc += dct[i] * vs[i];
          dattn[s] = acc;
          double* dvs = dv.data() + static_cast<size_t>(s) * d + off;
          double a = arow[s];
          for (int i = 0; i < hd; ++i) dvs[i] += a * dct[i];
        }
        double asum = 0.0;
        for (int s = 0; s < kTokens; ++s) asum += arow[s] * dattn[s];
        for (int s = 0; s < kTokens; ++s) {
          double dscore = arow[s] * (dattn[s] - asum) * scale;
          const double* ks = k + static_cast<size_t>(s) * d + off;
          const double* qt = q + static_cast<size_t>(t) * d + off;
          double* dqt = dq.data() + static_cast<size_t>(t) * d + off;
          double* dks = dk.data() + static_cast<size_t>(s) * d + off;
          for (int i = 0; i < hd; ++i) {
            dqt[i] += dscore * ks[i];
            dks[i] += dscore * qt[i];
          }
        }
      }
    }

    std::fill(dln1.begin(), dln1.end(), 0.0);
    for (int t = 0; t < kTokens; ++t) {
      const double* lt = ln1 + static_cast<size_t>(t) * d;
      double* dlt = dln1.data() + static_cast<size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        g[L.bq + static_cast<size_t>(i)] += dq[static_cast<size_t>(t) * d + i];
        g[L.bk + static_cast<size_t>(i)] += dk[static_cast<size_t>(t) * d + i];
        g[L.bv + static_cast<size_t>(i)] += dv[static_cast<size_t>(t) * d + i];
      }
      matvec_backward(w + L.wq, lt, dq.data() + static_cast<size_t>(t) * d, g + L.wq, dlt, d, d);
      matvec_backward(w + L.wk, lt, dk.data() + static_cast<size_t>(t) * d, g + L.wk, dlt, d, d);
      matvec_backward(w + L.wv, lt, dv.data() + static_cast<size_t>(t) * d, g + L.wv, dlt, d, d);
    }
    for (int t = 0; t < kTokens; ++t)
      layer_norm_backward(xin + static_cast<size_t>(t) * d, w + L.ln1_g,
                          ws.ln1_mean[static_cast<size_t>(l) * kTokens + t],
                          ws.ln1_rstd[static_cast<size_t>(l) * kTokens + t],
                          dln1.data() + static_cast<size_t>(t) * d, d,
                          dx.data() + static_cast<size_t>(t) * d, g + L.ln1_g, g + L.ln1_b);
  }

  // Token gradients.
  for (int i = 0; i < d; ++i) g[idx.cls + static_cast<size_t>(i)] += dx[static_cast<size_t>(i)];
  {
    double dpooled[512] = {0};
    const double* dtok = dx.data() + d;
    for (int i = 0; i < d; ++i) g[idx.proj_b + static_cast<size_t>(i)] += dtok[i];
    matvec_backward(w + idx.proj_w, ws.pooled.data(), dtok, g + idx.proj_w, dpooled, d, d);
    int len = batch.len[static_cast<size_t>(row)];
    const int* aa = batch.aa.data() + static_cast<size_t>(row) * batch.width;
    double inv_len = 1.0 / len;
    for (int p = 0; p < len; ++p) {
      double* ga = g + idx.aa_emb + static_cast<size_t>(aa[p]) * d;
      double* gp = g + idx.pos_emb + static_cast<size_t>(p) * d;
      for (int i = 0; i < d; ++i) {
        double v = dpooled[i] * inv_len;
        ga[i] += v;
        gp[i] += v;
      }
    }
  }
  double* gv = g + idx.v_emb + static_cast<size_t>(batch.v[static_cast<size_t>(row)]) * d;
  double* gd = g + idx.d_emb + static_cast<size_t>(batch.d[static_cast<size_t>(row)]) * d;
  double* gj = g + idx.j_emb + static_cast<size_t>(batch.j[static_cast<size_t>(row)]) * d;
  for (int i = 0; i < d; ++i) {
    gv[i] += dx[static_cast<size_t>(2 * d + i)];
    gd[i] += dx[static_cast<size_t>(3 * d + i)];
    gj[i] += dx[static_cast<size_t>(4 * d + i)];
  }
}

std::vector<double> forward(const ModelState& state, const Batch& batch, bool train_mode,
                            uint64_t dropout_seed, ForwardCache* cache) {
  std::vector<double> probs(static_cast<size_t>(batch.rows) * 2);
  if (cache) {
    cache->batch = batch;
    cache->train_mode = train_mode;
    cache->dropout_seed = dropout_seed;
    cache->param_count = state.layout.total;
    cache->rows.resize(static_cast<size_t>(batch.rows));
    for (int r = 0; r < batch.rows; ++r)
      forward_row(state, batch, r, train_mode, dropout_seed, cache->rows[static_cast<size_t>(r)],
                  &probs[static_cast<size_t>(r) * 2]);
  } else {
    RowWorkspace ws;
    for (int r = 0; r < batch.rows; ++r)
      forward_row(state, batch, r, train_mode, dropout_seed, ws,
                  &probs[static_cast<size_t>(r) * 2]);
  }
  return probs;
}

std::vector<double> backward(const ModelState& state, const ForwardCache& cache,
                             std::span<const double> dprobs) {
  if (cache.param_count != state.layout.total ||
      cache.rows.size() != static_cast<size_t>(cache.batch.rows))
    throw std::invalid_argument("backward: cache does not match model state");
  if (dprobs.size() != static_cast<size_t>(cache.batch.rows) * 2)
    throw std::invalid_argument("backward: dprobs size does not match cached batch");
  size_t n = static_cast<size_t>(cache.batch.rows);
  std::vector<std::vector<double>> partial(
      static_cast<size_t>(std::min<size_t>(kGradChunks, n)));
  parallel_chunks(n, kGradChunks, 1, [&](int c, size_t lo, size_t hi) {
    auto& buf = partial[static_cast<size_t>(c)];
    buf.assign(state.layout.total, 0.0);
    for (size_t r = lo; r < hi; ++r)
      backward_row(state, cache.batch, static_cast<int>(r), cache.rows[r],
                   &dprobs[r * 2], buf);
  });
  std::vector<double> grad(state.layout.total, 0.0);
  for (const auto& buf : partial)
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += buf[i];
  return grad;
}

void adam_step(ModelState& state, std::span<const double> grad, const AdamConfig& adam) {
  if (grad.size() != state.layout.total)
    throw std::invalid_argument("adam_step: gradient size mismatch");
  state.step += 1;
  double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < grad.size(); ++i) {
    double gi = grad[i];
    if (!std::isfinite(gi))
      throw std::runtime_error("adam_step: non-finite gradient in '" +
                               state.layout.containing(i).name + "'");
    double m = state.adam_m[i] = adam.beta1 * state.adam_m[i] + (1.0 - adam.beta1) * gi;
    double v = state.adam_v[i] = adam.beta2 * state.adam_v[i] + (1.0 - adam.beta2) * gi * gi;
    state.weights[i] -= adam.lr * (m / bc1) / (std::sqrt(v / bc2) + adam.eps);
  }
}

std::vector<double> predict_proba(const ModelState& state,
                                  std::span<const SequenceRecord> records, int n_threads) {
  std::vector<double> out(records.size());
  if (records.empty()) return out;
  Batch batch = encode_batch(records, state.config);
  int chunks = static_cast<int>(std::min<size_t>(records.size(), 64));
  parallel_chunks(records.size(), chunks, n_threads, [&](int, size_t lo, size_t hi) {
    RowWorkspace ws;
    double p[2];
    for (size_t r = lo; r < hi; ++r) {
      forward_row(state, batch, static_cast<int>(r), false, 0, ws, p);
      out[r] = p[1];
    }
  });
  return out;
}

}  // namespace replik
