#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "replik/nn.hpp"
#include "replik/robust.hpp"
#include "replik/util.hpp"

using namespace replik;

namespace {

ModelConfig tiny_config(int d = 8, int layers = 1, int heads = 1) {
  ModelConfig cfg;
  cfg.token_dim = d;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.max_cdr3_len = 12;
  cfg.v_vocab = 5;
  cfg.d_vocab = 3;
  cfg.j_vocab = 4;
  return cfg;
}

std::vector<SequenceRecord> sample_records() {
  return {
      {"CASSLG", 1, 0, 2, 0.25},
      {"AWNDRGTQY", 3, 1, 1, 0.5},
      {"KLMNPQRSTVWY", 4, 2, 3, 0.1},
      {"G", 2, 0, 0, 0.05},
  };
}

// Central finite differences over every parameter; the independent oracle
// for the analytic backward pass. Plain second-order differences at h = 1e-3
// carry O(h^2 f''') truncation up to ~2e-3 relative near the cross-entropy
// curvature, so the h/2h evaluations are Richardson-combined to cancel it.
void gradient_check(ModelConfig cfg, bool train_mode, double dropout, uint64_t dropout_seed) {
  cfg.dropout = dropout;
  ModelState state = init_params(cfg, 7);
  auto records = sample_records();
  Batch batch = encode_batch(records, cfg);
  std::vector<double> targets = {0.9, 0.1, 0.65, 0.4};

  ForwardCache cache;
  std::vector<double> probs = forward(state, batch, train_mode, dropout_seed, &cache);
  SoftCeResult ce = soft_ce_loss(probs, targets);
  std::vector<double> grad = backward(state, cache, ce.dprobs);

  auto loss_at = [&](size_t i, double delta) {
    double saved = state.weights[i];
    state.weights[i] = saved + delta;
    double loss = soft_ce_loss(forward(state, batch, train_mode, dropout_seed), targets).loss;
    state.weights[i] = saved;
    return loss;
  };
  const double h = 1e-3;
  size_t checked = 0, worst_at = 0;
  double worst = 0.0;
  for (size_t i = 0; i < state.weights.size(); ++i) {
    double central_h = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
    double central_2h = (loss_at(i, 2.0 * h) - loss_at(i, -2.0 * h)) / (4.0 * h);
    double fd = (4.0 * central_h - central_2h) / 3.0;
    double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-8});
    if (rel > worst) {
      worst = rel;
      worst_at = i;
    }
    ++checked;
  }
  INFO("worst rel err ", worst, " at ", state.layout.containing(worst_at).name);
  CHECK(checked == state.weights.size());
  CHECK(worst < 1e-3);
}

}  // namespace

TEST_CASE("init_params is deterministic per seed and differs across seeds") {
  ModelConfig cfg = tiny_config(16);
  ModelState a1 = init_params(cfg, 0);
  ModelState a2 = init_params(cfg, 0);
  ModelState b = init_params(cfg, 1);
  CHECK(a1.weights == a2.weights);
  CHECK(a1.weights != b.weights);
  for (double w : a1.weights) CHECK(std::isfinite(w));
  CHECK(a1.tensor("cdr3_proj_b")[0] == 0.0);
  CHECK(a1.tensor("layer0.ln1_g")[0] == 1.0);
}

TEST_CASE("token_dim must divide by n_heads") {
  ModelConfig cfg = tiny_config(16, 1, 3);
  CHECK_THROWS_AS(init_params(cfg, 0), std::invalid_argument);
}

TEST_CASE("zero head yields exactly (0.5, 0.5)") {
  ModelConfig cfg = tiny_config(16);
  ModelState state = init_params(cfg, 3);
  auto head_w = state.tensor("head_w");
  auto head_b = state.tensor("head_b");
  std::fill(head_w.begin(), head_w.end(), 0.0);
  std::fill(head_b.begin(), head_b.end(), 0.0);
  Batch batch = encode_batch(sample_records(), cfg);
  std::vector<double> probs = forward(state, batch, false, 0);
  for (double p : probs) CHECK(p == 0.5);
}

TEST_CASE("softmax rows sum to 1 and stay strictly inside (0, 1)") {
  ModelConfig cfg = tiny_config(16);
  ModelState state = init_params(cfg, 11);
  Batch batch = encode_batch(sample_records(), cfg);
  std::vector<double> probs = forward(state, batch, false, 0);
  for (int r = 0; r < batch.rows; ++r) {
    double sum = probs[2 * r] + probs[2 * r + 1];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(probs[2 * r] > 0.0);
    CHECK(probs[2 * r] < 1.0);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  gradient_check(tiny_config(8, 1, 1), false, 0.0, 0);
}

TEST_CASE("gradients stay exact with multiple layers and heads") {
  gradient_check(tiny_config(8, 2, 2), false, 0.0, 0);
}

TEST_CASE("gradients stay exact under a fixed dropout mask") {
  gradient_check(tiny_config(8, 1, 1), true, 0.25, 42);
}

TEST_CASE("backward is linear in the upstream gradient") {
  ModelConfig cfg = tiny_config(8);
  ModelState state = init_params(cfg, 5);
  Batch batch = encode_batch(sample_records(), cfg);
  ForwardCache cache;
  std::vector<double> probs = forward(state, batch, false, 0, &cache);
  std::vector<double> dprobs(probs.size());
  Rng rng(99);
  for (auto& v : dprobs) v = rng.next_double() - 0.5;
  std::vector<double> g1 = backward(state, cache, dprobs);
  for (auto& v : dprobs) v *= 2.0;
  std::vector<double> g2 = backward(state, cache, dprobs);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));

  std::vector<double> zero(probs.size(), 0.0);
  std::vector<double> gz = backward(state, cache, zero);
  for (double v : gz) CHECK(v == 0.0);
}

TEST_CASE("backward rejects a mismatched cache") {
  ModelConfig cfg = tiny_config(8);
  ModelState state = init_params(cfg, 5);
  Batch batch = encode_batch(sample_records(), cfg);
  ForwardCache cache;
  forward(state, batch, false, 0, &cache);
  std::vector<double> dprobs(2, 0.0);  // wrong row count
  CHECK_THROWS_AS(backward(state, cache, dprobs), std::invalid_argument);
  ModelState other = init_params(tiny_config(16), 5);
  std::vector<double> dp(static_cast<size_t>(batch.rows) * 2, 0.0);
  CHECK_THROWS_AS(backward(other, cache, dp), std::invalid_argument);
}

TEST_CASE("padding region does not influence probabilities") {
  ModelConfig cfg = tiny_config(16);
  ModelState state = init_params(cfg, 21);
  Batch batch = encode_batch(sample_records(), cfg);
  std::vector<double> before = forward(state, batch, false, 0);
  // Scribble over everything beyond each row's length.
  for (int r = 0; r < batch.rows; ++r)
    for (int p = batch.len[static_cast<size_t>(r)]; p < batch.width; ++p)
      batch.aa[static_cast<size_t>(r) * batch.width + p] = (p + r) % kAaAlphabetSize;
  std::vector<double> after = forward(state, batch, false, 0);
  CHECK(before == after);
}

TEST_CASE("changing the V gene changes the CLS output") {
  ModelConfig cfg = tiny_config(16);
  ModelState state = init_params(cfg, 31);
  std::vector<SequenceRecord> recs = {{"CASSLG", 1, 0, 2, 0.5}};
  std::vector<double> p1 = predict_proba(state, recs);
  recs[0].v_gene = 3;
  std::vector<double> p2 = predict_proba(state, recs);
  CHECK(p1[0] != p2[0]);
}

TEST_CASE("encode_batch validates input") {
  ModelConfig cfg = tiny_config(8);
  std::vector<SequenceRecord> bad_char = {{"CASSB", 0, 0, 0, 0.1}};
  CHECK_THROWS_WITH_AS(encode_batch(bad_char, cfg),
                       doctest::Contains("unknown amino acid"), std::invalid_argument);
  std::vector<SequenceRecord> too_long = {{"ACDEFGHIKLMNP", 0, 0, 0, 0.1}};
  CHECK_THROWS_WITH_AS(encode_batch(too_long, cfg), doctest::Contains("longer than"),
                       std::invalid_argument);
  std::vector<SequenceRecord> bad_gene = {{"CASS", 9, 0, 0, 0.1}};
  CHECK_THROWS_AS(encode_batch(bad_gene, cfg), std::invalid_argument);
}

TEST_CASE("adam first step moves by about -lr * sign(g)") {
  ModelConfig cfg = tiny_config(8);
  ModelState state = init_params(cfg, 1);
  std::vector<double> before = state.weights;
  std::vector<double> grad(state.weights.size(), 0.5);
  AdamConfig adam;
  adam.lr = 0.01;
  adam_step(state, grad, adam);
  CHECK(state.step == 1);
  for (size_t i = 0; i < state.weights.size(); ++i)
    CHECK(std::abs(state.weights[i] - (before[i] - adam.lr)) < 1e-6);
}

TEST_CASE("adam with zero gradient or zero lr leaves weights unchanged") {
  ModelConfig cfg = tiny_config(8);
  ModelState state = init_params(cfg, 1);
  std::vector<double> before = state.weights;
  std::vector<double> zeros(state.weights.size(), 0.0);
  AdamConfig adam;
  adam_step(state, zeros, adam);
  CHECK(state.weights == before);

  ModelState state2 = init_params(cfg, 1);
  std::vector<double> grad(state2.weights.size(), 1.0);
  AdamConfig frozen;
  frozen.lr = 0.0;
  adam_step(state2, grad, frozen);
  CHECK(state2.weights == before);
  CHECK(state2.adam_m[0] != 0.0);  // moments still accumulate
}

TEST_CASE("adam names the parameter carrying a non-finite gradient") {
  ModelConfig cfg = tiny_config(8);
  ModelState state = init_params(cfg, 1);
  std::vector<double> grad(state.weights.size(), 0.0);
  grad[state.layout.at("head_w").offset] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(state, grad, AdamConfig{}), doctest::Contains("head_w"),
                       std::runtime_error);
}

TEST_CASE("predict_proba is deterministic and thread-count independent") {
  ModelConfig cfg = tiny_config(16);
  ModelState state = init_params(cfg, 77);
  std::vector<SequenceRecord> recs;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    int len = rng.next_int(1, cfg.max_cdr3_len);
    for (int j = 0; j < len; ++j) s += kAminoAcids[rng.next_below(kAaAlphabetSize)];
    recs.push_back({s, rng.next_int(0, cfg.v_vocab - 1), rng.next_int(0, cfg.d_vocab - 1),
                    rng.next_int(0, cfg.j_vocab - 1), 0.001});
  }
  std::vector<double> p1 = predict_proba(state, recs, 1);
  std::vector<double> p2 = predict_proba(state, recs, 4);
  std::vector<double> p3 = predict_proba(state, recs, 1);
  CHECK(p1 == p2);
  CHECK(p1 == p3);
  for (double p : p1) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}
