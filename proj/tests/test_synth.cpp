#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "replik/core.hpp"
#include "replik/profiles.hpp"
#include "replik/synth.hpp"

using namespace replik;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.n_pos_bags = 6;
  cfg.n_neg_bags = 6;
  cfg.seqs_per_bag = 40;
  cfg.len_min = 8;
  cfg.len_max = 14;
  cfg.motifs = {"WQKF", "NDRG"};
  cfg.witness_rate_pos = 0.2;
  cfg.contamination_rate_neg = 0.02;
  cfg.seed = 77;
  return cfg;
}

bool contains_any_motif(const std::string& s, const std::vector<std::string>& motifs) {
  for (const auto& m : motifs)
    if (s.find(m) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("generation is bit-deterministic in the seed") {
  SynthConfig cfg = small_config();
  SynthDataset a = generate(cfg);
  SynthDataset b = generate(cfg);
  CHECK(a.repertoires == b.repertoires);
  CHECK(a.truth == b.truth);

  cfg.seed += 1;
  SynthDataset c = generate(cfg);
  CHECK(a.repertoires != c.repertoires);
}

TEST_CASE("motif membership is the unique source of ground truth") {
  SynthConfig cfg = small_config();
  SynthDataset ds = generate(cfg);
  for (size_t b = 0; b < ds.repertoires.size(); ++b)
    for (size_t s = 0; s < ds.repertoires[b].sequences.size(); ++s)
      CHECK(static_cast<bool>(ds.truth[b][s]) ==
            contains_any_motif(ds.repertoires[b].sequences[s].cdr3, cfg.motifs));
}

TEST_CASE("per-bag frequencies are normalized") {
  SynthDataset ds = generate(small_config());
  for (const auto& rep : ds.repertoires) {
    double sum = 0.0;
    for (const auto& rec : rep.sequences) sum += rec.frequency;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("zero contamination leaves negative bags clean") {
  SynthConfig cfg = small_config();
  cfg.contamination_rate_neg = 0.0;
  SynthDataset ds = generate(cfg);
  for (size_t b = 0; b < ds.repertoires.size(); ++b) {
    if (*ds.repertoires[b].label == 1) continue;
    for (uint8_t y : ds.truth[b]) CHECK(y == 0);
  }
}

TEST_CASE("noiseless corner has no label noise at all") {
  SynthConfig cfg = small_config();
  cfg.witness_rate_pos = 1.0;
  cfg.contamination_rate_neg = 0.0;
  SynthDataset ds = generate(cfg);
  NoiseProfile np = noise_profile(ds);
  CHECK(np.false_positives == 0);
  CHECK(np.false_negatives == 0);
  CHECK(np.total() == static_cast<size_t>(12 * 40));
}

TEST_CASE("realized witness count sits inside the 99% binomial interval") {
  // Benchmark config: 100 positive bags x 200 sequences, witness 0.04.
  // Total associated ~ Bin(20000, 0.04): mean 800, sd sqrt(768) = 27.7128.
  // 99% z = 2.5758 gives 800 +/- 71.383 -> per-bag mean in [7.28617, 8.71383].
  SynthDataset ds = generate(benchmark_config());
  NoiseProfile np = noise_profile(ds);
  double mean_per_pos_bag = static_cast<double>(np.true_positives) / 100.0;
  CHECK(mean_per_pos_bag >= 7.28617);
  CHECK(mean_per_pos_bag <= 8.71383);
}

TEST_CASE("noise profile matches the configured rates") {
  // FP ~ Bin(20000, 0.96): mean 19200, sd 27.7128, 3 sigma = 83.14.
  // FN ~ Bin(20000, 0.005): mean 100, sd 9.975, 3 sigma = 29.92.
  SynthDataset ds = generate(benchmark_config());
  NoiseProfile np = noise_profile(ds);
  CHECK(np.false_positives >= 19116);
  CHECK(np.false_positives <= 19284);
  CHECK(np.false_negatives >= 70);
  CHECK(np.false_negatives <= 130);
  // The asymmetry premise: false positives dominate by far.
  CHECK(np.false_positives > 10 * np.false_negatives);
}

TEST_CASE("config validation rejects inconsistent settings") {
  SynthConfig cfg = small_config();
  cfg.motifs = {"WQKFABCDE"};  // longer than len_min = 8... 9 chars
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);

  cfg = small_config();
  cfg.motifs.clear();
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);

  cfg = small_config();
  cfg.witness_rate_pos = 0.0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);

  cfg = small_config();
  cfg.contamination_rate_neg = 0.5;
  cfg.witness_rate_pos = 0.3;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);

  cfg = small_config();
  cfg.motifs = {"wqkf"};
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}

TEST_CASE("correlated V gene marks every associated clone") {
  SynthConfig cfg = small_config();
  cfg.correlate_v_gene = true;
  SynthDataset ds = generate(cfg);
  size_t assoc = 0;
  for (size_t b = 0; b < ds.repertoires.size(); ++b)
    for (size_t s = 0; s < ds.truth[b].size(); ++s)
      if (ds.truth[b][s]) {
        ++assoc;
        CHECK(ds.repertoires[b].sequences[s].v_gene == 1);
      }
  CHECK(assoc > 0);
}

TEST_CASE("associated frequency multiplier shifts clone mass") {
  SynthConfig cfg = small_config();
  cfg.assoc_freq_multiplier = 50.0;
  SynthDataset boosted = generate(cfg);
  double boosted_mass = 0.0, base_mass = 0.0;
  SynthDataset base = generate(small_config());
  for (size_t b = 0; b < boosted.repertoires.size(); ++b)
    for (size_t s = 0; s < boosted.truth[b].size(); ++s) {
      if (boosted.truth[b][s]) boosted_mass += boosted.repertoires[b].sequences[s].frequency;
      if (base.truth[b][s]) base_mass += base.repertoires[b].sequences[s].frequency;
    }
  CHECK(boosted_mass > base_mass);
}

TEST_CASE("symmetric control dataset is noiseless and class-symmetric") {
  SynthConfig cfg = symmetric_control_config(5);
  cfg.n_pos_bags = 4;
  cfg.n_neg_bags = 4;
  cfg.seqs_per_bag = 30;
  SynthDataset ds = generate(cfg);
  NoiseProfile np = noise_profile(ds);
  CHECK(np.false_positives == 0);
  CHECK(np.false_negatives == 0);
  for (size_t b = 0; b < ds.repertoires.size(); ++b) {
    bool positive = *ds.repertoires[b].label == 1;
    for (size_t s = 0; s < ds.truth[b].size(); ++s) {
      CHECK(ds.truth[b][s] == (positive ? 1 : 0));
      if (!positive)
        CHECK(contains_any_motif(ds.repertoires[b].sequences[s].cdr3, cfg.neg_motifs));
    }
  }
}

TEST_CASE("flat truth aligns with flatten order and known set matches truth") {
  SynthDataset ds = generate(small_config());
  std::vector<uint8_t> flat = ds.flat_truth();
  InstanceDataset inst = flatten_to_instances(ds.repertoires);
  REQUIRE(flat.size() == inst.size());
  KnownAssociationSet known = ds.known_set();
  for (size_t i = 0; i < inst.size(); ++i)
    CHECK(static_cast<bool>(flat[i]) == known.contains(inst.features[i].cdr3));
}

TEST_CASE("noise_profile requires aligned ground truth") {
  SynthDataset ds = generate(small_config());
  ds.truth.pop_back();
  CHECK_THROWS_AS(noise_profile(ds), std::invalid_argument);
}
