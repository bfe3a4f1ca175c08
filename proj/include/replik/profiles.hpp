#pragma once
// Named hyper-parameter profiles and the seeded synthetic benchmark used by
// the acceptance experiments.

#include "replik/nn.hpp"
#include "replik/robust.hpp"
#include "replik/synth.hpp"

namespace replik {

// 1-layer, 1-head, 16-dim tokens; alpha 0.99, beta 0.7, 15 warm-up epochs,
// Adam lr 5e-3, batch 256.
ModelConfig cmv_model_base();
TrainConfig cmv_train_profile();

// 2-layer, 4-head, 192-dim tokens, dropout 0.1; alpha 0.95, beta 0.4,
// 8 warm-up epochs, Adam lr 5e-4, batch 256.
ModelConfig cancer_model_base();
TrainConfig cancer_train_profile();

// Desk-scale profile tuned for the synthetic benchmark below.
ModelConfig synth_model_base();
TrainConfig synth_train_profile();

// 100 + 100 bags of 200 sequences, length-4 motifs, 4% witness rate, 0.5%
// contamination; the dataset every acceptance experiment trains on.
SynthConfig benchmark_config();

// Class-symmetric noiseless control: every positive-bag sequence carries one
// of the target motifs, every negative-bag sequence one of a decoy family.
SynthConfig symmetric_control_config(uint64_t seed);

// Fills vocabulary sizes and max_cdr3_len from the data to be trained on.
ModelConfig resolve_model_config(ModelConfig base, std::span<const Repertoire> repertoires,
                                 const GeneVocab& vocab);

}  // namespace replik
