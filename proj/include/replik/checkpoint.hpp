#pragma once
// Model checkpoints: a self-describing JSON container holding the model
// config, the gene vocabulary it was trained with, every parameter tensor,
// and the validation-selected decision threshold. Optimizer moments are not
// persisted; a loaded checkpoint is an inference artifact.

#include <filesystem>
#include <optional>

#include "replik/core.hpp"
#include "replik/nn.hpp"

namespace replik {

struct Checkpoint {
  ModelState state;
  GeneVocab vocab;
  std::optional<double> threshold;
};

void save_checkpoint(const ModelState& state, const GeneVocab& vocab,
                     std::optional<double> threshold, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace replik
