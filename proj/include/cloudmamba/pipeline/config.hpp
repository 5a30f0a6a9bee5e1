#pragma once

// Run configuration shared by every CLI command, serialized as JSON.
// Partial documents are merged over a base, so a config file only needs the
// keys it changes. Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloudmamba/loss.hpp"
#include "cloudmamba/model/refine.hpp"

namespace cloudmamba::pipeline {

struct OptimizerConfig {
  Real lr = 1e-4;
  Real weight_decay = 1e-2;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real lr_min_factor = 1e-2;  // cosine annealing floor as a fraction of lr

  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainingConfig {
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 42;
  // Keeps wall-clock fields out of the log and checkpoint sidecars so two
  // runs with one seed produce identical bytes.
  bool deterministic = false;
  bool augment = true;

  bool operator==(const TrainingConfig&) const = default;
};

struct DataConfig {
  std::string dataset = "data/synth";
  std::string output = "runs/default";
  int patch_size = 64;     // make-synth scene side
  int synth_count = 200;   // make-synth scene count
  Real test_fraction = 0.1;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  model::ModelConfig model;
  loss::LossConfig loss;
  model::ThresholdConfig thresholds;
  OptimizerConfig optimizer;
  TrainingConfig training;
  DataConfig data;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// "paper": full-size defaults (L = 5, 30 epochs, lr 1e-4).
// "desk": L = 3, C0 = 16, 64×64 patches, 5 epochs, batch 8, 200 scenes.
RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
// Applies the keys present in `j` on top of `base`. ConfigError names the
// offending key for unknown keys or ill-typed values.
RunConfig merge_json(RunConfig base, const nlohmann::json& j);
RunConfig load_config_file(const std::string& path, RunConfig base);

// Dotted names of model fields that differ, e.g. "model.levels".
std::vector<std::string> model_differences(const model::ModelConfig& a, const model::ModelConfig& b);

}  // namespace cloudmamba::pipeline
