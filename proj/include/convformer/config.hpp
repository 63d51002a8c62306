#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "convformer/trainer.hpp"

namespace convformer {

/// Flat, documented configuration surface for the CLI. Every key has a
/// default; unknown keys are rejected with their path; a fully-defaulted
/// config is valid and round-trips through JSON losslessly.
struct RunConfig {
  std::uint64_t seed = 42;       // model init + shuffling
  std::uint64_t text_seed = 5;   // stub text encoder
  int workers = 2;               // ablation fan-out bound

  DatasetSpec dataset_train{400, 48, 4, 42};
  DatasetSpec dataset_eval{100, 48, 4, 43};

  PipelineConfig pipeline;  // fusion depth carried by pipeline.fusion_depth
  TrainOptions train;

  std::vector<std::uint64_t> ablate_seeds{1, 2};
  std::vector<int> ablate_depths{1, 2, 4};

  struct FieldDoc {
    std::string path;
    std::string type;
    std::string default_value;
    std::string doc;
  };

  static RunConfig defaults();
  static RunConfig from_json(const nlohmann::json& j);  // strict: unknown keys throw
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);

  void apply_override(const std::string& assignment);  // "key.path=value"
  nlohmann::json to_json() const;
  void validate() const;
  ExperimentSpec to_experiment() const;

  static const std::vector<FieldDoc>& schema();
  static std::string help_text();
};

}  // namespace convformer
