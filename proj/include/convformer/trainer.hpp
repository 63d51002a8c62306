#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "convformer/conv_former.hpp"
#include "convformer/dataset.hpp"
#include "convformer/optimizer.hpp"
#include "convformer/pipeline.hpp"

namespace convformer {

struct TrainOptions {
  int steps = 300;
  int batch_size = 1;
  double base_lr = 1e-3;
  AdamWConfig adamw;
  double aux_weight = 0.4;
  std::uint64_t seed = 42;

  void validate() const;
};

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class_iou;  // entries for absent classes are 0
  std::vector<bool> class_present;    // present in prediction or ground truth
  std::vector<std::int64_t> confusion;  // K x K row-major, rows = truth
};

MiouResult evaluate_miou(const SegmentationPipeline& pipeline, const SyntheticDataset& data);

struct RunReport {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<double> losses;
  double final_miou = 0.0;
  std::vector<double> per_class_iou;
  std::int64_t param_total = 0;
  std::int64_t param_backbone = 0;
  std::int64_t param_rest = 0;
  nlohmann::json flops;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

/// Seeded shuffling + forward/loss/backward/adamw per step. Throws with
/// the failing step number if the loss goes non-finite. The text
/// embedding matrix is asserted bitwise unchanged at the end.
RunReport train_pipeline(SegmentationPipeline& pipeline, const SyntheticDataset& train_data,
                         const TrainOptions& opts);

/// One self-contained run: dataset + embeddings + pipeline + training +
/// final evaluation.
struct ExperimentSpec {
  DatasetSpec train_data;
  DatasetSpec eval_data{100, 48, 4, 43};
  PipelineConfig pipeline;
  TrainOptions train;
  std::uint64_t model_seed = 7;
  std::uint64_t text_seed = 5;

  nlohmann::json to_json() const;
};

struct ExperimentResult {
  RunReport report;
  MiouResult eval;
  std::shared_ptr<SegmentationPipeline> pipeline;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

// ---- ablations --------------------------------------------------------------

/// Bounded by CONVFORMER_THREADS (and the workers argument); runs are
/// independent and aggregated in a fixed order.
struct BridgeAblationReport {
  std::vector<std::string> variants;  // cross_attention, inner_product, no_fusion
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> miou;  // [variant][seed]
  std::vector<double> mean_miou;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

BridgeAblationReport ablate_bridge(const ExperimentSpec& base, const std::vector<std::uint64_t>& seeds,
                                   int workers);

struct DepthAblationReport {
  std::vector<int> depths;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> miou;  // [depth][seed]
  std::vector<double> mean_miou;
  std::vector<double> std_miou;
  std::vector<std::int64_t> macs;  // fusion + score map MACs per forward

  nlohmann::json to_json() const;
  std::string to_csv() const;  // header: depth,mean_miou,std_miou,macs
};

DepthAblationReport ablate_depth(const ExperimentSpec& base, const std::vector<int>& depths,
                                 const std::vector<std::uint64_t>& seeds, int workers);

int bounded_workers(int requested);

}  // namespace convformer
