#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convformer/pipeline.hpp"

namespace convformer {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct ParamGroup {
  std::string name;
  double lr = 0.0;
  std::vector<std::size_t> param_indices;
};

/// Splits trainable parameters into {backbone at base_lr/10, rest at
/// base_lr}. The partition is exhaustive and disjoint; frozen text
/// embeddings are never registered as parameters in the first place.
std::vector<ParamGroup> make_param_groups(const std::vector<Param>& params, double base_lr);

/// Decoupled-weight-decay Adam. Each step multiplies parameters by
/// (1 - lr * wd) first, then applies the bias-corrected moment update at
/// the owning group's learning rate.
class AdamW {
 public:
  AdamW(std::vector<Param>& params, std::vector<ParamGroup> groups, AdamWConfig cfg);

  /// Throws if any registered parameter is missing its gradient.
  void step();

  std::int64_t step_count() const { return step_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

 private:
  std::vector<Param>* params_;
  std::vector<ParamGroup> groups_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace convformer
