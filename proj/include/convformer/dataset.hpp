#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convformer/tensor.hpp"

namespace convformer {

struct DatasetSpec {
  int count = 400;
  int image_size = 48;  // multiple of 8, in [32, 128]
  int num_classes = 4;  // background + shape categories
  std::uint64_t seed = 42;

  void validate() const;
};

struct ShapeInfo {
  int cls = 0;
  double cx = 0.0, cy = 0.0, radius = 0.0;
};

struct Sample {
  Tensor image;   // [S, S, 3] float32 in [0, 1]
  Tensor labels;  // [S, S] class indices stored as float32
  std::vector<ShapeInfo> shapes;
};

/// Seeded synthetic segmentation set: each image carries 1-3 colored
/// shapes (squares, circles, triangles) with disjoint bounding boxes on a
/// noisy background; labels are the exact rasterizations. Item i is
/// generated from an independent fork of the dataset seed, so
/// regeneration is bit-identical and parallel-safe by index. The first
/// shape of image i cycles through the non-background classes, which
/// guarantees every class appears in at least 1/(K-1) of the images.
class SyntheticDataset {
 public:
  explicit SyntheticDataset(const DatasetSpec& spec);

  int size() const { return static_cast<int>(items_.size()); }
  const Sample& item(int i) const { return items_.at(static_cast<std::size_t>(i)); }
  const DatasetSpec& spec() const { return spec_; }

  /// "background", then "<color> <shape>" pairs; supports K in [2, 9].
  static std::vector<std::string> class_names(int num_classes);

 private:
  DatasetSpec spec_;
  std::vector<Sample> items_;
};

}  // namespace convformer
