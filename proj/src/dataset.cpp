#include "convformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "convformer/rng.hpp"

namespace convformer {

namespace {

enum class ShapeKind { Square, Circle, Triangle };

struct Category {
  const char* name;
  ShapeKind kind;
  double r, g, b;
};

// Palette for classes 1..8; class 0 is background. Colors repeat across
// shape kinds, so per-pixel color alone cannot separate the classes and
// segmentation has to use spatial context.
constexpr Category kCategories[] = {
    {"red square", ShapeKind::Square, 0.85, 0.15, 0.15},
    {"red circle", ShapeKind::Circle, 0.85, 0.15, 0.15},
    {"blue triangle", ShapeKind::Triangle, 0.15, 0.25, 0.85},
    {"blue square", ShapeKind::Square, 0.15, 0.25, 0.85},
    {"green circle", ShapeKind::Circle, 0.15, 0.80, 0.20},
    {"green triangle", ShapeKind::Triangle, 0.15, 0.80, 0.20},
    {"yellow square", ShapeKind::Square, 0.90, 0.85, 0.20},
    {"yellow circle", ShapeKind::Circle, 0.90, 0.85, 0.20},
};
constexpr int kMaxShapeClasses = static_cast<int>(sizeof(kCategories) / sizeof(kCategories[0]));

struct Placement {
  int cls;
  double cx, cy, radius;
};

bool boxes_overlap(const Placement& a, const Placement& b) {
  const double gap = 1.0;
  return std::abs(a.cx - b.cx) <= a.radius + b.radius + gap &&
         std::abs(a.cy - b.cy) <= a.radius + b.radius + gap;
}

bool inside_shape(const Placement& p, ShapeKind kind, double x, double y) {
  const double dx = x - p.cx;
  const double dy = y - p.cy;
  switch (kind) {
    case ShapeKind::Square:
      return std::abs(dx) <= p.radius && std::abs(dy) <= p.radius;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= p.radius * p.radius;
    case ShapeKind::Triangle: {
      if (dy < -p.radius || dy > p.radius) return false;
      const double half_width = (dy + p.radius) * 0.5;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

Sample make_item(const DatasetSpec& spec, Rng rng, int index) {
  const int s = spec.image_size;
  std::vector<double> image(static_cast<std::size_t>(s) * s * 3);
  std::vector<double> labels(static_cast<std::size_t>(s) * s, 0.0);
  std::vector<ShapeInfo> shapes_out;

  // A strong per-image tint shifts every color in the frame, so class
  // appearance is only meaningful relative to the image itself.
  const double tint_r = rng.uniform(-0.18, 0.18);
  const double tint_g = rng.uniform(-0.18, 0.18);
  const double tint_b = rng.uniform(-0.18, 0.18);
  for (int i = 0; i < s * s; ++i) {
    image[i * 3 + 0] = std::clamp(0.45 + tint_r + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    image[i * 3 + 1] = std::clamp(0.45 + tint_g + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    image[i * 3 + 2] = std::clamp(0.45 + tint_b + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  }

  const int shape_classes = spec.num_classes - 1;
  const int num_shapes = 1 + static_cast<int>(rng.below(3));
  std::vector<Placement> placed;
  for (int n = 0; n < num_shapes; ++n) {
    const int cls = n == 0 ? 1 + index % shape_classes
                           : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(shape_classes)));
    bool ok = false;
    Placement p{};
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      const double size = rng.uniform(s / 3.5, s / 2.2);
      p.cls = cls;
      p.radius = size / 2.0;
      p.cx = rng.uniform(p.radius + 1.0, s - p.radius - 1.0);
      p.cy = rng.uniform(p.radius + 1.0, s - p.radius - 1.0);
      ok = true;
      for (const Placement& other : placed) ok = ok && !boxes_overlap(p, other);
    }
    if (!ok) continue;
    placed.push_back(p);
    shapes_out.push_back(ShapeInfo{p.cls, p.cx, p.cy, p.radius});
    const Category& cat = kCategories[p.cls - 1];
    const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.radius)));
    const int y1 = std::min(s - 1, static_cast<int>(std::ceil(p.cy + p.radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.radius)));
    const int x1 = std::min(s - 1, static_cast<int>(std::ceil(p.cx + p.radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!inside_shape(p, cat.kind, x + 0.5, y + 0.5)) continue;
        const int pix = y * s + x;
        labels[pix] = p.cls;
        image[pix * 3 + 0] = std::clamp(cat.r + tint_r + rng.uniform(-0.05, 0.05), 0.0, 1.0);
        image[pix * 3 + 1] = std::clamp(cat.g + tint_g + rng.uniform(-0.05, 0.05), 0.0, 1.0);
        image[pix * 3 + 2] = std::clamp(cat.b + tint_b + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      }
    }
  }

  Sample item;
  item.image = Tensor::from_data(std::move(image), {s, s, 3}, Dtype::F32);
  item.labels = Tensor::from_data(std::move(labels), {s, s}, Dtype::F32);
  item.shapes = std::move(shapes_out);
  return item;
}

}  // namespace

void DatasetSpec::validate() const {
  if (count < 1) throw std::invalid_argument("dataset.count must be >= 1");
  if (image_size < 32 || image_size > 128 || image_size % 8 != 0) {
    throw std::invalid_argument("dataset.image_size must be a multiple of 8 in [32, 128], got " +
                                std::to_string(image_size));
  }
  if (num_classes < 2 || num_classes > kMaxShapeClasses + 1) {
    throw std::invalid_argument("dataset.classes must be in [2, " +
                                std::to_string(kMaxShapeClasses + 1) + "], got " +
                                std::to_string(num_classes));
  }
}

SyntheticDataset::SyntheticDataset(const DatasetSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng base(spec_.seed);
  items_.reserve(static_cast<std::size_t>(spec_.count));
  for (int i = 0; i < spec_.count; ++i) {
    items_.push_back(make_item(spec_, base.fork(static_cast<std::uint64_t>(i)), i));
  }
}

std::vector<std::string> SyntheticDataset::class_names(int num_classes) {
  if (num_classes < 2 || num_classes > kMaxShapeClasses + 1) {
    throw std::invalid_argument("class_names: classes must be in [2, " +
                                std::to_string(kMaxShapeClasses + 1) + "]");
  }
  std::vector<std::string> names{"background"};
  for (int i = 0; i + 1 < num_classes; ++i) names.emplace_back(kCategories[i].name);
  return names;
}

}  // namespace convformer
