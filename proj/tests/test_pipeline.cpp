#include <doctest.h>

#include <cmath>
#include <cstring>

#include "convformer/dataset.hpp"
#include "convformer/naive_ref.hpp"
#include "convformer/pipeline.hpp"
#include "convformer/rng.hpp"
#include "convformer/trainer.hpp"

using namespace convformer;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

PipelineConfig tiny_pipeline_cfg() {
  PipelineConfig cfg;
  cfg.fusion.channels = 16;
  cfg.fusion.heads = 4;
  cfg.fusion_depth = 1;
  cfg.vis_channels = 16;
  cfg.text_channels = 16;
  return cfg;
}

Tensor random_image(int size, Rng& rng, Dtype dt = Dtype::F32) {
  std::vector<double> v(static_cast<std::size_t>(size) * size * 3);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from_data(std::move(v), {size, size, 3}, dt);
}

// Reimplementation of the documented stub-embedding recipe, written
// independently of the Rng class: SplitMix64 over seed ^ fnv1a64(prompt),
// top-53-bit uniforms mapped to [-1, 1), then L2 normalization.
std::vector<double> recipe_row(const std::string& name, std::uint64_t seed, int c_text) {
  const std::string prompt = "a photo of a " + name + ".";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : prompt) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t state = seed ^ h;
  std::vector<double> row(static_cast<std::size_t>(c_text));
  for (double& v : row) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
    v = -1.0 + 2.0 * u;
  }
  double norm = 0.0;
  for (double v : row) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : row) v = static_cast<double>(static_cast<float>(v / norm));
  return row;
}

}  // namespace

TEST_CASE("stub text encoder is deterministic with unit rows") {
  const auto names = SyntheticDataset::class_names(4);
  TextEmbeddings a = stub_text_encoder(names, 16, 5);
  TextEmbeddings b = stub_text_encoder(names, 16, 5);
  CHECK(a.matrix.data() == b.matrix.data());

  for (int row = 0; row < 4; ++row) {
    double norm = 0.0;
    for (int i = 0; i < 16; ++i) norm += a.matrix.at({row, i}) * a.matrix.at({row, i});
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TextEmbeddings c = stub_text_encoder(names, 16, 6);
  CHECK(a.matrix.data() != c.matrix.data());

  CHECK_THROWS_WITH_AS(stub_text_encoder({"a", "a"}, 8, 1), doctest::Contains("duplicate"),
                       std::invalid_argument);
  CHECK_THROWS_AS(stub_text_encoder({"solo"}, 8, 1), std::invalid_argument);
}

TEST_CASE("stub text encoder matches the documented recipe") {
  const auto names = SyntheticDataset::class_names(4);
  TextEmbeddings emb = stub_text_encoder(names, 16, 5);
  for (int row = 0; row < 4; ++row) {
    const std::vector<double> expect = recipe_row(names[row], 5, 16);
    for (int i = 0; i < 16; ++i) {
      CHECK(emb.matrix.at({row, i}) == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("align shape contract maps both streams to the fusion width") {
  PipelineConfig cfg;
  cfg.fusion.channels = 16;
  cfg.fusion.heads = 4;
  cfg.fusion_depth = 0;
  cfg.vis_channels = 24;
  cfg.text_channels = 12;
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(6), 12, 5);
  SegmentationPipeline p(cfg, text, 3, Dtype::F32);
  Rng rng(60);
  auto probe = p.probe(random_image(32, rng));
  CHECK(probe.fused_feature.shape() == Shape{4, 4, 16});
  CHECK(probe.fused_text.shape() == Shape{6, 16});
  CHECK(probe.score_map.shape() == Shape{4, 4, 6});
}

TEST_CASE("identity projections pass features through") {
  // The alignment layers are 1x1 conv / linear; with identity weights and
  // zero bias they are exact passthroughs.
  Rng rng(61);
  std::vector<double> eye(16 * 16, 0.0);
  for (int i = 0; i < 16; ++i) eye[i * 16 + i] = 1.0;
  Tensor conv_eye = Tensor::from_data(eye, {1, 1, 16, 16}, Dtype::F64);
  Tensor lin_eye = Tensor::from_data(eye, {16, 16}, Dtype::F64);
  std::vector<double> fv(2 * 2 * 16);
  for (double& v : fv) v = rng.uniform(-1, 1);
  Tensor feat = Tensor::from_data(fv, {2, 2, 16}, Dtype::F64);
  CHECK(conv2d(feat, conv_eye, std::nullopt, 1, 0, 1).data() == feat.data());
  std::vector<double> tv(5 * 16);
  for (double& v : tv) v = rng.uniform(-1, 1);
  Tensor text = Tensor::from_data(tv, {5, 16}, Dtype::F64);
  CHECK(matmul(text, lin_eye).data() == text.data());
}

TEST_CASE("score map gathers channels for indicator text rows") {
  // text rows = unit vectors e_k: the score map is a gather of feature
  // channels, and the argmax at a pixel equal to row k is k.
  const int c = 4, k = 3;
  std::vector<double> rows(k * c, 0.0);
  for (int i = 0; i < k; ++i) rows[i * c + i] = 1.0;
  Tensor text = Tensor::from_data(rows, {k, c}, Dtype::F64);
  Rng rng(62);
  std::vector<double> fv(2 * 2 * c);
  for (double& v : fv) v = rng.uniform(0.1, 1.0);
  Tensor feat = Tensor::from_data(fv, {2, 2, c}, Dtype::F64);
  Tensor score = reshape(matmul(reshape(feat, {4, c}), permute(text, {1, 0})), {2, 2, k});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int cls = 0; cls < k; ++cls) CHECK(score.at({i, j, cls}) == feat.at({i, j, cls}));
    }
  }

  naive::Buf expect = naive::score_map(feat.data(), 2, 2, c, text.data(), k, 1.0);
  CHECK(max_abs_diff(score.data(), expect) < 1e-12);
}

TEST_CASE("decoder output is 8x the input with constant fields staying constant") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(cfg, text, 9, Dtype::F32);
  Tensor constant = Tensor::full({1, 1, 16 + 4}, 0.37, Dtype::F32);
  Tensor logits = p.decode(constant);
  CHECK(logits.shape() == Shape{8, 8, 4});
  for (int cls = 0; cls < 4; ++cls) {
    const double v = logits.at({0, 0, cls});
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) CHECK(logits.at({i, j, cls}) == doctest::Approx(v).epsilon(1e-6));
    }
  }
}

TEST_CASE("forward shape contract and determinism") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(cfg, text, 11, Dtype::F32);
  Rng rng(63);
  Tensor image = random_image(32, rng);
  auto out1 = p.forward(image);
  CHECK(out1.logits.shape() == Shape{32, 32, 4});
  CHECK(out1.score_map.shape() == Shape{4, 4, 4});
  CHECK(out1.fused_text.shape() == Shape{4, 16});
  auto out2 = p.forward(image);
  CHECK(out1.logits.data() == out2.logits.data());
  CHECK(out1.score_map.data() == out2.score_map.data());
}

TEST_CASE("forward pads non-multiple-of-8 inputs and crops the logits") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(cfg, text, 11, Dtype::F32);
  Rng rng(64);
  std::vector<double> v(29 * 35 * 3);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  Tensor image = Tensor::from_data(std::move(v), {29, 35, 3}, Dtype::F32);
  auto out = p.forward(image);
  CHECK(out.logits.shape() == Shape{29, 35, 4});
  CHECK(out.score_map.shape() == Shape{4, 5, 4});  // padded grid 32x40 -> 4x5
}

TEST_CASE("permuting text rows permutes score channels and fixes the features") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  cfg.fusion_depth = 2;
  const auto names = SyntheticDataset::class_names(4);
  TextEmbeddings text = stub_text_encoder(names, 16, 5);

  const std::vector<int> perm{2, 0, 3, 1};
  TextEmbeddings permuted;
  for (int i = 0; i < 4; ++i) permuted.class_names.push_back(text.class_names[perm[i]]);
  std::vector<double> pv(4 * 16);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 16; ++j) pv[i * 16 + j] = text.matrix.at({perm[i], j});
  }
  permuted.matrix = Tensor::from_data(std::move(pv), {4, 16}, Dtype::F32);

  SegmentationPipeline p1(cfg, text, 13, Dtype::F32);
  SegmentationPipeline p2(cfg, permuted, 13, Dtype::F32);
  Rng rng(65);
  Tensor image = random_image(32, rng);
  auto probe1 = p1.probe(image);
  auto probe2 = p2.probe(image);

  CHECK(max_abs_diff(probe1.fused_feature.data(), probe2.fused_feature.data()) < 1e-5);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int cls = 0; cls < 4; ++cls) {
        CHECK(probe2.score_map.at({i, j, cls}) ==
              doctest::Approx(probe1.score_map.at({i, j, perm[cls]})).epsilon(1e-5));
      }
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 16; ++j) {
      CHECK(probe2.fused_text.at({i, j}) ==
            doctest::Approx(probe1.fused_text.at({perm[i], j})).epsilon(1e-5));
    }
  }
}

TEST_CASE("loss combines the main and auxiliary terms") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(cfg, text, 15, Dtype::F32);
  Rng rng(66);
  Tensor image = random_image(32, rng);
  std::vector<double> lv(32 * 32);
  for (double& v : lv) v = static_cast<double>(rng.below(4));
  Tensor labels = Tensor::from_data(std::move(lv), {32, 32}, Dtype::F32);

  auto out = p.forward(image);
  const double main_only = p.loss(out, labels, 0.0).value();
  Tensor manual = cross_entropy(reshape(out.logits, {32 * 32, 4}),
                                reshape(labels, {32 * 32}), kIgnoreLabel);
  CHECK(main_only == doctest::Approx(manual.value()).epsilon(1e-7));

  const double with_aux = p.loss(out, labels, 0.4).value();
  Tensor small = downsample_labels(labels, 8);
  Tensor aux = cross_entropy(reshape(out.score_map, {16, 4}), reshape(small, {16}), kIgnoreLabel);
  CHECK(with_aux == doctest::Approx(main_only + 0.4 * aux.value()).epsilon(1e-6));
}

TEST_CASE("gradients reach every trainable parameter and never the embeddings") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(cfg, text, 17, Dtype::F32);
  Rng rng(67);
  Tensor image = random_image(32, rng);
  std::vector<double> lv(32 * 32);
  for (double& v : lv) v = static_cast<double>(rng.below(4));
  Tensor labels = Tensor::from_data(std::move(lv), {32, 32}, Dtype::F32);

  p.zero_grads();
  Graph graph;
  auto out = p.forward(image);
  Tensor loss = p.loss(out, labels, 0.4);
  graph.backward(loss);

  for (const Param& prm : p.params()) {
    INFO(prm.name);
    CHECK(prm.tensor.grad_defined());
    for (double g : prm.tensor.grad()) CHECK(std::isfinite(g));
  }
  CHECK_FALSE(p.text_matrix().grad_defined());
  CHECK_FALSE(p.text_matrix().requires_grad());
}

TEST_CASE("text embeddings width must match the configured text channels") {
  PipelineConfig cfg = tiny_pipeline_cfg();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 8, 5);
  CHECK_THROWS_WITH_AS(SegmentationPipeline(cfg, text, 1, Dtype::F32),
                       doctest::Contains("text_channels"), std::invalid_argument);
}

TEST_CASE("label downsampling samples cell centers") {
  std::vector<double> lv(16 * 16, 0.0);
  for (int i = 8; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) lv[i * 16 + j] = 2.0;
  }
  Tensor labels = Tensor::from_data(std::move(lv), {16, 16}, Dtype::F32);
  Tensor small = downsample_labels(labels, 8);
  CHECK(small.shape() == Shape{2, 2});
  CHECK(small.at({0, 0}) == 0.0);
  CHECK(small.at({1, 0}) == 2.0);
}
