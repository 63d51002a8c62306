#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "convformer/dataset.hpp"
#include "convformer/pipeline.hpp"
#include "convformer/rng.hpp"
#include "convformer/serialize.hpp"

using namespace convformer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("convformer_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Tensor rnd(Shape shape, Rng& rng, Dtype dt) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::from_data(std::move(v), std::move(shape), dt);
}

}  // namespace

TEST_CASE("KJT1 round trip is bit-identical for both dtypes") {
  TempDir dir;
  Rng rng(31);
  for (Dtype dt : {Dtype::F32, Dtype::F64}) {
    Tensor t = rnd({3, 4, 2}, rng, dt);
    const std::string path = dir.file("t.kjt1");
    save_tensor(path, t);
    Tensor back = load_tensor(path);
    CHECK(back.dtype() == dt);
    CHECK(back.shape() == t.shape());
    CHECK(back.data() == t.data());
  }
}

TEST_CASE("KJT1 truncation reports the byte offset") {
  TempDir dir;
  Rng rng(32);
  Tensor t = rnd({2, 3}, rng, Dtype::F64);
  const std::string path = dir.file("t.kjt1");
  save_tensor(path, t);
  const auto full_size = fs::file_size(path);
  fs::resize_file(path, full_size - 5);
  CHECK_THROWS_WITH_AS(load_tensor(path), doctest::Contains("byte offset"), ParseError);

  std::ofstream bad(dir.file("bad.kjt1"), std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_WITH_AS(load_tensor(dir.file("bad.kjt1")), doctest::Contains("magic"), ParseError);
}

TEST_CASE("embeddings file round trip and header validation") {
  TempDir dir;
  TextEmbeddings emb = stub_text_encoder({"background", "red square", "green circle"}, 16, 5);
  const std::string path = dir.file("emb.kjte");
  save_text_embeddings(path, emb);
  TextEmbeddings back = load_text_embeddings(path);
  CHECK(back.class_names == emb.class_names);
  CHECK(back.matrix.data() == emb.matrix.data());
  CHECK(back.matrix.dtype() == Dtype::F32);

  // K = 0 in the header is rejected.
  std::ofstream zero(dir.file("zero.kjte"), std::ios::binary);
  zero << "KJTE";
  const char zeros[8] = {0, 0, 0, 0, 16, 0, 0, 0};
  zero.write(zeros, 8);
  zero.close();
  CHECK_THROWS_WITH_AS(load_text_embeddings(dir.file("zero.kjte")), doctest::Contains("K"),
                       ParseError);

  const auto full_size = fs::file_size(path);
  fs::resize_file(path, full_size - 3);
  CHECK_THROWS_WITH_AS(load_text_embeddings(path), doctest::Contains("byte offset"), ParseError);
}

TEST_CASE("checkpoint round trip restores every parameter exactly") {
  TempDir dir;
  PipelineConfig cfg;
  cfg.fusion.channels = 8;
  cfg.fusion.heads = 2;
  cfg.fusion_depth = 1;
  cfg.vis_channels = 8;
  cfg.text_channels = 8;
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(3), 8, 5);
  SegmentationPipeline a(cfg, text, 7, Dtype::F32);
  SegmentationPipeline b(cfg, text, 8, Dtype::F32);

  const std::string path = dir.file("ckpt.kjtc");
  a.save_checkpoint_file(path);
  CHECK(a.params().size() == b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    differs = differs || a.params()[i].tensor.data() != b.params()[i].tensor.data();
  }
  CHECK(differs);

  b.load_checkpoint_file(path);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    CHECK(a.params()[i].tensor.data() == b.params()[i].tensor.data());
  }
}

TEST_CASE("checkpoint with missing or unknown parameters is rejected") {
  TempDir dir;
  PipelineConfig cfg;
  cfg.fusion.channels = 8;
  cfg.fusion.heads = 2;
  cfg.fusion_depth = 1;
  cfg.vis_channels = 8;
  cfg.text_channels = 8;
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(3), 8, 5);
  SegmentationPipeline p(cfg, text, 7, Dtype::F32);

  NamedTensors entries;
  for (const Param& prm : p.params()) entries.emplace_back(prm.name, prm.tensor);
  entries.pop_back();
  save_checkpoint(dir.file("missing.kjtc"), entries);
  CHECK_THROWS_WITH_AS(p.load_checkpoint_file(dir.file("missing.kjtc")),
                       doctest::Contains("missing"), std::runtime_error);

  entries = NamedTensors();
  for (const Param& prm : p.params()) entries.emplace_back(prm.name, prm.tensor);
  entries.emplace_back("decoder.mystery.weight", Tensor::zeros({1}, Dtype::F32));
  save_checkpoint(dir.file("extra.kjtc"), entries);
  CHECK_THROWS_WITH_AS(p.load_checkpoint_file(dir.file("extra.kjtc")),
                       doctest::Contains("unknown"), std::runtime_error);
}
