#include <doctest.h>

#include <cmath>
#include <set>

#include "convformer/dataset.hpp"
#include "convformer/naive_ref.hpp"
#include "convformer/optimizer.hpp"
#include "convformer/trainer.hpp"

using namespace convformer;

namespace {

ExperimentSpec quick_spec(int steps = 5) {
  ExperimentSpec spec;
  spec.train_data = DatasetSpec{24, 32, 4, 42};
  spec.eval_data = DatasetSpec{8, 32, 4, 43};
  spec.pipeline.fusion.channels = 16;
  spec.pipeline.fusion.heads = 4;
  spec.pipeline.fusion_depth = 1;
  spec.pipeline.vis_channels = 16;
  spec.pipeline.text_channels = 16;
  spec.train.steps = steps;
  spec.train.seed = 7;
  spec.model_seed = 7;
  return spec;
}

}  // namespace

TEST_CASE("dataset regeneration is bit-identical") {
  DatasetSpec spec{12, 48, 4, 42};
  SyntheticDataset a(spec);
  SyntheticDataset b(spec);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.item(i).image.data() == b.item(i).image.data());
    CHECK(a.item(i).labels.data() == b.item(i).labels.data());
  }
}

TEST_CASE("dataset covers every class over 200 images") {
  SyntheticDataset data(DatasetSpec{200, 32, 4, 1});
  std::set<int> seen;
  for (int i = 0; i < data.size(); ++i) {
    for (double v : data.item(i).labels.data()) seen.insert(static_cast<int>(v));
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3});

  // Coverage guarantee: each non-background class appears in >= 5% of
  // images because the first shape cycles deterministically.
  std::vector<int> images_with(4, 0);
  for (int i = 0; i < data.size(); ++i) {
    std::set<int> present;
    for (double v : data.item(i).labels.data()) present.insert(static_cast<int>(v));
    for (int cls : present) images_with[cls]++;
  }
  for (int cls = 1; cls < 4; ++cls) {
    CHECK(images_with[cls] >= data.size() / 20);
  }
}

TEST_CASE("shape centers carry their class label") {
  SyntheticDataset data(DatasetSpec{40, 48, 4, 9});
  int checked = 0;
  for (int i = 0; i < data.size(); ++i) {
    const Sample& item = data.item(i);
    for (const ShapeInfo& shape : item.shapes) {
      const int x = static_cast<int>(shape.cx);
      const int y = static_cast<int>(shape.cy);
      CHECK(static_cast<int>(item.labels.at({y, x})) == shape.cls);
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("dataset spec validation") {
  CHECK_THROWS_AS(SyntheticDataset(DatasetSpec{10, 30, 4, 1}), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticDataset(DatasetSpec{10, 48, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticDataset(DatasetSpec{10, 48, 12, 1}), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticDataset(DatasetSpec{0, 48, 4, 1}), std::invalid_argument);
}

TEST_CASE("param groups form a disjoint exhaustive partition") {
  ExperimentSpec spec = quick_spec();
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(spec.pipeline, text, 7, Dtype::F32);
  auto groups = make_param_groups(p.params(), 2e-3);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].name == "backbone");
  CHECK(groups[0].lr == 2e-3 * 0.1);
  CHECK(groups[1].lr == 2e-3);

  std::set<std::size_t> seen;
  for (const auto& g : groups) {
    for (std::size_t i : g.param_indices) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == p.params().size());
  for (std::size_t i : groups[0].param_indices) {
    CHECK(p.params()[i].name.rfind("backbone.", 0) == 0);
  }
  // Frozen embeddings are not parameters at all.
  for (const Param& prm : p.params()) CHECK(prm.name.find("text_matrix") == std::string::npos);
}

TEST_CASE("adamw single-step hand values") {
  std::vector<Param> params;
  params.push_back(Param{"p", Tensor::from_data({1.0}, {1}, Dtype::F64, true), false});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(params, make_param_groups(params, 0.1), cfg);
  params[0].tensor.accumulate_grad({1.0});
  opt.step();
  // Bias-corrected m_hat = 1, v_hat = 1 at t=1.
  CHECK(params[0].tensor.value() == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw decoupled decay shrinks parameters multiplicatively") {
  std::vector<Param> params;
  params.push_back(Param{"p", Tensor::from_data({2.0}, {1}, Dtype::F64, true), false});
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  AdamW opt(params, make_param_groups(params, 0.1), cfg);
  params[0].tensor.accumulate_grad({0.0});
  opt.step();
  CHECK(params[0].tensor.value() == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("adamw leaves parameters alone with zero grads and zero decay") {
  std::vector<Param> params;
  params.push_back(Param{"p", Tensor::from_data({1.25}, {1}, Dtype::F64, true), false});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(params, make_param_groups(params, 0.1), cfg);
  params[0].tensor.accumulate_grad({0.0});
  opt.step();
  CHECK(params[0].tensor.value() == 1.25);
}

TEST_CASE("adamw uses each group's own learning rate") {
  std::vector<Param> params;
  params.push_back(Param{"backbone.w", Tensor::from_data({1.0}, {1}, Dtype::F64, true), true});
  params.push_back(Param{"rest.w", Tensor::from_data({1.0}, {1}, Dtype::F64, true), false});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(params, make_param_groups(params, 0.1), cfg);
  params[0].tensor.accumulate_grad({1.0});
  params[1].tensor.accumulate_grad({1.0});
  opt.step();
  const double backbone_step = 1.0 - params[0].tensor.value();
  const double rest_step = 1.0 - params[1].tensor.value();
  CHECK(backbone_step == doctest::Approx(rest_step * 0.1).epsilon(1e-9));
}

TEST_CASE("adamw demands gradients for every registered parameter") {
  std::vector<Param> params;
  params.push_back(Param{"p", Tensor::from_data({1.0}, {1}, Dtype::F64, true), false});
  AdamW opt(params, make_param_groups(params, 0.1), AdamWConfig{});
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("missing gradient"), std::runtime_error);
}

TEST_CASE("adamw matches the scalar transcription over 100 quadratic steps") {
  std::vector<Param> params;
  params.push_back(Param{"p", Tensor::from_data({1.0}, {1}, Dtype::F64, true), false});
  AdamWConfig cfg;
  cfg.weight_decay = 1e-2;
  AdamW opt(params, make_param_groups(params, 0.05), cfg);

  naive::AdamWScalarRef ref;
  double ref_p = 1.0;
  for (int step = 0; step < 100; ++step) {
    const double grad = params[0].tensor.value();  // d/dp of p^2/2
    params[0].tensor.zero_grad();
    params[0].tensor.accumulate_grad({grad});
    opt.step();
    ref_p = ref.step(ref_p, ref_p, 0.05, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    CHECK(params[0].tensor.value() == doctest::Approx(ref_p).epsilon(1e-12));
  }
}

TEST_CASE("miou oracle handles the hand confusion-matrix example") {
  // 2-class set split 50/50, prediction constant class 0:
  // IoU_0 = 0.5, IoU_1 = 0, mIoU = 0.25.
  std::vector<int> truth(100), pred(100, 0);
  for (int i = 50; i < 100; ++i) truth[i] = 1;
  std::vector<double> per_class;
  CHECK(naive::miou(pred, truth, 2, 255, &per_class) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(per_class[1] == 0.0);

  // Perfect prediction.
  CHECK(naive::miou(truth, truth, 2, 255) == doctest::Approx(1.0).epsilon(1e-12));

  // A class absent from both sides is excluded from the mean.
  CHECK(naive::miou(truth, truth, 3, 255) == doctest::Approx(1.0).epsilon(1e-12));

  // Ignored pixels do not count.
  std::vector<int> with_ignore = truth;
  with_ignore[0] = 255;
  CHECK(naive::miou(pred, with_ignore, 2, 255) > 0.24);
}

TEST_CASE("pipeline evaluation equals the naive confusion-matrix oracle") {
  ExperimentSpec spec = quick_spec();
  SyntheticDataset eval_set(DatasetSpec{6, 32, 4, 11});
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  SegmentationPipeline p(spec.pipeline, text, 7, Dtype::F32);

  MiouResult result = evaluate_miou(p, eval_set);

  std::vector<int> pred, truth;
  for (int i = 0; i < eval_set.size(); ++i) {
    const Sample& item = eval_set.item(i);
    auto out = p.forward(item.image);
    const auto& logits = out.logits.data();
    for (std::int64_t pix = 0; pix < item.labels.numel(); ++pix) {
      int best = 0;
      for (int c = 1; c < 4; ++c) {
        if (logits[pix * 4 + c] > logits[pix * 4 + best]) best = c;
      }
      pred.push_back(best);
      truth.push_back(static_cast<int>(item.labels.data()[pix]));
    }
  }
  std::vector<double> per_class;
  const double expect = naive::miou(pred, truth, 4, kIgnoreLabel, &per_class);
  CHECK(result.miou == doctest::Approx(expect).epsilon(1e-12));
  for (int c = 0; c < 4; ++c) {
    CHECK(result.per_class_iou[c] == doctest::Approx(per_class[c]).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic and keeps the text embeddings frozen") {
  ExperimentSpec spec = quick_spec(10);
  ExperimentResult a = run_experiment(spec);
  ExperimentResult b = run_experiment(spec);
  REQUIRE(a.report.losses.size() == 10);
  CHECK(a.report.losses == b.report.losses);
  CHECK(a.eval.miou == b.eval.miou);

  // Frozen-text invariant, verified against a fresh encoder run.
  TextEmbeddings reference = stub_text_encoder(SyntheticDataset::class_names(4), 16, 5);
  CHECK(a.pipeline->text_matrix().data() == reference.matrix.astype(Dtype::F32).data());
}

TEST_CASE("short training reduces the loss on the toy task") {
  // Median over 3 seeds of loss(step 50) vs loss(step 1).
  int improved = 0;
  for (std::uint64_t seed : {101ULL, 102ULL, 103ULL}) {
    ExperimentSpec spec = quick_spec(50);
    spec.train_data = DatasetSpec{32, 32, 4, 42};
    spec.model_seed = seed;
    spec.train.seed = seed;
    ExperimentResult result = run_experiment(spec);
    if (result.report.losses.back() < result.report.losses.front()) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("non-finite losses abort with the failing step") {
  ExperimentSpec spec = quick_spec(3);
  spec.train.base_lr = 1e18;  // forces divergence
  CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("step"), std::runtime_error);
}

TEST_CASE("bridge ablation emits the three-variant table") {
  ExperimentSpec spec = quick_spec(2);
  spec.train_data.count = 8;
  spec.eval_data.count = 4;
  BridgeAblationReport report = ablate_bridge(spec, {1, 2}, 2);
  REQUIRE(report.variants == std::vector<std::string>{"cross_attention", "inner_product",
                                                      "no_fusion"});
  REQUIRE(report.miou.size() == 3);
  for (const auto& row : report.miou) CHECK(row.size() == 2);
  CHECK(report.mean_miou.size() == 3);

  // The no-fusion row is exactly a depth-0 pipeline run.
  ExperimentSpec baseline = spec;
  baseline.pipeline.fusion_depth = 0;
  baseline.model_seed = 1;
  baseline.train.seed = 1;
  CHECK(report.miou[2][0] == run_experiment(baseline).eval.miou);

  CHECK_THROWS_AS(ablate_bridge(spec, {1}, 1), std::invalid_argument);

  const std::string csv = report.to_csv();
  CHECK(csv.find("variant,seed1,seed2,mean\n") == 0);
}

TEST_CASE("depth ablation produces strictly increasing MACs") {
  ExperimentSpec spec = quick_spec(2);
  spec.train_data.count = 8;
  spec.eval_data.count = 4;
  DepthAblationReport report = ablate_depth(spec, {1, 2, 4}, {1, 2}, 2);
  REQUIRE(report.depths == std::vector<int>{1, 2, 4});
  for (std::size_t i = 1; i < report.macs.size(); ++i) {
    CHECK(report.macs[i] > report.macs[i - 1]);
  }
  for (double m : report.mean_miou) {
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);
  }
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("depth,mean_miou,std_miou,macs\n", 0) == 0);

  CHECK_THROWS_AS(ablate_depth(spec, {2, 1}, {1, 2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(ablate_depth(spec, {}, {1, 2}, 1), std::invalid_argument);
}
