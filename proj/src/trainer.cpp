#include "convformer/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "convformer/rng.hpp"

namespace convformer {

void TrainOptions::validate() const {
  if (steps < 1) throw std::invalid_argument("train.steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (base_lr <= 0.0) throw std::invalid_argument("train.base_lr must be > 0");
  if (aux_weight < 0.0) throw std::invalid_argument("train.aux_weight must be >= 0");
}

// ---- evaluation --------------------------------------------------------------

MiouResult evaluate_miou(const SegmentationPipeline& pipeline, const SyntheticDataset& data) {
  const int k = static_cast<int>(pipeline.text().classes());
  MiouResult result;
  result.confusion.assign(static_cast<std::size_t>(k) * k, 0);
  for (int i = 0; i < data.size(); ++i) {
    const Sample& sample = data.item(i);
    Tensor image = pipeline.dtype() == Dtype::F32 ? sample.image : sample.image.astype(Dtype::F64);
    auto out = pipeline.forward(image);
    const auto& logits = out.logits.data();
    const auto& labels = sample.labels.data();
    const std::int64_t pixels = sample.labels.numel();
    for (std::int64_t p = 0; p < pixels; ++p) {
      const int truth = static_cast<int>(labels[p]);
      if (truth == kIgnoreLabel) continue;
      const double* row = logits.data() + p * k;
      int best = 0;
      for (int c = 1; c < k; ++c) {
        if (row[c] > row[best]) best = c;
      }
      result.confusion[static_cast<std::size_t>(truth) * k + best] += 1;
    }
  }
  result.per_class_iou.assign(static_cast<std::size_t>(k), 0.0);
  result.class_present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = result.confusion[static_cast<std::size_t>(c) * k + c];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += result.confusion[static_cast<std::size_t>(o) * k + c];
      fn += result.confusion[static_cast<std::size_t>(c) * k + o];
    }
    const std::int64_t unite = tp + fp + fn;
    if (unite == 0) continue;  // absent from both prediction and truth
    result.class_present[c] = true;
    result.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(unite);
    sum += result.per_class_iou[c];
    ++present;
  }
  result.miou = present > 0 ? sum / present : 0.0;
  return result;
}

// ---- training ----------------------------------------------------------------

RunReport train_pipeline(SegmentationPipeline& pipeline, const SyntheticDataset& train_data,
                         const TrainOptions& opts) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> frozen_text = pipeline.text_matrix().data();

  AdamW optimizer(pipeline.params(), make_param_groups(pipeline.params(), opts.base_lr),
                  opts.adamw);

  Rng shuffle_rng(opts.seed);
  std::vector<int> order(static_cast<std::size_t>(train_data.size()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on first use

  RunReport report;
  report.seed = opts.seed;
  report.losses.reserve(static_cast<std::size_t>(opts.steps));
  for (int step = 0; step < opts.steps; ++step) {
    pipeline.zero_grads();
    double step_loss = 0.0;
    for (int b = 0; b < opts.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.below(i))]);
        }
        cursor = 0;
      }
      const Sample& sample = train_data.item(order[cursor++]);
      Tensor image =
          pipeline.dtype() == Dtype::F32 ? sample.image : sample.image.astype(Dtype::F64);
      Graph graph;
      double loss_value;
      try {
        auto out = pipeline.forward(image);
        Tensor loss = pipeline.loss(out, sample.labels, opts.aux_weight);
        loss_value = loss.value();
        if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");
        graph.backward(loss);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training aborted at step " + std::to_string(step) + ": " +
                                 e.what());
      }
      step_loss += loss_value;
    }
    optimizer.step();
    report.losses.push_back(step_loss / opts.batch_size);
  }

  if (pipeline.text_matrix().data() != frozen_text) {
    throw std::logic_error("frozen-text invariant violated: embedding matrix changed");
  }

  std::int64_t backbone_count = 0, rest_count = 0;
  for (const Param& p : pipeline.params()) {
    (p.backbone ? backbone_count : rest_count) += p.tensor.numel();
  }
  report.param_backbone = backbone_count;
  report.param_rest = rest_count;
  report.param_total = backbone_count + rest_count;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- reports -----------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  j["seed"] = seed;
  j["losses"] = losses;
  j["final_miou"] = final_miou;
  j["per_class_iou"] = per_class_iou;
  j["param_count"] = {{"total", param_total}, {"backbone", param_backbone}, {"rest", param_rest}};
  j["flops"] = flops;
  j["wall_seconds"] = wall_seconds;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  r.config = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.losses = j.at("losses").get<std::vector<double>>();
  r.final_miou = j.at("final_miou").get<double>();
  r.per_class_iou = j.at("per_class_iou").get<std::vector<double>>();
  r.param_total = j.at("param_count").at("total").get<std::int64_t>();
  r.param_backbone = j.at("param_count").at("backbone").get<std::int64_t>();
  r.param_rest = j.at("param_count").at("rest").get<std::int64_t>();
  r.flops = j.at("flops");
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json j;
  j["dataset"] = {{"train_count", train_data.count},
                  {"eval_count", eval_data.count},
                  {"image_size", train_data.image_size},
                  {"classes", train_data.num_classes},
                  {"train_seed", train_data.seed},
                  {"eval_seed", eval_data.seed}};
  j["pipeline"] = {{"fusion_depth", pipeline.fusion_depth},
                   {"channels", pipeline.fusion.channels},
                   {"heads", pipeline.fusion.heads},
                   {"ffn_expansion", pipeline.fusion.ffn_expansion},
                   {"bottleneck_expansion", pipeline.fusion.bottleneck_expansion},
                   {"bridge_variant", bridge_variant_name(pipeline.fusion.bridge_variant)},
                   {"zero_init_out_proj", pipeline.fusion.zero_init_out_proj},
                   {"vis_channels", pipeline.vis_channels},
                   {"text_channels", pipeline.text_channels},
                   {"temperature", pipeline.temperature}};
  j["train"] = {{"steps", train.steps},
                {"batch_size", train.batch_size},
                {"base_lr", train.base_lr},
                {"weight_decay", train.adamw.weight_decay},
                {"aux_weight", train.aux_weight},
                {"seed", train.seed}};
  j["model_seed"] = model_seed;
  j["text_seed"] = text_seed;
  return j;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  SyntheticDataset train_set(spec.train_data);
  SyntheticDataset eval_set(spec.eval_data);
  TextEmbeddings text = stub_text_encoder(
      SyntheticDataset::class_names(spec.train_data.num_classes), spec.pipeline.text_channels,
      spec.text_seed);
  auto pipeline =
      std::make_shared<SegmentationPipeline>(spec.pipeline, text, spec.model_seed, Dtype::F32);

  ExperimentResult result;
  result.pipeline = pipeline;
  result.report = train_pipeline(*pipeline, train_set, spec.train);
  result.eval = evaluate_miou(*pipeline, eval_set);
  result.report.final_miou = result.eval.miou;
  result.report.per_class_iou = result.eval.per_class_iou;
  result.report.config = spec.to_json();

  const int fh = spec.train_data.image_size / kOutputStride;
  if (spec.pipeline.fusion_depth > 0) {
    ConvFormerConfig fusion_cfg = spec.pipeline.fusion;
    fusion_cfg.depth = spec.pipeline.fusion_depth;
    fusion_cfg.classes = spec.train_data.num_classes;
    const FlopReport fr = estimate_flops(fusion_cfg, fh, fh, spec.train_data.num_classes);
    nlohmann::json jf;
    for (const TableRow& row : fr.rows()) jf[row.component] = row.value;
    result.report.flops = jf;
  } else {
    const std::int64_t score = static_cast<std::int64_t>(fh) * fh *
                               spec.train_data.num_classes * spec.pipeline.fusion.channels;
    result.report.flops = {{"stack.total", 0}, {"score_map", score}, {"total", score}};
  }
  return result;
}

// ---- ablations ---------------------------------------------------------------

int bounded_workers(int requested) {
  int limit = requested;
  if (const char* env = std::getenv("CONVFORMER_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed >= 1) limit = std::min(limit, parsed);
  }
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw >= 1) limit = std::min(limit, hw);
  return std::max(1, limit);
}

namespace {

// Runs jobs [0, n) over a bounded pool; results land at their own index.
void run_pool(int n, int workers, const std::function<void(int)>& job) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          job(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ExperimentSpec with_seed(ExperimentSpec spec, std::uint64_t seed) {
  spec.model_seed = seed;
  spec.train.seed = seed;
  return spec;
}

}  // namespace

BridgeAblationReport ablate_bridge(const ExperimentSpec& base,
                                   const std::vector<std::uint64_t>& seeds, int workers) {
  if (seeds.size() < 2) throw std::invalid_argument("ablate_bridge: need at least 2 seeds");
  BridgeAblationReport report;
  report.variants = {"cross_attention", "inner_product", "no_fusion"};
  report.seeds = seeds;
  report.miou.assign(report.variants.size(), std::vector<double>(seeds.size(), 0.0));

  struct Job {
    std::size_t variant, seed_index;
    ExperimentSpec spec;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < report.variants.size(); ++v) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      ExperimentSpec spec = with_seed(base, seeds[s]);
      if (report.variants[v] == "no_fusion") {
        spec.pipeline.fusion_depth = 0;
      } else {
        spec.pipeline.fusion.bridge_variant = report.variants[v] == "inner_product"
                                                  ? BridgeVariant::InnerProduct
                                                  : BridgeVariant::CrossAttention;
      }
      jobs.push_back(Job{v, s, std::move(spec)});
    }
  }
  run_pool(static_cast<int>(jobs.size()), bounded_workers(workers), [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    report.miou[job.variant][job.seed_index] = run_experiment(job.spec).eval.miou;
  });
  report.mean_miou.resize(report.variants.size());
  for (std::size_t v = 0; v < report.variants.size(); ++v) {
    double acc = 0.0;
    for (double m : report.miou[v]) acc += m;
    report.mean_miou[v] = acc / static_cast<double>(seeds.size());
  }
  return report;
}

nlohmann::json BridgeAblationReport::to_json() const {
  nlohmann::json j;
  j["variants"] = variants;
  j["seeds"] = seeds;
  j["miou"] = miou;
  j["mean_miou"] = mean_miou;
  j["ordering_note"] = mean_miou[0] >= mean_miou[1]
                           ? "cross_attention >= inner_product on mean mIoU"
                           : "inner_product exceeded cross_attention on mean mIoU at this scale";
  return j;
}

std::string BridgeAblationReport::to_csv() const {
  std::ostringstream os;
  os << "variant";
  for (std::uint64_t s : seeds) os << ",seed" << s;
  os << ",mean\n";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    os << variants[v];
    for (double m : miou[v]) os << "," << m;
    os << "," << mean_miou[v] << "\n";
  }
  return os.str();
}

DepthAblationReport ablate_depth(const ExperimentSpec& base, const std::vector<int>& depths,
                                 const std::vector<std::uint64_t>& seeds, int workers) {
  if (depths.empty()) throw std::invalid_argument("ablate_depth: depths must be non-empty");
  if (depths[0] < 0) throw std::invalid_argument("ablate_depth: depths must be >= 0");
  for (std::size_t i = 1; i < depths.size(); ++i) {
    if (depths[i] <= depths[i - 1]) {
      throw std::invalid_argument("ablate_depth: depths must be strictly ascending");
    }
  }
  DepthAblationReport report;
  report.depths = depths;
  report.seeds = seeds;
  report.miou.assign(depths.size(), std::vector<double>(seeds.size(), 0.0));

  struct Job {
    std::size_t depth_index, seed_index;
    ExperimentSpec spec;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < depths.size(); ++d) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      ExperimentSpec spec = with_seed(base, seeds[s]);
      spec.pipeline.fusion_depth = depths[d];
      jobs.push_back(Job{d, s, std::move(spec)});
    }
  }
  run_pool(static_cast<int>(jobs.size()), bounded_workers(workers), [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    report.miou[job.depth_index][job.seed_index] = run_experiment(job.spec).eval.miou;
  });

  const int fh = base.train_data.image_size / kOutputStride;
  report.mean_miou.resize(depths.size());
  report.std_miou.resize(depths.size());
  report.macs.resize(depths.size());
  for (std::size_t d = 0; d < depths.size(); ++d) {
    double mean = 0.0;
    for (double m : report.miou[d]) mean += m;
    mean /= static_cast<double>(seeds.size());
    double var = 0.0;
    for (double m : report.miou[d]) var += (m - mean) * (m - mean);
    var /= static_cast<double>(seeds.size());
    report.mean_miou[d] = mean;
    report.std_miou[d] = std::sqrt(var);
    if (depths[d] == 0) {
      report.macs[d] = static_cast<std::int64_t>(fh) * fh * base.train_data.num_classes *
                       base.pipeline.fusion.channels;
    } else {
      ConvFormerConfig cfg = base.pipeline.fusion;
      cfg.depth = depths[d];
      cfg.classes = base.train_data.num_classes;
      report.macs[d] = estimate_flops(cfg, fh, fh, base.train_data.num_classes).total;
    }
  }
  return report;
}

nlohmann::json DepthAblationReport::to_json() const {
  nlohmann::json j;
  j["depths"] = depths;
  j["seeds"] = seeds;
  j["miou"] = miou;
  j["mean_miou"] = mean_miou;
  j["std_miou"] = std_miou;
  j["macs"] = macs;
  return j;
}

std::string DepthAblationReport::to_csv() const {
  std::ostringstream os;
  os << "depth,mean_miou,std_miou,macs\n";
  for (std::size_t d = 0; d < depths.size(); ++d) {
    os << depths[d] << "," << mean_miou[d] << "," << std_miou[d] << "," << macs[d] << "\n";
  }
  return os.str();
}

}  // namespace convformer
