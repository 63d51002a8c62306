#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "convformer/config.hpp"
#include "convformer/serialize.hpp"
#include "convformer/verify.hpp"

namespace fs = std::filesystem;
using namespace convformer;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--set", args.sets, "override a config key, e.g. --set fusion.depth=2");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "shorthand for --set seed=N");
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config_path, args.sets);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.validate();
  }
  return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << content;
}

void write_effective_config(const RunConfig& cfg, const fs::path& out) {
  write_file(out / "config.effective.json", cfg.to_json().dump(2) + "\n");
}

std::string losses_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << "," << losses[i] << "\n";
  return os.str();
}

std::string flops_csv(const RunConfig& cfg, const FlopReport& report) {
  std::ostringstream os;
  os << "# convformer flops: MACs per fusion forward (1 MAC = 2 FLOPs); C="
     << cfg.pipeline.fusion.channels << ", K=" << cfg.dataset_train.num_classes
     << ", h=" << report.h << ", w=" << report.w << ", heads=" << cfg.pipeline.fusion.heads
     << ", depth=" << cfg.pipeline.fusion_depth << "\n";
  os << "component,macs\n";
  for (const TableRow& row : report.rows()) os << row.component << "," << row.value << "\n";
  return os.str();
}

std::string params_csv(const RunConfig& cfg, const ParamCountReport& report) {
  std::ostringstream os;
  os << "# convformer parameter counts; C=" << cfg.pipeline.fusion.channels
     << ", depth=" << cfg.pipeline.fusion_depth
     << ", bottleneck_expansion=" << cfg.pipeline.fusion.bottleneck_expansion
     << ", ffn_expansion=" << cfg.pipeline.fusion.ffn_expansion << "\n";
  os << "component,count\n";
  for (const TableRow& row : report.rows()) os << row.component << "," << row.value << "\n";
  return os.str();
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_effective_config(cfg, out);

  ExperimentResult result = run_experiment(cfg.to_experiment());
  result.report.config = cfg.to_json();
  write_file(out / "report.json", result.report.to_json().dump(2) + "\n");
  write_file(out / "curves.csv", losses_csv(result.report.losses));
  result.pipeline->save_checkpoint_file((out / "checkpoint.kjtc").string());

  std::cout << "steps " << result.report.losses.size() << ", final loss "
            << result.report.losses.back() << ", mIoU " << result.eval.miou << ", params "
            << result.report.param_total << "\n"
            << "artifacts in " << out.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_flag) {
  RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  const fs::path ckpt = checkpoint_flag.empty() ? out / "checkpoint.kjtc" : fs::path(checkpoint_flag);
  if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint: " + ckpt.string());

  ExperimentSpec spec = cfg.to_experiment();
  SyntheticDataset eval_set(spec.eval_data);
  TextEmbeddings text = stub_text_encoder(
      SyntheticDataset::class_names(spec.train_data.num_classes), spec.pipeline.text_channels,
      spec.text_seed);
  SegmentationPipeline pipeline(spec.pipeline, text, spec.model_seed, Dtype::F32);
  pipeline.load_checkpoint_file(ckpt.string());
  MiouResult miou = evaluate_miou(pipeline, eval_set);

  nlohmann::json j;
  j["miou"] = miou.miou;
  j["per_class_iou"] = miou.per_class_iou;
  fs::create_directories(out);
  write_file(out / "eval.json", j.dump(2) + "\n");
  std::cout << "mIoU " << miou.miou << "\n";
  return 0;
}

int cmd_gradcheck() {
  SuiteReport report = run_gradcheck_suite(true);
  std::cout << report.table();
  std::cout << "max rel err " << report.worst << (report.pass ? " (pass)" : " (FAIL)") << "\n";
  return report.pass ? 0 : 1;
}

int cmd_oracle() {
  SuiteReport report = run_oracle_suite();
  std::cout << report.table();
  std::cout << "max abs err " << report.worst << (report.pass ? " (pass)" : " (FAIL)") << "\n";
  return report.pass ? 0 : 1;
}

int cmd_flops(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const int h = cfg.dataset_train.image_size / kOutputStride;
  const int k = cfg.dataset_train.num_classes;
  if (cfg.pipeline.fusion_depth < 1) {
    throw std::runtime_error("flops: fusion.depth must be >= 1 for the cost table");
  }
  ConvFormerConfig fusion = cfg.pipeline.fusion;
  fusion.depth = cfg.pipeline.fusion_depth;
  fusion.classes = k;
  const FlopReport flops = estimate_flops(fusion, h, h, k);
  const ParamCountReport params = count_params(fusion);

  const std::string flops_text = flops_csv(cfg, flops);
  const std::string params_text = params_csv(cfg, params);
  std::cout << flops_text << "\n" << params_text;

  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_file(out / "flops.csv", flops_text);
  write_file(out / "params.csv", params_text);
  return 0;
}

int cmd_ablate_bridge(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_effective_config(cfg, out);
  BridgeAblationReport report = ablate_bridge(cfg.to_experiment(), cfg.ablate_seeds, cfg.workers);
  write_file(out / "ablate_bridge.json", report.to_json().dump(2) + "\n");
  write_file(out / "ablate_bridge.csv", report.to_csv());
  std::cout << report.to_csv();
  return 0;
}

int cmd_ablate_depth(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_effective_config(cfg, out);
  DepthAblationReport report =
      ablate_depth(cfg.to_experiment(), cfg.ablate_depths, cfg.ablate_seeds, cfg.workers);
  write_file(out / "ablate_depth.json", report.to_json().dump(2) + "\n");
  write_file(out / "ablate_depth.csv", report.to_csv());
  std::cout << report.to_csv();
  return 0;
}

int cmd_export_embeddings(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  TextEmbeddings emb =
      stub_text_encoder(SyntheticDataset::class_names(cfg.dataset_train.num_classes),
                        cfg.pipeline.text_channels, cfg.text_seed);
  const fs::path path = out / "embeddings.kjte";
  save_text_embeddings(path.string(), emb);
  std::cout << "wrote " << path.string() << " (K=" << emb.classes() << ", C=" << emb.width()
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conv-Former language-guided segmentation workbench"};
  app.require_subcommand(1);
  app.footer(RunConfig::help_text());

  CommonArgs train_args, eval_args, flops_args, bridge_args, depth_args, export_args;
  std::string checkpoint_flag;

  CLI::App* train_cmd = app.add_subcommand("train", "train a pipeline and write artifacts");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", checkpoint_flag, "checkpoint path (default OUT/checkpoint.kjtc)");
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite; exit 1 on failure");
  CLI::App* oracle_cmd =
      app.add_subcommand("oracle", "brute-force equivalence suite; exit 1 on failure");
  CLI::App* flops_cmd = app.add_subcommand("flops", "parameter and MAC cost tables");
  add_common(flops_cmd, flops_args);
  CLI::App* bridge_cmd = app.add_subcommand("ablate-bridge", "bridge-variant comparison runs");
  add_common(bridge_cmd, bridge_args);
  CLI::App* depth_cmd = app.add_subcommand("ablate-depth", "stacking-depth sweep");
  add_common(depth_cmd, depth_args);
  CLI::App* export_cmd = app.add_subcommand("export-embeddings", "write the stub text embeddings");
  add_common(export_cmd, export_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, checkpoint_flag);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck();
    if (oracle_cmd->parsed()) return cmd_oracle();
    if (flops_cmd->parsed()) return cmd_flops(flops_args);
    if (bridge_cmd->parsed()) return cmd_ablate_bridge(bridge_args);
    if (depth_cmd->parsed()) return cmd_ablate_depth(depth_args);
    if (export_cmd->parsed()) return cmd_export_embeddings(export_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
