#include "convformer/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace convformer {

namespace {

enum class FieldType { Int, Uint, Float, Bool, Enum, IntList, UintList };

const char* type_name(FieldType t) {
  switch (t) {
    case FieldType::Int: return "int";
    case FieldType::Uint: return "uint64";
    case FieldType::Float: return "float";
    case FieldType::Bool: return "bool";
    case FieldType::Enum: return "string";
    case FieldType::IntList: return "int list";
    case FieldType::UintList: return "uint64 list";
  }
  return "?";
}

struct Field {
  std::string path;
  FieldType type;
  std::string doc;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& path, const nlohmann::json& j, FieldType t) {
  throw std::invalid_argument("config key '" + path + "' expects " + type_name(t) + ", got " +
                              j.dump());
}

Field make_field(std::string path, FieldType type, std::string doc,
                 std::function<void(RunConfig&, const nlohmann::json&)> set,
                 std::function<nlohmann::json(const RunConfig&)> get) {
  Field f;
  f.path = std::move(path);
  f.type = type;
  f.doc = std::move(doc);
  f.set = std::move(set);
  f.get = std::move(get);
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = [] {
    std::vector<Field> v;
    auto int_field = [&](const std::string& path, const std::string& doc, auto access) {
      v.push_back(make_field(
          path, FieldType::Int, doc,
          [path, access](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_number_integer()) bad_value(path, j, FieldType::Int);
            access(c) = j.get<int>();
          },
          [access](const RunConfig& c) {
            return nlohmann::json(access(const_cast<RunConfig&>(c)));
          }));
    };
    auto uint_field = [&](const std::string& path, const std::string& doc, auto access) {
      v.push_back(make_field(
          path, FieldType::Uint, doc,
          [path, access](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_number_unsigned() && !j.is_number_integer()) {
              bad_value(path, j, FieldType::Uint);
            }
            access(c) = j.get<std::uint64_t>();
          },
          [access](const RunConfig& c) {
            return nlohmann::json(access(const_cast<RunConfig&>(c)));
          }));
    };
    auto float_field = [&](const std::string& path, const std::string& doc, auto access) {
      v.push_back(make_field(
          path, FieldType::Float, doc,
          [path, access](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_number()) bad_value(path, j, FieldType::Float);
            access(c) = j.get<double>();
          },
          [access](const RunConfig& c) {
            return nlohmann::json(access(const_cast<RunConfig&>(c)));
          }));
    };
    auto bool_field = [&](const std::string& path, const std::string& doc, auto access) {
      v.push_back(make_field(
          path, FieldType::Bool, doc,
          [path, access](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_boolean()) bad_value(path, j, FieldType::Bool);
            access(c) = j.get<bool>();
          },
          [access](const RunConfig& c) {
            return nlohmann::json(access(const_cast<RunConfig&>(c)));
          }));
    };

    uint_field("seed", "seed for weight init and shuffling",
               [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    uint_field("text_seed", "seed for the stub text encoder",
               [](RunConfig& c) -> std::uint64_t& { return c.text_seed; });
    int_field("workers", "worker pool bound for ablation fan-out",
              [](RunConfig& c) -> int& { return c.workers; });

    int_field("dataset.train_count", "training images",
              [](RunConfig& c) -> int& { return c.dataset_train.count; });
    int_field("dataset.eval_count", "evaluation images",
              [](RunConfig& c) -> int& { return c.dataset_eval.count; });
    int_field("dataset.image_size", "square image extent, multiple of 8 in [32,128]",
              [](RunConfig& c) -> int& { return c.dataset_train.image_size; });
    int_field("dataset.classes", "class count including background (2..9)",
              [](RunConfig& c) -> int& { return c.dataset_train.num_classes; });
    uint_field("dataset.train_seed", "seed for the training split",
               [](RunConfig& c) -> std::uint64_t& { return c.dataset_train.seed; });
    uint_field("dataset.eval_seed", "seed for the evaluation split",
               [](RunConfig& c) -> std::uint64_t& { return c.dataset_eval.seed; });

    int_field("fusion.depth", "stacked Conv-Former units; 0 = no-fusion baseline",
              [](RunConfig& c) -> int& { return c.pipeline.fusion_depth; });
    int_field("fusion.channels", "shared embedding width C",
              [](RunConfig& c) -> int& { return c.pipeline.fusion.channels; });
    int_field("fusion.heads", "attention heads (must divide channels)",
              [](RunConfig& c) -> int& { return c.pipeline.fusion.heads; });
    int_field("fusion.ffn_expansion", "Former FFN expansion ratio",
              [](RunConfig& c) -> int& { return c.pipeline.fusion.ffn_expansion; });
    int_field("fusion.bottleneck_expansion", "Conv inverted-bottleneck expansion",
              [](RunConfig& c) -> int& { return c.pipeline.fusion.bottleneck_expansion; });
    v.push_back(make_field(
        "fusion.bridge", FieldType::Enum,
        "bridge variant: cross_attention | inner_product",
        [](RunConfig& c, const nlohmann::json& j) {
          if (!j.is_string()) bad_value("fusion.bridge", j, FieldType::Enum);
          const std::string s = j.get<std::string>();
          if (s == "cross_attention") {
            c.pipeline.fusion.bridge_variant = BridgeVariant::CrossAttention;
          } else if (s == "inner_product") {
            c.pipeline.fusion.bridge_variant = BridgeVariant::InnerProduct;
          } else {
            throw std::invalid_argument(
                "config key 'fusion.bridge' must be cross_attention or inner_product, got '" + s +
                "'");
          }
        },
        [](const RunConfig& c) {
          return nlohmann::json(bridge_variant_name(c.pipeline.fusion.bridge_variant));
        }));
    bool_field("fusion.zero_init_out_proj", "zero-init the Conv2Former output projection",
               [](RunConfig& c) -> bool& { return c.pipeline.fusion.zero_init_out_proj; });

    int_field("pipeline.vis_channels", "backbone output width",
              [](RunConfig& c) -> int& { return c.pipeline.vis_channels; });
    int_field("pipeline.text_channels", "stub text embedding width",
              [](RunConfig& c) -> int& { return c.pipeline.text_channels; });
    float_field("pipeline.temperature", "score-map temperature tau",
                [](RunConfig& c) -> double& { return c.pipeline.temperature; });

    int_field("train.steps", "optimization steps",
              [](RunConfig& c) -> int& { return c.train.steps; });
    int_field("train.batch_size", "images per step (gradient accumulation)",
              [](RunConfig& c) -> int& { return c.train.batch_size; });
    float_field("train.base_lr", "AdamW learning rate; backbone runs at 1/10 of this",
                [](RunConfig& c) -> double& { return c.train.base_lr; });
    float_field("train.weight_decay", "decoupled weight decay",
                [](RunConfig& c) -> double& { return c.train.adamw.weight_decay; });
    float_field("train.aux_weight", "score-map auxiliary loss weight",
                [](RunConfig& c) -> double& { return c.train.aux_weight; });

    v.push_back(make_field(
        "ablate.seeds", FieldType::UintList, "seeds for ablation runs",
        [](RunConfig& c, const nlohmann::json& j) {
          if (!j.is_array()) bad_value("ablate.seeds", j, FieldType::UintList);
          c.ablate_seeds = j.get<std::vector<std::uint64_t>>();
        },
        [](const RunConfig& c) { return nlohmann::json(c.ablate_seeds); }));
    v.push_back(make_field(
        "ablate.depths", FieldType::IntList, "depths for the stacking sweep",
        [](RunConfig& c, const nlohmann::json& j) {
          if (!j.is_array()) bad_value("ablate.depths", j, FieldType::IntList);
          c.ablate_depths = j.get<std::vector<int>>();
        },
        [](const RunConfig& c) { return nlohmann::json(c.ablate_depths); }));
    return v;
  }();
  return kFields;
}

const Field& find_field(const std::string& path) {
  for (const Field& f : fields()) {
    if (f.path == path) return f;
  }
  throw std::invalid_argument("unknown config key '" + path + "'");
}

void flatten(const nlohmann::json& j, const std::string& prefix,
             std::vector<std::pair<std::string, nlohmann::json>>& out) {
  if (!j.is_object()) {
    throw std::invalid_argument("config: expected an object at '" +
                                (prefix.empty() ? "<root>" : prefix) + "'");
  }
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      flatten(value, path, out);
    } else {
      out.emplace_back(path, value);
    }
  }
}

nlohmann::json parse_scalar(const Field& f, const std::string& text) {
  try {
    switch (f.type) {
      case FieldType::Int:
        return nlohmann::json(static_cast<std::int64_t>(std::stoll(text)));
      case FieldType::Uint:
        return nlohmann::json(static_cast<std::uint64_t>(std::stoull(text)));
      case FieldType::Float:
        return nlohmann::json(std::stod(text));
      case FieldType::Bool:
        if (text == "true" || text == "1") return nlohmann::json(true);
        if (text == "false" || text == "0") return nlohmann::json(false);
        throw std::invalid_argument("not a bool");
      case FieldType::Enum:
        return nlohmann::json(text);
      case FieldType::IntList:
      case FieldType::UintList: {
        nlohmann::json arr = nlohmann::json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (item.empty()) continue;
          if (f.type == FieldType::IntList) {
            arr.push_back(static_cast<std::int64_t>(std::stoll(item)));
          } else {
            arr.push_back(static_cast<std::uint64_t>(std::stoull(item)));
          }
        }
        return arr;
      }
    }
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  throw std::invalid_argument("config key '" + f.path + "' expects " + type_name(f.type) +
                              ", got '" + text + "'");
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(j, "", flat);
  for (const auto& [path, value] : flat) find_field(path).set(cfg, value);
  return cfg;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument(path + ": not valid JSON: " + e.what());
    }
    cfg = from_json(j);
  }
  for (const std::string& assignment : overrides) cfg.apply_override(assignment);
  cfg.validate();
  return cfg;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("--set expects key.path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const Field& f = find_field(path);
  f.set(*this, parse_scalar(f, value));
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  for (const Field& f : fields()) {
    nlohmann::json* node = &j;
    std::string rest = f.path;
    for (auto dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
      node = &(*node)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    (*node)[rest] = f.get(*this);
  }
  return j;
}

void RunConfig::validate() const {
  dataset_train.validate();
  DatasetSpec eval_spec = dataset_eval;
  eval_spec.image_size = dataset_train.image_size;
  eval_spec.num_classes = dataset_train.num_classes;
  eval_spec.validate();
  PipelineConfig p = pipeline;
  p.validate();
  train.validate();
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
}

ExperimentSpec RunConfig::to_experiment() const {
  ExperimentSpec spec;
  spec.train_data = dataset_train;
  spec.eval_data = dataset_eval;
  spec.eval_data.image_size = dataset_train.image_size;
  spec.eval_data.num_classes = dataset_train.num_classes;
  spec.pipeline = pipeline;
  spec.pipeline.fusion.classes = dataset_train.num_classes;
  spec.train = train;
  spec.train.seed = seed;
  spec.model_seed = seed;
  spec.text_seed = text_seed;
  return spec;
}

const std::vector<RunConfig::FieldDoc>& RunConfig::schema() {
  static const std::vector<FieldDoc> kDocs = [] {
    std::vector<FieldDoc> docs;
    const RunConfig def;
    for (const Field& f : fields()) {
      docs.push_back(FieldDoc{f.path, type_name(f.type), f.get(def).dump(), f.doc});
    }
    return docs;
  }();
  return kDocs;
}

std::string RunConfig::help_text() {
  std::ostringstream os;
  os << "Config keys (JSON file via --config, overrides via --set key=value):\n";
  for (const FieldDoc& d : schema()) {
    os << "  " << d.path << " (" << d.type << ", default " << d.default_value << "): " << d.doc
       << "\n";
  }
  return os.str();
}

}  // namespace convformer
