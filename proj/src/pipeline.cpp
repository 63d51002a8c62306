#include "convformer/pipeline.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "convformer/rng.hpp"
#include "convformer/serialize.hpp"

namespace convformer {

// ---- text embeddings -------------------------------------------------------

TextEmbeddings stub_text_encoder(const std::vector<std::string>& class_names, int c_text,
                                 std::uint64_t seed) {
  if (class_names.size() < 2) {
    throw std::invalid_argument("stub_text_encoder: need at least 2 class names");
  }
  if (c_text < 1) throw std::invalid_argument("stub_text_encoder: c_text must be >= 1");
  std::set<std::string> unique(class_names.begin(), class_names.end());
  if (unique.size() != class_names.size()) {
    throw std::invalid_argument("stub_text_encoder: duplicate class names");
  }
  const std::int64_t k = static_cast<std::int64_t>(class_names.size());
  std::vector<double> values(static_cast<std::size_t>(k * c_text));
  for (std::int64_t row = 0; row < k; ++row) {
    const std::string prompt = "a photo of a " + class_names[row] + ".";
    Rng rng(seed ^ fnv1a64(prompt.data(), prompt.size()));
    double norm_sq = 0.0;
    for (int i = 0; i < c_text; ++i) {
      const double v = rng.uniform(-1.0, 1.0);
      values[row * c_text + i] = v;
      norm_sq += v * v;
    }
    if (norm_sq < 1e-24) {
      values[row * c_text] = 1.0;
      norm_sq = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int i = 0; i < c_text; ++i) values[row * c_text + i] *= inv;
  }
  TextEmbeddings emb;
  emb.class_names = class_names;
  emb.matrix = Tensor::from_data(std::move(values), {k, c_text}, Dtype::F32);
  return emb;
}

TextEmbeddings load_text_embeddings(const std::string& path) {
  NamedEmbeddings raw = load_embeddings(path);
  if (raw.names.size() < 2) {
    throw ParseError(path + ": embeddings must contain at least 2 classes, got " +
                     std::to_string(raw.names.size()));
  }
  if (!all_finite(raw.matrix)) throw ParseError(path + ": embeddings contain non-finite values");
  TextEmbeddings emb;
  emb.class_names = std::move(raw.names);
  emb.matrix = std::move(raw.matrix);
  return emb;
}

void save_text_embeddings(const std::string& path, const TextEmbeddings& emb) {
  save_embeddings(path, NamedEmbeddings{emb.class_names, emb.matrix});
}

// ---- config ----------------------------------------------------------------

void PipelineConfig::validate() const {
  if (fusion_depth < 0) throw std::invalid_argument("fusion.depth must be >= 0");
  if (fusion_depth > 0) {
    ConvFormerConfig probe = fusion;
    probe.depth = fusion_depth;
    probe.validate();
  }
  if (vis_channels < 1) throw std::invalid_argument("pipeline.vis_channels must be >= 1");
  if (text_channels < 1) throw std::invalid_argument("pipeline.text_channels must be >= 1");
  if (decoder_channels < 1) throw std::invalid_argument("pipeline.decoder_channels must be >= 1");
  if (temperature <= 0.0) throw std::invalid_argument("pipeline.temperature must be > 0");
}

// ---- construction ----------------------------------------------------------

namespace {

constexpr int kStemChannels = 16;
constexpr int kStage1Channels = 24;
constexpr int kStageExpansion = 2;

Tensor conv_param(Shape shape, Rng& rng, Dtype dt) {
  const std::int64_t fan_in = shape[0] * shape[1] * shape[2];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(v), std::move(shape), dt, true);
}

Tensor conv_bias_param(std::int64_t len, std::int64_t fan_in, Rng& rng, Dtype dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(len));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(v), {len}, dt, true);
}

Tensor linear_param(std::int64_t rows, std::int64_t cols, Rng& rng, Dtype dt) {
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  for (double& x : v) x = rng.truncated_normal(0.02);
  return Tensor::from_data(std::move(v), {rows, cols}, dt, true);
}

Tensor zero_param(Shape shape, Dtype dt) { return Tensor::zeros(std::move(shape), dt, true); }

}  // namespace

SegmentationPipeline::SegmentationPipeline(const PipelineConfig& cfg, const TextEmbeddings& text,
                                           std::uint64_t seed, Dtype dt)
    : cfg_(cfg), text_(text), dtype_(dt) {
  cfg_.validate();
  if (text_.classes() < 2) throw std::invalid_argument("pipeline: need at least 2 classes");
  if (text_.width() != cfg_.text_channels) {
    throw std::invalid_argument("pipeline: embeddings width " + std::to_string(text_.width()) +
                                " != pipeline.text_channels " +
                                std::to_string(cfg_.text_channels));
  }
  if (!all_finite(text_.matrix)) {
    throw std::invalid_argument("pipeline: text embeddings contain non-finite values");
  }
  cfg_.fusion.classes = static_cast<int>(text_.classes());
  text_matrix_ = text_.matrix.astype(dt);
  text_matrix_.set_requires_grad(false);

  Rng rng(seed);
  const int c = cfg_.fusion.channels;
  const int k = static_cast<int>(text_.classes());

  Rng bb = rng.fork(1);
  stem_weight_ = conv_param({3, 3, 3, kStemChannels}, bb, dt);
  stem_bias_ = conv_bias_param(kStemChannels, 27, bb, dt);
  auto make_stage = [&](int cin, int cout) {
    BottleneckStage s;
    const int mid = cin * kStageExpansion;
    s.expand_weight = conv_param({1, 1, cin, mid}, bb, dt);
    s.expand_bias = conv_bias_param(mid, cin, bb, dt);
    s.dw_weight = conv_param({3, 3, 1, mid}, bb, dt);
    s.dw_bias = conv_bias_param(mid, 9, bb, dt);
    s.project_weight = conv_param({1, 1, mid, cout}, bb, dt);
    s.project_bias = conv_bias_param(cout, mid, bb, dt);
    return s;
  };
  stage1_ = make_stage(kStemChannels, kStage1Channels);
  stage2_ = make_stage(kStage1Channels, cfg_.vis_channels);

  Rng al = rng.fork(2);
  align_image_weight_ = conv_param({1, 1, cfg_.vis_channels, c}, al, dt);
  align_image_bias_ = conv_bias_param(c, cfg_.vis_channels, al, dt);
  align_text_weight_ = linear_param(cfg_.text_channels, c, al, dt);
  align_text_bias_ = zero_param({c}, dt);

  if (cfg_.fusion_depth > 0) {
    ConvFormerConfig fusion_cfg = cfg_.fusion;
    fusion_cfg.depth = cfg_.fusion_depth;
    Rng fu = rng.fork(3);
    fusion_ = make_fusion_stack(fusion_cfg, fu, dt);
  }

  Rng de = rng.fork(4);
  const int dc = cfg_.decoder_channels;
  dec1_weight_ = conv_param({3, 3, c + k, dc}, de, dt);
  dec1_bias_ = conv_bias_param(dc, 9 * (c + k), de, dt);
  dec2_weight_ = conv_param({3, 3, dc, dc}, de, dt);
  dec2_bias_ = conv_bias_param(dc, 9 * dc, de, dt);
  cls_weight_ = conv_param({1, 1, dc, k}, de, dt);
  cls_bias_ = conv_bias_param(k, dc, de, dt);

  auto reg = [this](const std::string& name, Tensor& t, bool backbone) {
    params_.push_back(Param{name, t, backbone});
  };
  reg("backbone.stem.weight", stem_weight_, true);
  reg("backbone.stem.bias", stem_bias_, true);
  auto reg_stage = [&](const std::string& prefix, BottleneckStage& s) {
    reg(prefix + ".expand.weight", s.expand_weight, true);
    reg(prefix + ".expand.bias", s.expand_bias, true);
    reg(prefix + ".depthwise.weight", s.dw_weight, true);
    reg(prefix + ".depthwise.bias", s.dw_bias, true);
    reg(prefix + ".project.weight", s.project_weight, true);
    reg(prefix + ".project.bias", s.project_bias, true);
  };
  reg_stage("backbone.stage1", stage1_);
  reg_stage("backbone.stage2", stage2_);
  reg("align.image.weight", align_image_weight_, false);
  reg("align.image.bias", align_image_bias_, false);
  reg("align.text.weight", align_text_weight_, false);
  reg("align.text.bias", align_text_bias_, false);
  if (fusion_) {
    visit_params(*fusion_, [&](const std::string& name, Tensor& t) { reg(name, t, false); });
  }
  reg("decoder.conv1.weight", dec1_weight_, false);
  reg("decoder.conv1.bias", dec1_bias_, false);
  reg("decoder.conv2.weight", dec2_weight_, false);
  reg("decoder.conv2.bias", dec2_bias_, false);
  reg("decoder.classifier.weight", cls_weight_, false);
  reg("decoder.classifier.bias", cls_bias_, false);
}

void SegmentationPipeline::zero_grads() {
  for (Param& p : params_) p.tensor.zero_grad();
}

std::int64_t SegmentationPipeline::trainable_count() const {
  std::int64_t n = 0;
  for (const Param& p : params_) n += p.tensor.numel();
  return n;
}

// ---- forward ---------------------------------------------------------------

Tensor SegmentationPipeline::backbone_forward(const Tensor& image) const {
  Tensor x = conv2d(image, stem_weight_, stem_bias_, 2, 1, 1);
  x = relu6(x);
  auto run_stage = [](const Tensor& in, const BottleneckStage& s) {
    Tensor y = conv2d(in, s.expand_weight, s.expand_bias, 1, 0, 1);
    y = relu6(y);
    y = conv2d(y, s.dw_weight, s.dw_bias, 2, 1, static_cast<int>(s.dw_weight.dim(3)));
    y = relu6(y);
    return conv2d(y, s.project_weight, s.project_bias, 1, 0, 1);
  };
  x = run_stage(x, stage1_);
  x = run_stage(x, stage2_);
  return x;
}

Tensor SegmentationPipeline::decode(const Tensor& fused_concat) const {
  // gelu here: the fused features arriving from the residual stack run
  // hotter than a plain backbone's, and a hard clamp would saturate.
  Tensor x = conv2d(fused_concat, dec1_weight_, dec1_bias_, 1, 1, 1);
  x = gelu(x);
  x = conv2d(x, dec2_weight_, dec2_bias_, 1, 1, 1);
  x = gelu(x);
  x = bilinear_upsample(x, kOutputStride);
  return conv2d(x, cls_weight_, cls_bias_, 1, 0, 1);
}

SegmentationPipeline::Outputs SegmentationPipeline::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw std::invalid_argument("forward: image must be [H, W, 3], got " +
                                shape_str(image.shape()));
  }
  if (image.dtype() != dtype_) {
    throw std::invalid_argument("forward: image dtype differs from pipeline dtype");
  }
  const std::int64_t h_in = image.dim(0), w_in = image.dim(1);
  const int pad_h = static_cast<int>((kOutputStride - h_in % kOutputStride) % kOutputStride);
  const int pad_w = static_cast<int>((kOutputStride - w_in % kOutputStride) % kOutputStride);
  Tensor padded = (pad_h || pad_w) ? pad_bottom_right(image, pad_h, pad_w) : image;

  Tensor vis = backbone_forward(padded);
  Tensor feat = conv2d(vis, align_image_weight_, align_image_bias_, 1, 0, 1);
  Tensor txt = add(matmul(text_matrix_, align_text_weight_), align_text_bias_);

  if (fusion_) {
    auto [f, t] = fusion_forward(feat, txt, *fusion_);
    feat = f;
    txt = t;
  }

  const std::int64_t fh = feat.dim(0), fw = feat.dim(1), c = feat.dim(2);
  const std::int64_t k = txt.dim(0);
  Tensor score = scale(matmul(reshape(feat, {fh * fw, c}), permute(txt, {1, 0})),
                       1.0 / cfg_.temperature);
  score = reshape(score, {fh, fw, k});

  Tensor fused = concat({feat, score}, 2);
  Tensor logits = decode(fused);
  if (pad_h || pad_w) logits = crop_top_left(logits, h_in, w_in);

  Outputs out;
  out.logits = logits;
  out.score_map = score;
  out.fused_feature = feat;
  out.fused_text = txt;
  return out;
}

SegmentationPipeline::FusionProbe SegmentationPipeline::probe(const Tensor& image) const {
  Outputs out = forward(image);
  return FusionProbe{out.fused_feature, out.fused_text, out.score_map};
}

Tensor downsample_labels(const Tensor& labels, int factor) {
  if (labels.rank() != 2) throw std::invalid_argument("downsample_labels: labels must be [H, W]");
  const std::int64_t h = labels.dim(0), w = labels.dim(1);
  const std::int64_t oh = (h + factor - 1) / factor, ow = (w + factor - 1) / factor;
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  const auto& lv = labels.data();
  for (std::int64_t i = 0; i < oh; ++i) {
    const std::int64_t si = std::min<std::int64_t>(h - 1, i * factor + factor / 2);
    for (std::int64_t j = 0; j < ow; ++j) {
      const std::int64_t sj = std::min<std::int64_t>(w - 1, j * factor + factor / 2);
      out[i * ow + j] = lv[si * w + sj];
    }
  }
  return Tensor::from_data(std::move(out), {oh, ow}, labels.dtype());
}

Tensor SegmentationPipeline::loss(const Outputs& out, const Tensor& labels,
                                  double aux_weight) const {
  if (labels.rank() != 2 || labels.dim(0) != out.logits.dim(0) ||
      labels.dim(1) != out.logits.dim(1)) {
    throw std::invalid_argument("loss: labels shape " + shape_str(labels.shape()) +
                                " does not match logits " + shape_str(out.logits.shape()));
  }
  const std::int64_t h = out.logits.dim(0), w = out.logits.dim(1), k = out.logits.dim(2);
  Tensor labels_flat = reshape(labels.astype(dtype_), {h * w});
  Tensor main_loss = cross_entropy(reshape(out.logits, {h * w, k}), labels_flat, kIgnoreLabel);
  if (aux_weight == 0.0) return main_loss;

  const std::int64_t sh = out.score_map.dim(0), sw = out.score_map.dim(1);
  Tensor small = downsample_labels(labels, kOutputStride).astype(dtype_);
  if (small.dim(0) != sh || small.dim(1) != sw) {
    // Image was padded; the score map covers the padded grid, so pad the
    // downsampled labels with ignore entries.
    std::vector<double> v(static_cast<std::size_t>(sh * sw),
                          static_cast<double>(kIgnoreLabel));
    const auto& sv = small.data();
    for (std::int64_t i = 0; i < small.dim(0); ++i) {
      for (std::int64_t j = 0; j < small.dim(1); ++j) v[i * sw + j] = sv[i * small.dim(1) + j];
    }
    small = Tensor::from_data(std::move(v), {sh, sw}, dtype_);
  }
  Tensor aux = cross_entropy(reshape(out.score_map, {sh * sw, k}), reshape(small, {sh * sw}),
                             kIgnoreLabel);
  return add(main_loss, scale(aux, aux_weight));
}

// ---- checkpoint ------------------------------------------------------------

void SegmentationPipeline::save_checkpoint_file(const std::string& path) const {
  NamedTensors entries;
  entries.reserve(params_.size());
  for (const Param& p : params_) entries.emplace_back(p.name, p.tensor);
  save_checkpoint(path, entries);
}

void SegmentationPipeline::load_checkpoint_file(const std::string& path) {
  NamedTensors entries = load_checkpoint(path);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : entries) by_name[name] = &tensor;
  for (Param& p : params_) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw std::runtime_error(path + ": checkpoint is missing parameter " + p.name);
    }
    const Tensor& src = *it->second;
    if (src.shape() != p.tensor.shape()) {
      throw std::runtime_error(path + ": parameter " + p.name + " has shape " +
                               shape_str(src.shape()) + ", expected " +
                               shape_str(p.tensor.shape()));
    }
    std::vector<double>& dst = p.tensor.mutable_data();
    const std::vector<double>& sv = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = dtype_ == Dtype::F32 ? static_cast<double>(static_cast<float>(sv[i])) : sv[i];
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw std::runtime_error(path + ": checkpoint contains unknown parameter " +
                             by_name.begin()->first);
  }
}

}  // namespace convformer
