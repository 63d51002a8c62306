#include "convformer/conv_former.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer {

const char* bridge_variant_name(BridgeVariant v) {
  return v == BridgeVariant::CrossAttention ? "cross_attention" : "inner_product";
}

void ConvFormerConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("fusion.channels must be >= 1");
  if (classes < 1) throw std::invalid_argument("fusion.classes must be >= 1");
  if (heads < 1) throw std::invalid_argument("fusion.heads must be >= 1");
  if (channels % heads != 0) {
    throw std::invalid_argument("fusion.channels (" + std::to_string(channels) +
                                ") must be divisible by fusion.heads (" + std::to_string(heads) +
                                ")");
  }
  if (depth < 1) throw std::invalid_argument("fusion depth must be >= 1");
  if (ffn_expansion < 1) throw std::invalid_argument("fusion.ffn_expansion must be >= 1");
  if (bottleneck_expansion < 1) {
    throw std::invalid_argument("fusion.bottleneck_expansion must be >= 1");
  }
  if (downsample_kernel < 1 || downsample_stride < 1) {
    throw std::invalid_argument("fusion downsample kernel/stride must be >= 1");
  }
}

// ---- initialization --------------------------------------------------------

namespace {

Tensor projection_init(std::int64_t rows, std::int64_t cols, Rng& rng, Dtype dt) {
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  for (double& x : v) x = rng.truncated_normal(0.02);
  return Tensor::from_data(std::move(v), {rows, cols}, dt, true);
}

Tensor conv_init(Shape shape, Rng& rng, Dtype dt) {
  const std::int64_t fan_in = shape[0] * shape[1] * shape[2];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(v), std::move(shape), dt, true);
}

// Conv biases share the fan-in uniform range of their kernel. A nonzero
// bias also keeps relu6 pre-activations off the exact kink when an input
// patch is identically zero.
Tensor conv_bias_init(std::int64_t len, std::int64_t fan_in, Rng& rng, Dtype dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(len));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(v), {len}, dt, true);
}

Tensor zeros_param(Shape shape, Dtype dt) { return Tensor::zeros(std::move(shape), dt, true); }

Tensor ones_param(Shape shape, Dtype dt) { return Tensor::full(std::move(shape), 1.0, dt, true); }

BridgeWeights make_bridge(const ConvFormerConfig& cfg, Rng& rng, Dtype dt) {
  const std::int64_t c = cfg.channels;
  BridgeWeights w;
  w.downsample_weight = conv_init({cfg.downsample_kernel, cfg.downsample_kernel, 1, c}, rng, dt);
  w.downsample_bias = conv_bias_init(
      c, static_cast<std::int64_t>(cfg.downsample_kernel) * cfg.downsample_kernel, rng, dt);
  // The inner-product ablation has no learned projections anywhere, so
  // that variant owns none of the four matrices.
  if (cfg.bridge_variant == BridgeVariant::CrossAttention) {
    w.w_q = projection_init(c, c, rng, dt);
    w.w_o = cfg.zero_init_out_proj ? zeros_param({c, c}, dt) : projection_init(c, c, rng, dt);
    w.w_k = projection_init(c, c, rng, dt);
    w.w_v = projection_init(c, c, rng, dt);
  }
  return w;
}

ConvBlockWeights make_conv_block(const ConvFormerConfig& cfg, Rng& rng, Dtype dt) {
  const std::int64_t c = cfg.channels;
  const std::int64_t ec = c * cfg.bottleneck_expansion;
  ConvBlockWeights w;
  w.expand_weight = conv_init({1, 1, c, ec}, rng, dt);
  w.expand_bias = conv_bias_init(ec, c, rng, dt);
  w.dw_weight = conv_init({3, 3, 1, ec}, rng, dt);
  w.dw_bias = conv_bias_init(ec, 9, rng, dt);
  w.project_weight = conv_init({1, 1, ec, c}, rng, dt);
  w.project_bias = conv_bias_init(c, ec, rng, dt);
  return w;
}

FormerBlockWeights make_former_block(const ConvFormerConfig& cfg, Rng& rng, Dtype dt) {
  const std::int64_t c = cfg.channels;
  const std::int64_t fc = c * cfg.ffn_expansion;
  FormerBlockWeights w;
  w.w_q = projection_init(c, c, rng, dt);
  w.w_k = projection_init(c, c, rng, dt);
  w.w_v = projection_init(c, c, rng, dt);
  w.w_o = projection_init(c, c, rng, dt);
  w.fc1_weight = projection_init(c, fc, rng, dt);
  w.fc1_bias = zeros_param({fc}, dt);
  w.fc2_weight = projection_init(fc, c, rng, dt);
  w.fc2_bias = zeros_param({c}, dt);
  w.norm1_gamma = ones_param({c}, dt);
  w.norm1_beta = zeros_param({c}, dt);
  w.norm2_gamma = ones_param({c}, dt);
  w.norm2_beta = zeros_param({c}, dt);
  return w;
}

}  // namespace

FusionStack make_fusion_stack(const ConvFormerConfig& cfg, Rng& rng, Dtype dt) {
  cfg.validate();
  FusionStack stack;
  stack.cfg = cfg;
  stack.units.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) {
    Rng unit_rng = rng.fork(static_cast<std::uint64_t>(i));
    ConvFormerUnit unit;
    unit.bridge = make_bridge(cfg, unit_rng, dt);
    unit.conv = make_conv_block(cfg, unit_rng, dt);
    unit.former = make_former_block(cfg, unit_rng, dt);
    stack.units.push_back(std::move(unit));
  }
  return stack;
}

void visit_params(ConvFormerUnit& unit, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".bridge_c2f.downsample.weight", unit.bridge.downsample_weight);
  fn(prefix + ".bridge_c2f.downsample.bias", unit.bridge.downsample_bias);
  if (unit.bridge.w_q.defined()) {
    fn(prefix + ".bridge_c2f.w_q", unit.bridge.w_q);
    fn(prefix + ".bridge_c2f.w_o", unit.bridge.w_o);
    fn(prefix + ".bridge_f2c.w_k", unit.bridge.w_k);
    fn(prefix + ".bridge_f2c.w_v", unit.bridge.w_v);
  }
  fn(prefix + ".conv.expand.weight", unit.conv.expand_weight);
  fn(prefix + ".conv.expand.bias", unit.conv.expand_bias);
  fn(prefix + ".conv.depthwise.weight", unit.conv.dw_weight);
  fn(prefix + ".conv.depthwise.bias", unit.conv.dw_bias);
  fn(prefix + ".conv.project.weight", unit.conv.project_weight);
  fn(prefix + ".conv.project.bias", unit.conv.project_bias);
  fn(prefix + ".former.attn.w_q", unit.former.w_q);
  fn(prefix + ".former.attn.w_k", unit.former.w_k);
  fn(prefix + ".former.attn.w_v", unit.former.w_v);
  fn(prefix + ".former.attn.w_o", unit.former.w_o);
  fn(prefix + ".former.ffn.fc1.weight", unit.former.fc1_weight);
  fn(prefix + ".former.ffn.fc1.bias", unit.former.fc1_bias);
  fn(prefix + ".former.ffn.fc2.weight", unit.former.fc2_weight);
  fn(prefix + ".former.ffn.fc2.bias", unit.former.fc2_bias);
  fn(prefix + ".former.norm1.gamma", unit.former.norm1_gamma);
  fn(prefix + ".former.norm1.beta", unit.former.norm1_beta);
  fn(prefix + ".former.norm2.gamma", unit.former.norm2_gamma);
  fn(prefix + ".former.norm2.beta", unit.former.norm2_beta);
}

void visit_params(FusionStack& stack, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < stack.units.size(); ++i) {
    visit_params(stack.units[i], "fusion.unit" + std::to_string(i), fn);
  }
}

// ---- forward pieces --------------------------------------------------------

Tensor downsample_patches(const Tensor& feature, const BridgeWeights& w, int kernel, int stride) {
  if (feature.rank() != 3) {
    throw std::invalid_argument("downsample_patches: feature must be [H, W, C]");
  }
  const std::int64_t h = feature.dim(0), wd = feature.dim(1), c = feature.dim(2);
  const int pad_h = static_cast<int>((stride - h % stride) % stride);
  const int pad_w = static_cast<int>((stride - wd % stride) % stride);
  Tensor padded = (pad_h || pad_w) ? pad_bottom_right(feature, pad_h, pad_w) : feature;
  Tensor tokens_map = conv2d(padded, w.downsample_weight, w.downsample_bias, stride, 0,
                             static_cast<int>(c));
  (void)kernel;
  const std::int64_t th = tokens_map.dim(0), tw = tokens_map.dim(1);
  return reshape(tokens_map, {th * tw, c});
}

Tensor split_heads(const Tensor& x, int heads) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (c % heads != 0) {
    throw std::invalid_argument("split_heads: width " + std::to_string(c) +
                                " not divisible by heads " + std::to_string(heads));
  }
  return permute(reshape(x, {n, heads, c / heads}), {1, 0, 2});
}

Tensor merge_heads(const Tensor& x) {
  const std::int64_t h = x.dim(0), n = x.dim(1), d = x.dim(2);
  return reshape(permute(x, {1, 0, 2}), {n, h * d});
}

Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::int64_t d = q.dim(2);
  Tensor logits = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = softmax(logits, 2);
  return matmul(weights, v);
}

Tensor cross_attention_c2f(const Tensor& text, const Tensor& tokens, const BridgeWeights& w,
                           int heads) {
  Tensor q = split_heads(matmul(text, w.w_q), heads);
  Tensor kv = split_heads(tokens, heads);  // raw tokens, no projection
  Tensor fused = attention_heads(q, kv, kv);
  return matmul(merge_heads(fused), w.w_o);
}

Tensor cross_attention_f2c(const Tensor& pixels, const Tensor& text, const BridgeWeights& w,
                           int heads) {
  Tensor q = split_heads(pixels, heads);  // raw pixels, no projection
  Tensor k = split_heads(matmul(text, w.w_k), heads);
  Tensor v = split_heads(matmul(text, w.w_v), heads);
  return merge_heads(attention_heads(q, k, v));  // no output projection
}

Tensor inner_product_c2f(const Tensor& text, const Tensor& tokens) {
  Tensor weights = softmax(matmul(text, permute(tokens, {1, 0})), 1);
  return matmul(weights, tokens);
}

Tensor inner_product_f2c(const Tensor& pixels, const Tensor& text) {
  Tensor weights = softmax(matmul(pixels, permute(text, {1, 0})), 1);
  return matmul(weights, text);
}

Tensor conv_block(const Tensor& feature, const ConvBlockWeights& w) {
  const std::int64_t ec = w.dw_weight.dim(3);
  Tensor x = conv2d(feature, w.expand_weight, w.expand_bias, 1, 0, 1);
  x = relu6(x);
  x = conv2d(x, w.dw_weight, w.dw_bias, 1, 1, static_cast<int>(ec));
  x = relu6(x);
  x = conv2d(x, w.project_weight, w.project_bias, 1, 0, 1);
  return add(x, feature);
}

Tensor former_block(const Tensor& text, const FormerBlockWeights& w, int heads) {
  Tensor q = split_heads(matmul(text, w.w_q), heads);
  Tensor k = split_heads(matmul(text, w.w_k), heads);
  Tensor v = split_heads(matmul(text, w.w_v), heads);
  Tensor mhsa = matmul(merge_heads(attention_heads(q, k, v)), w.w_o);
  Tensor t1 = layer_norm(add(text, mhsa), w.norm1_gamma, w.norm1_beta, kLayerNormEps);
  Tensor ffn = add(matmul(t1, w.fc1_weight), w.fc1_bias);
  ffn = gelu(ffn);
  ffn = add(matmul(ffn, w.fc2_weight), w.fc2_bias);
  return layer_norm(add(t1, ffn), w.norm2_gamma, w.norm2_beta, kLayerNormEps);
}

std::pair<Tensor, Tensor> conv_former_unit(const Tensor& feature, const Tensor& text,
                                           const ConvFormerUnit& unit,
                                           const ConvFormerConfig& cfg) {
  const std::int64_t h = feature.dim(0), w = feature.dim(1), c = feature.dim(2);
  Tensor tokens = downsample_patches(feature, unit.bridge, cfg.downsample_kernel,
                                     cfg.downsample_stride);
  Tensor text_fused;
  if (cfg.bridge_variant == BridgeVariant::CrossAttention) {
    text_fused = add(text, cross_attention_c2f(text, tokens, unit.bridge, cfg.heads));
  } else {
    text_fused = add(text, inner_product_c2f(text, tokens));
  }
  Tensor conv_out = conv_block(feature, unit.conv);
  Tensor former_out = former_block(text_fused, unit.former, cfg.heads);
  Tensor pixels = reshape(conv_out, {h * w, c});
  Tensor pixel_update;
  if (cfg.bridge_variant == BridgeVariant::CrossAttention) {
    pixel_update = cross_attention_f2c(pixels, former_out, unit.bridge, cfg.heads);
  } else {
    pixel_update = inner_product_f2c(pixels, former_out);
  }
  Tensor feature_out = add(conv_out, reshape(pixel_update, {h, w, c}));
  return {feature_out, former_out};
}

std::pair<Tensor, Tensor> fusion_forward(const Tensor& feature, const Tensor& text,
                                         const FusionStack& stack) {
  Tensor f = feature;
  Tensor t = text;
  for (const ConvFormerUnit& unit : stack.units) {
    auto [fn, tn] = conv_former_unit(f, t, unit, stack.cfg);
    f = fn;
    t = tn;
  }
  return {add(f, feature), add(t, text)};
}

// ---- accounting ------------------------------------------------------------

ParamCountReport count_params(const ConvFormerConfig& cfg) {
  cfg.validate();
  const std::int64_t c = cfg.channels;
  const std::int64_t ec = c * cfg.bottleneck_expansion;
  const std::int64_t fc = c * cfg.ffn_expansion;
  const std::int64_t kk = static_cast<std::int64_t>(cfg.downsample_kernel) * cfg.downsample_kernel;

  ParamCountReport r;
  r.bridge_projections = 4 * c * c;
  r.bridge_downsample = kk * c + c;
  r.conv_side_projections = 0;
  r.conv_block = (c * ec + ec) + (9 * ec + ec) + (ec * c + c);
  r.former_block = 4 * c * c + (c * fc + fc) + (fc * c + c) + 4 * c;
  r.per_unit = r.bridge_projections + r.bridge_downsample + r.conv_block + r.former_block;
  r.stack_total = r.per_unit * cfg.depth;
  r.full_bridge_projections = 7 * c * c;
  r.full_bridge_with_f2c_out_proj = 8 * c * c;
  r.removed_conv_side_per_unit = r.full_bridge_projections - r.bridge_projections;
  r.removed_conv_side_stack = r.removed_conv_side_per_unit * cfg.depth;
  return r;
}

std::vector<TableRow> ParamCountReport::rows() const {
  return {
      {"unit.bridge.projections", bridge_projections},
      {"unit.bridge.downsample", bridge_downsample},
      {"unit.bridge.conv_side_projections", conv_side_projections},
      {"unit.conv_block", conv_block},
      {"unit.former_block", former_block},
      {"unit.total", per_unit},
      {"stack.total", stack_total},
      {"comparison.full_bridge_projections", full_bridge_projections},
      {"comparison.full_bridge_with_f2c_out_proj", full_bridge_with_f2c_out_proj},
      {"comparison.removed_conv_side_per_unit", removed_conv_side_per_unit},
      {"comparison.removed_conv_side_stack", removed_conv_side_stack},
  };
}

FlopReport estimate_flops(const ConvFormerConfig& cfg, int h, int w, int k) {
  cfg.validate();
  if (h < 1 || w < 1 || k < 1) throw std::invalid_argument("estimate_flops: extents must be >= 1");
  const std::int64_t c = cfg.channels;
  const std::int64_t ec = c * cfg.bottleneck_expansion;
  const std::int64_t fc = c * cfg.ffn_expansion;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t s = cfg.downsample_stride;
  const std::int64_t th = (h + s - 1) / s;
  const std::int64_t tw = (w + s - 1) / s;
  const std::int64_t m = th * tw;  // tokens after patch aggregation
  const std::int64_t kk = static_cast<std::int64_t>(cfg.downsample_kernel) * cfg.downsample_kernel;
  const std::int64_t kcls = k;

  FlopReport r;
  r.h = h;
  r.w = w;
  r.k = k;
  r.downsample = m * c * kk;
  // c2f: query projection + logits + weighted values + output projection.
  r.bridge_c2f = kcls * c * c + kcls * m * c + kcls * m * c + kcls * c * c;
  // f2c: key/value projections + per-pixel logits + weighted values.
  r.bridge_f2c = 2 * kcls * c * c + hw * kcls * c + hw * kcls * c;
  r.conv_block = hw * c * ec + hw * ec * 9 + hw * ec * c;
  // former: q/k/v/o projections + self-attention products + FFN.
  r.former_block = 4 * kcls * c * c + 2 * kcls * kcls * c + 2 * kcls * c * fc;
  r.per_unit = r.downsample + r.bridge_c2f + r.bridge_f2c + r.conv_block + r.former_block;
  r.stack_total = r.per_unit * cfg.depth;
  r.score_map = hw * kcls * c;
  r.total = r.stack_total + r.score_map;
  return r;
}

std::vector<TableRow> FlopReport::rows() const {
  return {
      {"unit.downsample", downsample},
      {"unit.bridge_c2f", bridge_c2f},
      {"unit.bridge_f2c", bridge_f2c},
      {"unit.conv_block", conv_block},
      {"unit.former_block", former_block},
      {"unit.total", per_unit},
      {"stack.total", stack_total},
      {"score_map", score_map},
      {"total", total},
  };
}

}  // namespace convformer
