#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "convformer/rng.hpp"
#include "convformer/tensor.hpp"

namespace convformer {

inline constexpr double kLayerNormEps = 1e-5;

enum class BridgeVariant { CrossAttention, InnerProduct };

const char* bridge_variant_name(BridgeVariant v);

struct ConvFormerConfig {
  int channels = 32;             // C, the shared embedding width
  int classes = 4;               // K text tokens
  int heads = 4;
  int ffn_expansion = 2;
  int bottleneck_expansion = 4;
  int downsample_kernel = 3;
  int downsample_stride = 3;
  int depth = 6;
  BridgeVariant bridge_variant = BridgeVariant::CrossAttention;
  bool zero_init_out_proj = false;

  void validate() const;  // throws std::invalid_argument on violations
};

/// Bridge parameters. The defining asymmetry: no learned projection ever
/// touches the conv-side operand. Conv2Former projects only its text
/// queries (w_q) and its merged heads (w_o); Former2Conv projects only
/// its text keys/values (w_k, w_v) and has no output projection. The
/// stride-3 depthwise downsample that turns the feature map into tokens
/// also lives here; it is accounted separately from the 4*C^2 projection
/// budget.
struct BridgeWeights {
  Tensor downsample_weight;  // [k, k, 1, C] depthwise
  Tensor downsample_bias;    // [C]
  Tensor w_q;                // [C, C]
  Tensor w_o;                // [C, C]
  Tensor w_k;                // [C, C]
  Tensor w_v;                // [C, C]
};

/// Inverted bottleneck: pointwise expand -> relu6 -> 3x3 depthwise ->
/// relu6 -> pointwise project, with a residual add of the input.
struct ConvBlockWeights {
  Tensor expand_weight;   // [1, 1, C, eC]
  Tensor expand_bias;     // [eC]
  Tensor dw_weight;       // [3, 3, 1, eC]
  Tensor dw_bias;         // [eC]
  Tensor project_weight;  // [1, 1, eC, C]
  Tensor project_bias;    // [C]
};

/// Standard transformer block, post layer normalization, FFN expansion 2.
struct FormerBlockWeights {
  Tensor w_q, w_k, w_v, w_o;  // [C, C] each, bias-free
  Tensor fc1_weight;          // [C, fC]
  Tensor fc1_bias;            // [fC]
  Tensor fc2_weight;          // [fC, C]
  Tensor fc2_bias;            // [C]
  Tensor norm1_gamma, norm1_beta;  // [C]
  Tensor norm2_gamma, norm2_beta;  // [C]
};

struct ConvFormerUnit {
  BridgeWeights bridge;
  ConvBlockWeights conv;
  FormerBlockWeights former;
};

struct FusionStack {
  ConvFormerConfig cfg;
  std::vector<ConvFormerUnit> units;
};

/// Builds depth units with independent, seeded initialization:
/// projections are truncated-normal (std 0.02), convolutions fan-in
/// uniform, norms gamma=1/beta=0, biases zero. zero_init_out_proj zeroes
/// the Conv2Former output projection.
FusionStack make_fusion_stack(const ConvFormerConfig& cfg, Rng& rng, Dtype dt);

using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;
void visit_params(ConvFormerUnit& unit, const std::string& prefix, const ParamVisitor& fn);
void visit_params(FusionStack& stack, const ParamVisitor& fn);

// ---- forward pieces --------------------------------------------------------

/// Aggregates each (stride x stride) patch of the zero-padded map into one
/// token via the depthwise downsample conv; returns [ceil(H/s)*ceil(W/s), C].
Tensor downsample_patches(const Tensor& feature, const BridgeWeights& w, int kernel, int stride);

/// Scaled dot-product attention over already-split heads:
/// q [h, M, d], k/v [h, N, d] -> [h, M, d].
Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor split_heads(const Tensor& x, int heads);   // [N, C] -> [heads, N, C/heads]
Tensor merge_heads(const Tensor& x);              // [heads, N, d] -> [N, heads*d]

/// Eq.-style Conv2Former step: queries = text * w_q, keys = values = raw
/// image tokens, heads merged through w_o. Returns the [K, C] update the
/// caller adds residually into the text stream.
Tensor cross_attention_c2f(const Tensor& text, const Tensor& tokens, const BridgeWeights& w,
                           int heads);

/// Former2Conv step: queries = raw pixels, keys/values = projected text,
/// no output projection. Returns the [P, C] update added into the pixels.
Tensor cross_attention_f2c(const Tensor& pixels, const Tensor& text, const BridgeWeights& w,
                           int heads);

/// Ablation bridge: softmax of raw dot products, values are the raw
/// opposite-side tokens, no projections and no head split.
Tensor inner_product_c2f(const Tensor& text, const Tensor& tokens);
Tensor inner_product_f2c(const Tensor& pixels, const Tensor& text);

Tensor conv_block(const Tensor& feature, const ConvBlockWeights& w);
Tensor former_block(const Tensor& text, const FormerBlockWeights& w, int heads);

std::pair<Tensor, Tensor> conv_former_unit(const Tensor& feature, const Tensor& text,
                                           const ConvFormerUnit& unit,
                                           const ConvFormerConfig& cfg);

/// Chains cfg.depth units, then adds the original (feature, text) once
/// around the whole stack.
std::pair<Tensor, Tensor> fusion_forward(const Tensor& feature, const Tensor& text,
                                         const FusionStack& stack);

// ---- accounting ------------------------------------------------------------

struct TableRow {
  std::string component;
  std::int64_t value;
};

/// Exact closed-form parameter counts. Conventions: convolutions and FFN
/// linears carry biases, attention projection matrices do not, layer
/// norms carry gamma+beta. The comparison fields price the hypothetical
/// full cross-attention with conv-side projections restored.
struct ParamCountReport {
  std::int64_t bridge_projections = 0;       // 4*C^2
  std::int64_t bridge_downsample = 0;
  std::int64_t conv_side_projections = 0;    // identically zero by construction
  std::int64_t conv_block = 0;
  std::int64_t former_block = 0;
  std::int64_t per_unit = 0;
  std::int64_t stack_total = 0;
  std::int64_t full_bridge_projections = 0;        // 7*C^2
  std::int64_t full_bridge_with_f2c_out_proj = 0;  // 8*C^2
  std::int64_t removed_conv_side_per_unit = 0;     // 3*C^2
  std::int64_t removed_conv_side_stack = 0;

  std::vector<TableRow> rows() const;
};

ParamCountReport count_params(const ConvFormerConfig& cfg);

/// Analytic multiply-accumulate counts (1 MAC = 2 FLOPs) for one forward
/// pass of the fusion stack on an h x w x C feature map with k classes,
/// plus the pixel-text score map. Softmax, normalization and activations
/// are not counted.
struct FlopReport {
  int h = 0, w = 0, k = 0;
  std::int64_t downsample = 0;
  std::int64_t bridge_c2f = 0;
  std::int64_t bridge_f2c = 0;
  std::int64_t conv_block = 0;
  std::int64_t former_block = 0;
  std::int64_t per_unit = 0;
  std::int64_t stack_total = 0;
  std::int64_t score_map = 0;
  std::int64_t total = 0;

  std::vector<TableRow> rows() const;
};

FlopReport estimate_flops(const ConvFormerConfig& cfg, int h, int w, int k);

}  // namespace convformer
