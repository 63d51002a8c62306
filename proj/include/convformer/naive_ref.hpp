#pragma once

// Straight-line reference implementations used as independent oracles.
// Everything here works on plain row-major double buffers with explicit
// extents and deliberately shares no code with the tensor core.

#include <cstdint>
#include <vector>

namespace convformer::naive {

using Buf = std::vector<double>;

Buf matmul(const Buf& a, std::int64_t m, std::int64_t k, const Buf& b, std::int64_t n);

/// Channels-last conv: input [h, w, cin], weight [kh, kw, cin/groups, cout].
Buf conv2d(const Buf& input, std::int64_t h, std::int64_t w, std::int64_t cin, const Buf& weight,
           std::int64_t kh, std::int64_t kw, std::int64_t cout, const Buf* bias, int stride,
           int padding, int groups, std::int64_t& out_h, std::int64_t& out_w);

/// Softmax along the middle extent of an [outer, n, inner] view.
Buf softmax(const Buf& x, std::int64_t outer, std::int64_t n, std::int64_t inner);

Buf layer_norm(const Buf& x, std::int64_t rows, std::int64_t c, const Buf& gamma, const Buf& beta,
               double eps);

Buf bilinear_upsample(const Buf& x, std::int64_t h, std::int64_t w, std::int64_t c, int factor);

double relu6(double v);
double gelu_tanh(double v);

/// Conv2Former attention: queries = text[k_rows, c] * w_q, keys = values =
/// raw tokens[m, c], per-head softmax(q k / sqrt(d)) v, heads concatenated,
/// then * w_o.
Buf cross_attention_c2f(const Buf& text, std::int64_t k_rows, const Buf& tokens, std::int64_t m,
                        std::int64_t c, const Buf& w_q, const Buf& w_o, int heads);

/// Former2Conv attention: queries = raw pixels[p, c], keys/values =
/// text[k_rows, c] * w_k / * w_v, no output projection.
Buf cross_attention_f2c(const Buf& pixels, std::int64_t p, const Buf& text, std::int64_t k_rows,
                        std::int64_t c, const Buf& w_k, const Buf& w_v, int heads);

/// softmax of raw dot products; values are the raw opposite-side rows.
Buf inner_product_bridge(const Buf& queries, std::int64_t nq, const Buf& keys, std::int64_t nk,
                         std::int64_t c);

struct ConvBlockRef {
  Buf expand_w, expand_b;    // [1,1,c,ec], [ec]
  Buf dw_w, dw_b;            // [3,3,1,ec], [ec]
  Buf project_w, project_b;  // [1,1,ec,c], [c]
  std::int64_t c, ec;
};

Buf conv_block(const Buf& feature, std::int64_t h, std::int64_t w, const ConvBlockRef& wts);

struct FormerBlockRef {
  Buf w_q, w_k, w_v, w_o;  // [c, c]
  Buf fc1_w, fc1_b;        // [c, fc], [fc]
  Buf fc2_w, fc2_b;        // [fc, c], [c]
  Buf n1_gamma, n1_beta, n2_gamma, n2_beta;  // [c]
  std::int64_t c, fc;
  int heads;
  double eps;
};

Buf former_block(const Buf& text, std::int64_t k_rows, const FormerBlockRef& wts);

struct BridgeRef {
  Buf down_w, down_b;  // [k,k,1,c] depthwise, [c]
  Buf w_q, w_o, w_k, w_v;
  int kernel, stride;
};

/// Zero-pads to the next stride multiple, then depthwise-aggregates each
/// patch into one token; returns [ceil(h/s)*ceil(w/s), c].
Buf downsample_patches(const Buf& feature, std::int64_t h, std::int64_t w, std::int64_t c,
                       const BridgeRef& bridge, std::int64_t& tokens_out);

struct UnitRef {
  BridgeRef bridge;
  ConvBlockRef conv;
  FormerBlockRef former;
  bool inner_product = false;
};

/// Transcription of one Conv-Former unit: tokens, text += c2f, conv/former
/// in parallel, pixels += f2c.
void conv_former_unit(const Buf& feature, const Buf& text, std::int64_t h, std::int64_t w,
                      std::int64_t c, std::int64_t k_rows, const UnitRef& unit, Buf& feature_out,
                      Buf& text_out);

Buf score_map(const Buf& feature, std::int64_t h, std::int64_t w, std::int64_t c, const Buf& text,
              std::int64_t k_rows, double tau);

/// Per-pixel confusion-matrix mIoU; labels equal to ignore are skipped and
/// classes absent from both sides are excluded from the mean.
double miou(const std::vector<int>& prediction, const std::vector<int>& truth, int num_classes,
            int ignore_label, std::vector<double>* per_class = nullptr);

/// Scalar AdamW transcription for the optimizer oracle.
struct AdamWScalarRef {
  double m = 0.0, v = 0.0;
  std::int64_t t = 0;
  double step(double param, double grad, double lr, double beta1, double beta2, double eps,
              double weight_decay);
};

}  // namespace convformer::naive
