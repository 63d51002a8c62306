#include "convformer/naive_ref.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer::naive {

Buf matmul(const Buf& a, std::int64_t m, std::int64_t k, const Buf& b, std::int64_t n) {
  Buf out(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      out[i * n + j] = acc;
    }
  }
  return out;
}

Buf conv2d(const Buf& input, std::int64_t h, std::int64_t w, std::int64_t cin, const Buf& weight,
           std::int64_t kh, std::int64_t kw, std::int64_t cout, const Buf* bias, int stride,
           int padding, int groups, std::int64_t& out_h, std::int64_t& out_w) {
  const std::int64_t cinpg = cin / groups;
  const std::int64_t coutpg = cout / groups;
  out_h = (h + 2 * padding - kh) / stride + 1;
  out_w = (w + 2 * padding - kw) / stride + 1;
  Buf out(static_cast<std::size_t>(out_h * out_w * cout), 0.0);
  for (std::int64_t ho = 0; ho < out_h; ++ho) {
    for (std::int64_t wo = 0; wo < out_w; ++wo) {
      for (std::int64_t co = 0; co < cout; ++co) {
        const std::int64_t g = co / coutpg;
        double acc = bias ? (*bias)[co] : 0.0;
        for (std::int64_t dy = 0; dy < kh; ++dy) {
          for (std::int64_t dx = 0; dx < kw; ++dx) {
            const std::int64_t hi = ho * stride - padding + dy;
            const std::int64_t wi = wo * stride - padding + dx;
            if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
            for (std::int64_t ci = 0; ci < cinpg; ++ci) {
              acc += input[(hi * w + wi) * cin + g * cinpg + ci] *
                     weight[((dy * kw + dx) * cinpg + ci) * cout + co];
            }
          }
        }
        out[(ho * out_w + wo) * cout + co] = acc;
      }
    }
  }
  return out;
}

Buf softmax(const Buf& x, std::int64_t outer, std::int64_t n, std::int64_t inner) {
  Buf out(x.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      double mx = x[base];
      for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      double denom = 0.0;
      for (std::int64_t i = 0; i < n; ++i) denom += std::exp(x[base + i * inner] - mx);
      for (std::int64_t i = 0; i < n; ++i) {
        out[base + i * inner] = std::exp(x[base + i * inner] - mx) / denom;
      }
    }
  }
  return out;
}

Buf layer_norm(const Buf& x, std::int64_t rows, std::int64_t c, const Buf& gamma, const Buf& beta,
               double eps) {
  Buf out(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < c; ++i) mean += x[r * c + i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t i = 0; i < c; ++i) {
      var += (x[r * c + i] - mean) * (x[r * c + i] - mean);
    }
    var /= static_cast<double>(c);
    for (std::int64_t i = 0; i < c; ++i) {
      out[r * c + i] = (x[r * c + i] - mean) / std::sqrt(var + eps) * gamma[i] + beta[i];
    }
  }
  return out;
}

Buf bilinear_upsample(const Buf& x, std::int64_t h, std::int64_t w, std::int64_t c, int factor) {
  const std::int64_t oh = h * factor, ow = w * factor;
  Buf out(static_cast<std::size_t>(oh * ow * c));
  for (std::int64_t i = 0; i < oh; ++i) {
    double sy = (i + 0.5) / factor - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (std::int64_t j = 0; j < ow; ++j) {
      double sx = (j + 0.5) / factor - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - fx) * x[(y0 * w + x0) * c + ch] + fx * x[(y0 * w + x1) * c + ch];
        const double bot = (1.0 - fx) * x[(y1 * w + x0) * c + ch] + fx * x[(y1 * w + x1) * c + ch];
        out[(i * ow + j) * c + ch] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

double relu6(double v) { return std::min(std::max(v, 0.0), 6.0); }

double gelu_tanh(double v) {
  return 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
}

namespace {

// Per-head attention with explicit loops; q [nq, c], k/v [nk, c], head dim
// d = c / heads, columns of head h are [h*d, (h+1)*d).
Buf headed_attention(const Buf& q, std::int64_t nq, const Buf& k, const Buf& v, std::int64_t nk,
                     std::int64_t c, int heads) {
  const std::int64_t d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Buf out(static_cast<std::size_t>(nq * c), 0.0);
  Buf logits(static_cast<std::size_t>(nk));
  for (int h = 0; h < heads; ++h) {
    const std::int64_t col0 = h * d;
    for (std::int64_t i = 0; i < nq; ++i) {
      for (std::int64_t j = 0; j < nk; ++j) {
        double dot = 0.0;
        for (std::int64_t e = 0; e < d; ++e) dot += q[i * c + col0 + e] * k[j * c + col0 + e];
        logits[j] = dot * inv_sqrt_d;
      }
      double mx = logits[0];
      for (std::int64_t j = 1; j < nk; ++j) mx = std::max(mx, logits[j]);
      double denom = 0.0;
      for (std::int64_t j = 0; j < nk; ++j) denom += std::exp(logits[j] - mx);
      for (std::int64_t j = 0; j < nk; ++j) {
        const double weight = std::exp(logits[j] - mx) / denom;
        for (std::int64_t e = 0; e < d; ++e) {
          out[i * c + col0 + e] += weight * v[j * c + col0 + e];
        }
      }
    }
  }
  return out;
}

}  // namespace

Buf cross_attention_c2f(const Buf& text, std::int64_t k_rows, const Buf& tokens, std::int64_t m,
                        std::int64_t c, const Buf& w_q, const Buf& w_o, int heads) {
  const Buf q = matmul(text, k_rows, c, w_q, c);
  const Buf fused = headed_attention(q, k_rows, tokens, tokens, m, c, heads);
  return matmul(fused, k_rows, c, w_o, c);
}

Buf cross_attention_f2c(const Buf& pixels, std::int64_t p, const Buf& text, std::int64_t k_rows,
                        std::int64_t c, const Buf& w_k, const Buf& w_v, int heads) {
  const Buf k = matmul(text, k_rows, c, w_k, c);
  const Buf v = matmul(text, k_rows, c, w_v, c);
  return headed_attention(pixels, p, k, v, k_rows, c, heads);
}

Buf inner_product_bridge(const Buf& queries, std::int64_t nq, const Buf& keys, std::int64_t nk,
                         std::int64_t c) {
  Buf out(static_cast<std::size_t>(nq * c), 0.0);
  Buf logits(static_cast<std::size_t>(nk));
  for (std::int64_t i = 0; i < nq; ++i) {
    for (std::int64_t j = 0; j < nk; ++j) {
      double dot = 0.0;
      for (std::int64_t e = 0; e < c; ++e) dot += queries[i * c + e] * keys[j * c + e];
      logits[j] = dot;
    }
    double mx = logits[0];
    for (std::int64_t j = 1; j < nk; ++j) mx = std::max(mx, logits[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < nk; ++j) denom += std::exp(logits[j] - mx);
    for (std::int64_t j = 0; j < nk; ++j) {
      const double weight = std::exp(logits[j] - mx) / denom;
      for (std::int64_t e = 0; e < c; ++e) out[i * c + e] += weight * keys[j * c + e];
    }
  }
  return out;
}

Buf conv_block(const Buf& feature, std::int64_t h, std::int64_t w, const ConvBlockRef& wts) {
  std::int64_t oh, ow;
  Buf x = conv2d(feature, h, w, wts.c, wts.expand_w, 1, 1, wts.ec, &wts.expand_b, 1, 0, 1, oh, ow);
  for (double& v : x) v = relu6(v);
  x = conv2d(x, h, w, wts.ec, wts.dw_w, 3, 3, wts.ec, &wts.dw_b, 1, 1,
             static_cast<int>(wts.ec), oh, ow);
  for (double& v : x) v = relu6(v);
  x = conv2d(x, h, w, wts.ec, wts.project_w, 1, 1, wts.c, &wts.project_b, 1, 0, 1, oh, ow);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += feature[i];
  return x;
}

Buf former_block(const Buf& text, std::int64_t k_rows, const FormerBlockRef& wts) {
  const std::int64_t c = wts.c;
  const Buf q = matmul(text, k_rows, c, wts.w_q, c);
  const Buf k = matmul(text, k_rows, c, wts.w_k, c);
  const Buf v = matmul(text, k_rows, c, wts.w_v, c);
  Buf att = headed_attention(q, k_rows, k, v, k_rows, c, wts.heads);
  att = matmul(att, k_rows, c, wts.w_o, c);
  Buf t1(att.size());
  for (std::size_t i = 0; i < att.size(); ++i) t1[i] = text[i] + att[i];
  t1 = layer_norm(t1, k_rows, c, wts.n1_gamma, wts.n1_beta, wts.eps);
  Buf ffn = matmul(t1, k_rows, c, wts.fc1_w, wts.fc);
  for (std::int64_t r = 0; r < k_rows; ++r) {
    for (std::int64_t i = 0; i < wts.fc; ++i) {
      ffn[r * wts.fc + i] = gelu_tanh(ffn[r * wts.fc + i] + wts.fc1_b[i]);
    }
  }
  ffn = matmul(ffn, k_rows, wts.fc, wts.fc2_w, c);
  Buf t2(ffn.size());
  for (std::int64_t r = 0; r < k_rows; ++r) {
    for (std::int64_t i = 0; i < c; ++i) {
      t2[r * c + i] = t1[r * c + i] + ffn[r * c + i] + wts.fc2_b[i];
    }
  }
  return layer_norm(t2, k_rows, c, wts.n2_gamma, wts.n2_beta, wts.eps);
}

Buf downsample_patches(const Buf& feature, std::int64_t h, std::int64_t w, std::int64_t c,
                       const BridgeRef& bridge, std::int64_t& tokens_out) {
  const int s = bridge.stride;
  const std::int64_t hp = (h + s - 1) / s * s;
  const std::int64_t wp = (w + s - 1) / s * s;
  Buf padded(static_cast<std::size_t>(hp * wp * c), 0.0);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        padded[(i * wp + j) * c + ch] = feature[(i * w + j) * c + ch];
      }
    }
  }
  std::int64_t th, tw;
  Buf tokens = conv2d(padded, hp, wp, c, bridge.down_w, bridge.kernel, bridge.kernel, c,
                      &bridge.down_b, s, 0, static_cast<int>(c), th, tw);
  tokens_out = th * tw;
  return tokens;
}

void conv_former_unit(const Buf& feature, const Buf& text, std::int64_t h, std::int64_t w,
                      std::int64_t c, std::int64_t k_rows, const UnitRef& unit, Buf& feature_out,
                      Buf& text_out) {
  std::int64_t m = 0;
  const Buf tokens = downsample_patches(feature, h, w, c, unit.bridge, m);

  Buf text_fused(text.size());
  const Buf c2f = unit.inner_product
                      ? inner_product_bridge(text, k_rows, tokens, m, c)
                      : cross_attention_c2f(text, k_rows, tokens, m, c, unit.bridge.w_q,
                                            unit.bridge.w_o, unit.former.heads);
  for (std::size_t i = 0; i < text.size(); ++i) text_fused[i] = text[i] + c2f[i];

  const Buf conv_out = conv_block(feature, h, w, unit.conv);
  text_out = former_block(text_fused, k_rows, unit.former);

  const Buf f2c = unit.inner_product
                      ? inner_product_bridge(conv_out, h * w, text_out, k_rows, c)
                      : cross_attention_f2c(conv_out, h * w, text_out, k_rows, c,
                                            unit.bridge.w_k, unit.bridge.w_v, unit.former.heads);
  feature_out.assign(conv_out.size(), 0.0);
  for (std::size_t i = 0; i < conv_out.size(); ++i) feature_out[i] = conv_out[i] + f2c[i];
}

Buf score_map(const Buf& feature, std::int64_t h, std::int64_t w, std::int64_t c, const Buf& text,
              std::int64_t k_rows, double tau) {
  Buf out(static_cast<std::size_t>(h * w * k_rows));
  for (std::int64_t p = 0; p < h * w; ++p) {
    for (std::int64_t k = 0; k < k_rows; ++k) {
      double dot = 0.0;
      for (std::int64_t e = 0; e < c; ++e) dot += feature[p * c + e] * text[k * c + e];
      out[p * k_rows + k] = dot / tau;
    }
  }
  return out;
}

double miou(const std::vector<int>& prediction, const std::vector<int>& truth, int num_classes,
            int ignore_label, std::vector<double>* per_class) {
  if (prediction.size() != truth.size()) {
    throw std::invalid_argument("miou: prediction/truth size mismatch");
  }
  std::vector<std::int64_t> confusion(static_cast<std::size_t>(num_classes) * num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore_label) continue;
    confusion[static_cast<std::size_t>(truth[i]) * num_classes + prediction[i]] += 1;
  }
  if (per_class) per_class->assign(static_cast<std::size_t>(num_classes), 0.0);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = confusion[static_cast<std::size_t>(c) * num_classes + c];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += confusion[static_cast<std::size_t>(o) * num_classes + c];
      fn += confusion[static_cast<std::size_t>(c) * num_classes + o];
    }
    if (tp + fp + fn == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    if (per_class) (*per_class)[c] = iou;
    sum += iou;
    ++present;
  }
  return present > 0 ? sum / present : 0.0;
}

double AdamWScalarRef::step(double param, double grad, double lr, double beta1, double beta2,
                            double eps, double weight_decay) {
  ++t;
  param *= 1.0 - lr * weight_decay;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad * grad;
  const double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
  const double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
  return param - lr * m_hat / (std::sqrt(v_hat) + eps);
}

}  // namespace convformer::naive
