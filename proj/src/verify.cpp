#include "convformer/verify.hpp"

#include <cmath>
#include <sstream>

#include "convformer/conv_former.hpp"
#include "convformer/dataset.hpp"
#include "convformer/gradcheck.hpp"
#include "convformer/naive_ref.hpp"
#include "convformer/pipeline.hpp"
#include "convformer/rng.hpp"
#include "convformer/tensor.hpp"

namespace convformer {

void SuiteReport::add(std::string name, double value, double tol) {
  const bool ok = value < tol;
  rows.push_back(SuiteRow{std::move(name), value, tol, ok});
  pass = pass && ok;
  worst = std::max(worst, value);
}

std::string SuiteReport::table() const {
  std::ostringstream os;
  for (const SuiteRow& row : rows) {
    os << (row.pass ? "[pass] " : "[FAIL] ") << row.name << "  err=" << row.value
       << "  tol=" << row.tol << "\n";
  }
  return os.str();
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, Dtype dt = Dtype::F64,
                     bool requires_grad = false) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(v), std::move(shape), dt, requires_grad);
}

// Keeps relu6 inputs away from its kinks so central differences stay valid.
Tensor random_tensor_kink_safe(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) {
    x = rng.uniform(-3.0, 3.0);
    if (std::abs(x) < 0.01) x += 0.02;
    if (std::abs(x - 6.0) < 0.01) x -= 0.02;
  }
  return Tensor::from_data(std::move(v), std::move(shape), Dtype::F64);
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

double gradcheck_err(const ScalarFn& f, std::vector<Tensor> inputs) {
  return finite_diff_gradcheck(f, std::move(inputs)).max_rel_err;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// ---- gradcheck suite cases --------------------------------------------------

double check_matmul() {
  Rng rng(101);
  double worst = 0.0;
  const ScalarFn f2 = [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); };
  worst = std::max(worst, gradcheck_err(f2, {random_tensor({3, 4}, rng, -1, 1),
                                             random_tensor({4, 2}, rng, -1, 1)}));
  worst = std::max(worst, gradcheck_err(f2, {random_tensor({1, 5}, rng, -1, 1),
                                             random_tensor({5, 1}, rng, -1, 1)}));
  worst = std::max(worst, gradcheck_err(f2, {random_tensor({2, 3, 2}, rng, -1, 1),
                                             random_tensor({2, 2, 4}, rng, -1, 1)}));
  worst = std::max(worst, gradcheck_err(f2, {random_tensor({2, 3, 2}, rng, -1, 1),
                                             random_tensor({2, 4}, rng, -1, 1)}));
  return worst;
}

double check_conv2d() {
  Rng rng(102);
  double worst = 0.0;
  struct Case {
    Shape in, w;
    int stride, padding, groups;
  };
  const Case cases[] = {
      {{4, 4, 2}, {3, 3, 2, 3}, 1, 1, 1},
      {{5, 5, 3}, {3, 3, 3, 4}, 2, 1, 1},
      {{6, 6, 4}, {3, 3, 1, 4}, 3, 0, 4},
      {{3, 4, 4}, {1, 1, 2, 6}, 1, 0, 2},
  };
  for (const Case& c : cases) {
    const ScalarFn f = [c](const std::vector<Tensor>& in) {
      return sum(conv2d(in[0], in[1], in[2], c.stride, c.padding, c.groups));
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor(c.in, rng, -1, 1),
                                              random_tensor(c.w, rng, -1, 1),
                                              random_tensor({c.w[3]}, rng, -1, 1)}));
  }
  return worst;
}

double check_softmax() {
  Rng rng(103);
  double worst = 0.0;
  for (int axis : {0, 1, 2}) {
    const ScalarFn f = [axis](const std::vector<Tensor>& in) {
      Tensor s = softmax(in[0], axis);
      return sum(mul(s, in[1]));  // weighted sum exercises the Jacobian
    };
    Shape shape{2, 3, 4};
    worst = std::max(worst, gradcheck_err(f, {random_tensor(shape, rng, -2, 2),
                                              random_tensor(shape, rng, -1, 1)}));
  }
  return worst;
}

double check_layer_norm() {
  Rng rng(104);
  double worst = 0.0;
  for (const Shape& shape : {Shape{3, 4}, Shape{2, 2, 5}, Shape{1, 6}}) {
    const std::int64_t c = shape.back();
    const ScalarFn f = [](const std::vector<Tensor>& in) {
      Tensor y = layer_norm(in[0], in[1], in[2], kLayerNormEps);
      return sum(mul(y, in[3]));
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor(shape, rng, -2, 2),
                                              random_tensor({c}, rng, 0.5, 1.5),
                                              random_tensor({c}, rng, -0.5, 0.5),
                                              random_tensor(shape, rng, -1, 1)}));
  }
  return worst;
}

double check_elementwise() {
  Rng rng(105);
  double worst = 0.0;
  const ScalarFn add_fn = [](const std::vector<Tensor>& in) { return sum(add(in[0], in[1])); };
  worst = std::max(worst, gradcheck_err(add_fn, {random_tensor({3, 4}, rng, -1, 1),
                                                 random_tensor({4}, rng, -1, 1)}));
  worst = std::max(worst, gradcheck_err(add_fn, {random_tensor({2, 3, 2}, rng, -1, 1),
                                                 random_tensor({1, 3, 2}, rng, -1, 1)}));
  const ScalarFn mul_fn = [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); };
  worst = std::max(worst, gradcheck_err(mul_fn, {random_tensor({3, 4}, rng, -1, 1),
                                                 random_tensor({4}, rng, -1, 1)}));
  const ScalarFn relu_fn = [](const std::vector<Tensor>& in) { return sum(relu6(in[0])); };
  for (int i = 0; i < 3; ++i) {
    worst = std::max(worst, gradcheck_err(relu_fn, {random_tensor_kink_safe({4, 5}, rng)}));
  }
  const ScalarFn gelu_fn = [](const std::vector<Tensor>& in) { return sum(gelu(in[0])); };
  worst = std::max(worst, gradcheck_err(gelu_fn, {random_tensor({4, 5}, rng, -3, 3)}));
  const ScalarFn scale_fn = [](const std::vector<Tensor>& in) {
    return sum(scale(in[0], -1.7));
  };
  worst = std::max(worst, gradcheck_err(scale_fn, {random_tensor({6}, rng, -1, 1)}));
  return worst;
}

double check_concat_reshape() {
  Rng rng(106);
  double worst = 0.0;
  const ScalarFn cat_fn = [](const std::vector<Tensor>& in) {
    Tensor c = concat({in[0], in[1]}, 2);
    return sum(mul(c, c));
  };
  worst = std::max(worst, gradcheck_err(cat_fn, {random_tensor({2, 3, 2}, rng, -1, 1),
                                                 random_tensor({2, 3, 4}, rng, -1, 1)}));
  const ScalarFn shape_fn = [](const std::vector<Tensor>& in) {
    Tensor p = permute(reshape(in[0], {4, 6}), {1, 0});
    return sum(mul(p, p));
  };
  worst = std::max(worst, gradcheck_err(shape_fn, {random_tensor({2, 3, 4}, rng, -1, 1)}));
  const ScalarFn pad_fn = [](const std::vector<Tensor>& in) {
    Tensor p = pad_bottom_right(in[0], 2, 1);
    return sum(mul(p, p));
  };
  worst = std::max(worst, gradcheck_err(pad_fn, {random_tensor({3, 4, 2}, rng, -1, 1)}));
  const ScalarFn crop_fn = [](const std::vector<Tensor>& in) {
    Tensor c = crop_top_left(in[0], 2, 3);
    return sum(mul(c, c));
  };
  worst = std::max(worst, gradcheck_err(crop_fn, {random_tensor({4, 5, 2}, rng, -1, 1)}));
  return worst;
}

double check_bilinear() {
  Rng rng(107);
  double worst = 0.0;
  for (int factor : {1, 2, 3}) {
    const ScalarFn f = [factor](const std::vector<Tensor>& in) {
      Tensor u = bilinear_upsample(in[0], factor);
      return sum(mul(u, u));
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor({3, 4, 2}, rng, -1, 1)}));
  }
  return worst;
}

double check_cross_entropy() {
  Rng rng(108);
  double worst = 0.0;
  for (int round = 0; round < 3; ++round) {
    const int n = 5, k = 3 + round;
    std::vector<double> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = (i == 2 && round == 1) ? kIgnoreLabel
                                         : static_cast<double>(rng.below(k));
    }
    Tensor label_tensor = Tensor::from_data(std::move(labels), {n}, Dtype::F64);
    const ScalarFn f = [label_tensor](const std::vector<Tensor>& in) {
      return cross_entropy(in[0], label_tensor, kIgnoreLabel);
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor({n, k}, rng, -2, 2)}));
  }
  return worst;
}

double check_bridges() {
  Rng rng(109);
  double worst = 0.0;
  for (int heads : {1, 2}) {
    const int k = 3, m = 4, c = 4;
    const ScalarFn c2f = [heads](const std::vector<Tensor>& in) {
      BridgeWeights w;
      w.w_q = in[2];
      w.w_o = in[3];
      Tensor out = cross_attention_c2f(in[0], in[1], w, heads);
      return scale(sum(mul(out, out)), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(c2f, {random_tensor({k, c}, rng, -1, 1),
                                                random_tensor({m, c}, rng, -1, 1),
                                                random_tensor({c, c}, rng, -1, 1),
                                                random_tensor({c, c}, rng, -1, 1)}));
    const ScalarFn f2c = [heads](const std::vector<Tensor>& in) {
      BridgeWeights w;
      w.w_k = in[2];
      w.w_v = in[3];
      Tensor out = cross_attention_f2c(in[0], in[1], w, heads);
      return scale(sum(mul(out, out)), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(f2c, {random_tensor({m, c}, rng, -1, 1),
                                                random_tensor({k, c}, rng, -1, 1),
                                                random_tensor({c, c}, rng, -1, 1),
                                                random_tensor({c, c}, rng, -1, 1)}));
  }
  const ScalarFn ip = [](const std::vector<Tensor>& in) {
    Tensor out = inner_product_c2f(in[0], in[1]);
    return scale(sum(mul(out, out)), 1e-4);
  };
  worst = std::max(worst, gradcheck_err(ip, {random_tensor({3, 4}, rng, -1, 1),
                                             random_tensor({5, 4}, rng, -1, 1)}));
  return worst;
}

FusionStack tiny_stack(Rng& rng, int depth, int channels, int heads, BridgeVariant variant) {
  ConvFormerConfig cfg;
  cfg.channels = channels;
  cfg.classes = 3;
  cfg.heads = heads;
  cfg.depth = depth;
  cfg.bridge_variant = variant;
  return make_fusion_stack(cfg, rng, Dtype::F64);
}

double check_blocks_and_unit() {
  Rng rng(110);
  double worst = 0.0;

  // conv_block through its weights and input.
  {
    FusionStack stack = tiny_stack(rng, 1, 4, 2, BridgeVariant::CrossAttention);
    ConvFormerUnit& unit = stack.units[0];
    std::vector<Tensor> inputs{random_tensor_kink_safe({3, 3, 4}, rng)};
    std::vector<Tensor*> weight_slots{&unit.conv.expand_weight, &unit.conv.dw_weight,
                                      &unit.conv.project_weight, &unit.conv.expand_bias};
    for (Tensor* slot : weight_slots) inputs.push_back(slot->detached());
    const ScalarFn f = [&unit](const std::vector<Tensor>& in) {
      ConvBlockWeights w = unit.conv;
      w.expand_weight = in[1];
      w.dw_weight = in[2];
      w.project_weight = in[3];
      w.expand_bias = in[4];
      Tensor out = conv_block(in[0], w);
      return scale(sum(mul(out, out)), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(f, inputs));
  }

  // former_block through text, one projection, one norm parameter.
  {
    FusionStack stack = tiny_stack(rng, 1, 4, 2, BridgeVariant::CrossAttention);
    ConvFormerUnit& unit = stack.units[0];
    std::vector<Tensor> inputs{random_tensor({3, 4}, rng, -1, 1),
                               unit.former.w_q.detached(), unit.former.fc1_weight.detached(),
                               unit.former.norm1_gamma.detached()};
    const ScalarFn f = [&unit](const std::vector<Tensor>& in) {
      FormerBlockWeights w = unit.former;
      w.w_q = in[1];
      w.fc1_weight = in[2];
      w.norm1_gamma = in[3];
      Tensor out = former_block(in[0], w, 2);
      return scale(sum(mul(out, out)), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(f, inputs));
  }

  // Whole unit through both streams.
  for (BridgeVariant variant : {BridgeVariant::CrossAttention, BridgeVariant::InnerProduct}) {
    FusionStack stack = tiny_stack(rng, 1, 4, 2, variant);
    const ScalarFn f = [&stack](const std::vector<Tensor>& in) {
      auto [fo, to] = conv_former_unit(in[0], in[1], stack.units[0], stack.cfg);
      return scale(add(sum(mul(fo, fo)), sum(mul(to, to))), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor_kink_safe({4, 4, 4}, rng),
                                              random_tensor({3, 4}, rng, -1, 1)}));
  }

  // Stacked fusion with the outer residual.
  {
    FusionStack stack = tiny_stack(rng, 2, 4, 2, BridgeVariant::CrossAttention);
    const ScalarFn f = [&stack](const std::vector<Tensor>& in) {
      auto [fo, to] = fusion_forward(in[0], in[1], stack);
      return scale(add(sum(mul(fo, fo)), sum(mul(to, to))), 1e-4);
    };
    worst = std::max(worst, gradcheck_err(f, {random_tensor_kink_safe({3, 3, 4}, rng),
                                              random_tensor({3, 4}, rng, -1, 1)}));
  }
  return worst;
}

double check_pipeline_end_to_end() {
  PipelineConfig cfg;
  cfg.fusion.channels = 8;
  cfg.fusion.heads = 2;
  cfg.fusion_depth = 1;
  cfg.vis_channels = 8;
  cfg.text_channels = 8;
  TextEmbeddings text = stub_text_encoder(SyntheticDataset::class_names(3), 8, 5);
  SegmentationPipeline pipeline(cfg, text, 17, Dtype::F64);

  Rng rng(111);
  Tensor image = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  std::vector<double> label_values(64);
  for (double& v : label_values) v = static_cast<double>(rng.below(3));
  label_values[5] = kIgnoreLabel;
  Tensor labels = Tensor::from_data(std::move(label_values), {8, 8}, Dtype::F64);

  const auto loss_value = [&]() {
    auto out = pipeline.forward(image);
    return 0.01 * pipeline.loss(out, labels, 0.4).value();
  };

  pipeline.zero_grads();
  {
    Graph graph;
    auto out = pipeline.forward(image);
    Tensor loss = scale(pipeline.loss(out, labels, 0.4), 0.01);
    graph.backward(loss);
  }

  const double step = 1e-6;
  constexpr double kGuard = 1e-8;
  double worst = 0.0;
  for (Param& p : pipeline.params()) {
    const std::vector<double> analytic =
        p.tensor.grad_defined() ? p.tensor.grad()
                                : std::vector<double>(p.tensor.numel(), 0.0);
    std::vector<double>& w = p.tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + step;
      const double fp = loss_value();
      w[i] = saved - step;
      const double fm = loss_value();
      w[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(kGuard, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

SuiteReport run_gradcheck_suite(bool include_pipeline) {
  SuiteReport report;
  const double tol = 1e-4;
  report.add("matmul", check_matmul(), tol);
  report.add("conv2d", check_conv2d(), tol);
  report.add("softmax", check_softmax(), tol);
  report.add("layer_norm", check_layer_norm(), tol);
  report.add("elementwise", check_elementwise(), tol);
  report.add("concat_reshape_permute_pad", check_concat_reshape(), tol);
  report.add("bilinear_upsample", check_bilinear(), tol);
  report.add("cross_entropy", check_cross_entropy(), tol);
  report.add("bridges", check_bridges(), tol);
  report.add("blocks_and_fusion", check_blocks_and_unit(), tol);
  if (include_pipeline) {
    report.add("pipeline_end_to_end", check_pipeline_end_to_end(), 1e-3);
  }
  return report;
}

// ---- oracle suite ------------------------------------------------------------

namespace {

double oracle_matmul() {
  Rng rng(201);
  double worst = 0.0;
  for (int m = 1; m <= 6; ++m) {
    for (int k = 1; k <= 6; ++k) {
      for (int n = 1; n <= 6; ++n) {
        Tensor a = random_tensor({m, k}, rng, -2, 2);
        Tensor b = random_tensor({k, n}, rng, -2, 2);
        naive::Buf expect = naive::matmul(a.data(), m, k, b.data(), n);
        worst = std::max(worst, max_abs_diff(matmul(a, b).data(), expect));
      }
    }
  }
  return worst;
}

double oracle_matmul_f32() {
  Rng rng(202);
  double worst = 0.0;
  for (int m = 1; m <= 6; m += 2) {
    for (int k = 1; k <= 6; k += 2) {
      for (int n = 1; n <= 6; n += 2) {
        Tensor a = random_tensor({m, k}, rng, -2, 2, Dtype::F32);
        Tensor b = random_tensor({k, n}, rng, -2, 2, Dtype::F32);
        naive::Buf expect = naive::matmul(a.data(), m, k, b.data(), n);
        worst = std::max(worst, max_abs_diff(matmul(a, b).data(), expect));
      }
    }
  }
  return worst;
}

double oracle_conv2d(Dtype dt) {
  Rng rng(dt == Dtype::F64 ? 203 : 204);
  double worst = 0.0;
  struct ChannelCase {
    int cin, cout, groups;
  };
  const ChannelCase channel_cases[] = {{1, 1, 1}, {2, 3, 1}, {4, 4, 4}, {4, 2, 2}, {6, 4, 2}, {3, 3, 3}};
  for (int h = 1; h <= 6; ++h) {
    for (int w = 1; w <= 6; w += 2) {
      for (int kh = 1; kh <= 3; ++kh) {
        for (int kw = 1; kw <= 3; kw += 2) {
          for (int stride : {1, 2, 3}) {
            for (int padding : {0, 1}) {
              if (h + 2 * padding < kh || w + 2 * padding < kw) continue;
              for (const ChannelCase& cc : channel_cases) {
                Tensor input = random_tensor({h, w, cc.cin}, rng, -2, 2, dt);
                Tensor weight =
                    random_tensor({kh, kw, cc.cin / cc.groups, cc.cout}, rng, -2, 2, dt);
                Tensor bias = random_tensor({cc.cout}, rng, -1, 1, dt);
                std::int64_t oh, ow;
                naive::Buf expect = naive::conv2d(input.data(), h, w, cc.cin, weight.data(), kh,
                                                  kw, cc.cout, &bias.data(), stride, padding,
                                                  cc.groups, oh, ow);
                Tensor got = conv2d(input, weight, bias, stride, padding, cc.groups);
                worst = std::max(worst, max_abs_diff(got.data(), expect));
              }
            }
          }
        }
      }
    }
  }
  return worst;
}

double oracle_softmax(Dtype dt) {
  Rng rng(dt == Dtype::F64 ? 205 : 206);
  double worst = 0.0;
  for (int a = 1; a <= 6; ++a) {
    for (int b = 1; b <= 6; ++b) {
      for (int c = 1; c <= 4; ++c) {
        Tensor x = random_tensor({a, b, c}, rng, -4, 4, dt);
        for (int axis = 0; axis < 3; ++axis) {
          std::int64_t outer = 1, inner = 1;
          const Shape& s = x.shape();
          for (int i = 0; i < axis; ++i) outer *= s[i];
          for (int i = axis + 1; i < 3; ++i) inner *= s[i];
          naive::Buf expect = naive::softmax(x.data(), outer, s[axis], inner);
          worst = std::max(worst, max_abs_diff(softmax(x, axis).data(), expect));
        }
      }
    }
  }
  return worst;
}

double oracle_layer_norm() {
  Rng rng(207);
  double worst = 0.0;
  for (int rows = 1; rows <= 6; ++rows) {
    for (int c = 1; c <= 6; ++c) {
      Tensor x = random_tensor({rows, c}, rng, -3, 3);
      Tensor gamma = random_tensor({c}, rng, 0.5, 1.5);
      Tensor beta = random_tensor({c}, rng, -0.5, 0.5);
      naive::Buf expect =
          naive::layer_norm(x.data(), rows, c, gamma.data(), beta.data(), kLayerNormEps);
      worst = std::max(worst,
                       max_abs_diff(layer_norm(x, gamma, beta, kLayerNormEps).data(), expect));
    }
  }
  return worst;
}

double oracle_bilinear() {
  Rng rng(208);
  double worst = 0.0;
  for (int h = 1; h <= 4; ++h) {
    for (int w = 1; w <= 4; ++w) {
      for (int factor : {1, 2, 3}) {
        Tensor x = random_tensor({h, w, 2}, rng, -2, 2);
        naive::Buf expect = naive::bilinear_upsample(x.data(), h, w, 2, factor);
        worst = std::max(worst, max_abs_diff(bilinear_upsample(x, factor).data(), expect));
      }
    }
  }
  return worst;
}

double oracle_bridges() {
  Rng rng(209);
  double worst = 0.0;
  for (int c : {2, 4, 6}) {
    for (int heads : {1, 2}) {
      if (c % heads != 0) continue;
      for (int k = 1; k <= 4; ++k) {
        for (int m = 1; m <= 5; m += 2) {
          Tensor text = random_tensor({k, c}, rng, -1, 1);
          Tensor tokens = random_tensor({m, c}, rng, -1, 1);
          BridgeWeights w;
          w.w_q = random_tensor({c, c}, rng, -1, 1);
          w.w_o = random_tensor({c, c}, rng, -1, 1);
          w.w_k = random_tensor({c, c}, rng, -1, 1);
          w.w_v = random_tensor({c, c}, rng, -1, 1);
          naive::Buf expect_c2f = naive::cross_attention_c2f(
              text.data(), k, tokens.data(), m, c, w.w_q.data(), w.w_o.data(), heads);
          worst = std::max(
              worst, max_abs_diff(cross_attention_c2f(text, tokens, w, heads).data(), expect_c2f));
          naive::Buf expect_f2c = naive::cross_attention_f2c(
              tokens.data(), m, text.data(), k, c, w.w_k.data(), w.w_v.data(), heads);
          worst = std::max(
              worst, max_abs_diff(cross_attention_f2c(tokens, text, w, heads).data(), expect_f2c));
        }
      }
    }
  }
  return worst;
}

double oracle_inner_product() {
  Rng rng(210);
  double worst = 0.0;
  for (int c : {1, 3, 6}) {
    for (int k = 1; k <= 4; ++k) {
      for (int m = 1; m <= 4; ++m) {
        Tensor text = random_tensor({k, c}, rng, -1, 1);
        Tensor tokens = random_tensor({m, c}, rng, -1, 1);
        naive::Buf expect_c2f = naive::inner_product_bridge(text.data(), k, tokens.data(), m, c);
        worst = std::max(worst,
                         max_abs_diff(inner_product_c2f(text, tokens).data(), expect_c2f));
        naive::Buf expect_f2c = naive::inner_product_bridge(tokens.data(), m, text.data(), k, c);
        worst = std::max(worst,
                         max_abs_diff(inner_product_f2c(tokens, text).data(), expect_f2c));
      }
    }
  }
  return worst;
}

naive::ConvBlockRef to_ref(const ConvBlockWeights& w) {
  naive::ConvBlockRef ref;
  ref.expand_w = w.expand_weight.data();
  ref.expand_b = w.expand_bias.data();
  ref.dw_w = w.dw_weight.data();
  ref.dw_b = w.dw_bias.data();
  ref.project_w = w.project_weight.data();
  ref.project_b = w.project_bias.data();
  ref.c = w.expand_weight.dim(2);
  ref.ec = w.expand_weight.dim(3);
  return ref;
}

naive::FormerBlockRef to_ref(const FormerBlockWeights& w, int heads) {
  naive::FormerBlockRef ref;
  ref.w_q = w.w_q.data();
  ref.w_k = w.w_k.data();
  ref.w_v = w.w_v.data();
  ref.w_o = w.w_o.data();
  ref.fc1_w = w.fc1_weight.data();
  ref.fc1_b = w.fc1_bias.data();
  ref.fc2_w = w.fc2_weight.data();
  ref.fc2_b = w.fc2_bias.data();
  ref.n1_gamma = w.norm1_gamma.data();
  ref.n1_beta = w.norm1_beta.data();
  ref.n2_gamma = w.norm2_gamma.data();
  ref.n2_beta = w.norm2_beta.data();
  ref.c = w.w_q.dim(0);
  ref.fc = w.fc1_weight.dim(1);
  ref.heads = heads;
  ref.eps = kLayerNormEps;
  return ref;
}

naive::BridgeRef to_ref(const BridgeWeights& w, const ConvFormerConfig& cfg) {
  naive::BridgeRef ref;
  ref.down_w = w.downsample_weight.data();
  ref.down_b = w.downsample_bias.data();
  ref.w_q = w.w_q.data();
  ref.w_o = w.w_o.data();
  ref.w_k = w.w_k.data();
  ref.w_v = w.w_v.data();
  ref.kernel = cfg.downsample_kernel;
  ref.stride = cfg.downsample_stride;
  return ref;
}

double oracle_conv_block() {
  Rng rng(211);
  double worst = 0.0;
  for (int c : {1, 2, 4}) {
    for (int e : {1, 2, 4}) {
      for (int h = 1; h <= 4; h += 3) {
        ConvFormerConfig cfg;
        cfg.channels = c;
        cfg.heads = 1;
        cfg.bottleneck_expansion = e;
        cfg.depth = 1;
        Rng wrng = rng.fork(static_cast<std::uint64_t>(c * 100 + e * 10 + h));
        FusionStack stack = make_fusion_stack(cfg, wrng, Dtype::F64);
        Tensor feature = random_tensor({h, 4, c}, rng, -2, 2);
        naive::Buf expect = naive::conv_block(feature.data(), h, 4, to_ref(stack.units[0].conv));
        worst = std::max(worst, max_abs_diff(conv_block(feature, stack.units[0].conv).data(),
                                             expect));
      }
    }
  }
  return worst;
}

double oracle_former_block() {
  Rng rng(212);
  double worst = 0.0;
  for (int c : {2, 4, 6}) {
    for (int heads : {1, 2}) {
      if (c % heads != 0) continue;
      for (int k = 1; k <= 4; ++k) {
        ConvFormerConfig cfg;
        cfg.channels = c;
        cfg.heads = heads;
        cfg.depth = 1;
        Rng wrng = rng.fork(static_cast<std::uint64_t>(c * 100 + heads * 10 + k));
        FusionStack stack = make_fusion_stack(cfg, wrng, Dtype::F64);
        Tensor text = random_tensor({k, c}, rng, -1, 1);
        naive::Buf expect =
            naive::former_block(text.data(), k, to_ref(stack.units[0].former, heads));
        worst = std::max(
            worst, max_abs_diff(former_block(text, stack.units[0].former, heads).data(), expect));
      }
    }
  }
  return worst;
}

double oracle_unit() {
  Rng rng(213);
  double worst = 0.0;
  for (int h : {2, 3, 5, 6}) {
    for (int c : {2, 4}) {
      for (int heads : {1, 2}) {
        for (bool inner : {false, true}) {
          ConvFormerConfig cfg;
          cfg.channels = c;
          cfg.classes = 3;
          cfg.heads = heads;
          cfg.depth = 1;
          cfg.bridge_variant = inner ? BridgeVariant::InnerProduct : BridgeVariant::CrossAttention;
          Rng wrng = rng.fork(static_cast<std::uint64_t>(h * 100 + c * 10 + heads + (inner ? 7 : 0)));
          FusionStack stack = make_fusion_stack(cfg, wrng, Dtype::F64);
          Tensor feature = random_tensor({h, h, c}, rng, -1, 1);
          Tensor text = random_tensor({3, c}, rng, -1, 1);
          naive::UnitRef unit_ref;
          unit_ref.bridge = to_ref(stack.units[0].bridge, cfg);
          unit_ref.conv = to_ref(stack.units[0].conv);
          unit_ref.former = to_ref(stack.units[0].former, heads);
          unit_ref.inner_product = inner;
          naive::Buf expect_f, expect_t;
          naive::conv_former_unit(feature.data(), text.data(), h, h, c, 3, unit_ref, expect_f,
                                  expect_t);
          auto [got_f, got_t] = conv_former_unit(feature, text, stack.units[0], cfg);
          worst = std::max(worst, max_abs_diff(got_f.data(), expect_f));
          worst = std::max(worst, max_abs_diff(got_t.data(), expect_t));
        }
      }
    }
  }
  return worst;
}

double oracle_score_map() {
  Rng rng(214);
  double worst = 0.0;
  for (int h = 1; h <= 3; ++h) {
    for (int k = 1; k <= 4; ++k) {
      for (double tau : {1.0, 0.07}) {
        const int c = 4;
        Tensor feature = random_tensor({h, h, c}, rng, -1, 1);
        Tensor text = random_tensor({k, c}, rng, -1, 1);
        naive::Buf expect = naive::score_map(feature.data(), h, h, c, text.data(), k, tau);
        Tensor got = scale(matmul(reshape(feature, {h * h, c}), permute(text, {1, 0})), 1.0 / tau);
        worst = std::max(worst, max_abs_diff(got.data(), expect));
      }
    }
  }
  return worst;
}

}  // namespace

SuiteReport run_oracle_suite() {
  SuiteReport report;
  const double tol64 = 1e-12;
  const double tol32 = 1e-5;
  report.add("matmul_f64", oracle_matmul(), tol64);
  report.add("matmul_f32", oracle_matmul_f32(), tol32);
  report.add("conv2d_f64", oracle_conv2d(Dtype::F64), tol64);
  report.add("conv2d_f32", oracle_conv2d(Dtype::F32), tol32);
  report.add("softmax_f64", oracle_softmax(Dtype::F64), tol64);
  report.add("softmax_f32", oracle_softmax(Dtype::F32), tol32);
  report.add("layer_norm_f64", oracle_layer_norm(), tol64);
  report.add("bilinear_upsample_f64", oracle_bilinear(), tol64);
  report.add("bridge_attention_f64", oracle_bridges(), tol64);
  report.add("inner_product_bridge_f64", oracle_inner_product(), tol64);
  report.add("conv_block_f64", oracle_conv_block(), tol64);
  report.add("former_block_f64", oracle_former_block(), tol64);
  report.add("conv_former_unit_f64", oracle_unit(), tol64);
  report.add("score_map_f64", oracle_score_map(), tol64);
  return report;
}

}  // namespace convformer
