#include "convformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace convformer {

namespace {

thread_local std::vector<Graph*> g_graph_stack;

void round_through_f32(std::vector<double>& values) {
  for (double& v : values) {
    v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    fail(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
         dtype_name(b.dtype()) + ")");
  }
}

}  // namespace

const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "float32" : "float64"; }

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 1) fail("shape extent must be >= 1, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
  auto st = std::make_shared<State>();
  st->dtype = dt;
  st->data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  st->shape = std::move(shape);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt, bool requires_grad) {
  auto st = std::make_shared<State>();
  st->dtype = dt;
  if (dt == Dtype::F32) value = static_cast<double>(static_cast<float>(value));
  st->data.assign(static_cast<std::size_t>(numel_of(shape)), value);
  st->shape = std::move(shape);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({1}, value, dt, false); }

Tensor Tensor::from_data(std::vector<double> values, Shape shape, Dtype dt, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    fail("from_data: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto st = std::make_shared<State>();
  st->dtype = dt;
  if (dt == Dtype::F32) round_through_f32(values);
  st->data = std::move(values);
  st->shape = std::move(shape);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

const Shape& Tensor::shape() const { return state_->shape; }

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) fail("dim: axis out of range");
  return state_->shape[axis];
}

int Tensor::rank() const { return static_cast<int>(state_->shape.size()); }

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(state_->data.size()); }

Dtype Tensor::dtype() const { return state_->dtype; }

bool Tensor::requires_grad() const { return state_ && state_->requires_grad; }

void Tensor::set_requires_grad(bool value) { state_->requires_grad = value; }

const std::vector<double>& Tensor::data() const { return state_->data; }

std::vector<double>& Tensor::mutable_data() { return state_->data; }

double Tensor::value() const {
  if (numel() != 1) fail("value(): tensor has " + std::to_string(numel()) + " elements");
  return state_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) fail("at(): index rank mismatch");
  const auto strides = row_major_strides(state_->shape);
  std::int64_t flat = 0;
  int i = 0;
  for (std::int64_t v : index) {
    if (v < 0 || v >= state_->shape[i]) fail("at(): index out of bounds");
    flat += v * strides[i++];
  }
  return state_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::grad_defined() const { return state_ && !state_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!grad_defined()) fail("grad(): no gradient populated");
  return state_->grad;
}

void Tensor::zero_grad() {
  if (state_) state_->grad.clear();
}

void Tensor::accumulate_grad(const std::vector<double>& delta) {
  if (delta.size() != state_->data.size()) fail("accumulate_grad: size mismatch");
  if (state_->grad.empty()) state_->grad.assign(state_->data.size(), 0.0);
  for (std::size_t i = 0; i < delta.size(); ++i) state_->grad[i] += delta[i];
}

Tensor Tensor::detached() const {
  auto st = std::make_shared<State>();
  st->shape = state_->shape;
  st->dtype = state_->dtype;
  st->data = state_->data;
  return Tensor(std::move(st));
}

Tensor Tensor::astype(Dtype dt) const {
  auto st = std::make_shared<State>();
  st->shape = state_->shape;
  st->dtype = dt;
  st->data = state_->data;
  if (dt == Dtype::F32) round_through_f32(st->data);
  return Tensor(std::move(st));
}

// ---- Graph -----------------------------------------------------------------

Graph::Graph() { g_graph_stack.push_back(this); }

Graph::~Graph() {
  if (!g_graph_stack.empty() && g_graph_stack.back() == this) {
    g_graph_stack.pop_back();
  } else {
    // Destruction out of stack order; remove wherever it sits.
    auto it = std::find(g_graph_stack.begin(), g_graph_stack.end(), this);
    if (it != g_graph_stack.end()) g_graph_stack.erase(it);
  }
}

Graph* Graph::current() { return g_graph_stack.empty() ? nullptr : g_graph_stack.back(); }

void Graph::push_node(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  }
  if (loss.state()->producer != this) {
    throw std::runtime_error("backward: loss was not produced by this graph (stale graph)");
  }
  if (consumed_) {
    throw std::runtime_error("backward: graph already consumed; rebuild the graph before "
                             "calling backward again");
  }
  consumed_ = true;
  loss.state()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---- op plumbing -----------------------------------------------------------

Tensor make_op_output(std::vector<double> values, Shape shape, Dtype dt,
                      const std::vector<Tensor>& inputs) {
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (dt == Dtype::F32) round_through_f32(values);
  auto st = std::make_shared<Tensor::State>();
  st->shape = std::move(shape);
  st->dtype = dt;
  st->data = std::move(values);
  Graph* g = Graph::current();
  if (g && needs_grad) {
    st->requires_grad = true;
    st->producer = g;
  }
  return Tensor(std::move(st));
}

namespace {

bool should_record(const Tensor& out) { return out.state()->producer != nullptr; }

// Grad of `out` if populated, else nullptr (output did not influence the loss).
const std::vector<double>* out_grad(const Tensor& out) {
  return out.state()->grad.empty() ? nullptr : &out.state()->grad;
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

namespace {

struct MatmulDims {
  std::int64_t batch, m, k, n;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) fail("matmul: operands must have rank >= 2");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  MatmulDims d{};
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  if (sb[sb.size() - 2] != d.k) {
    fail("matmul: inner extents disagree, " + shape_str(sa) + " x " + shape_str(sb));
  }
  d.n = sb[sb.size() - 1];
  Shape lead_a(sa.begin(), sa.end() - 2);
  Shape lead_b(sb.begin(), sb.end() - 2);
  if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b) {
    fail("matmul: batch extents disagree, " + shape_str(sa) + " x " + shape_str(sb));
  }
  const Shape& lead = lead_a.empty() ? lead_b : lead_a;
  d.batch = lead.empty() ? 1 : numel_of(lead);
  d.a_batched = !lead_a.empty();
  d.b_batched = !lead_b.empty();
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "matmul");
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape = d.a_batched ? Shape(a.shape().begin(), a.shape().end() - 2)
                                : Shape(b.shape().begin(), b.shape().end() - 2);
  out_shape.push_back(d.m);
  out_shape.push_back(d.n);

  const auto& av = a.data();
  const auto& bv = b.data();
  const std::int64_t a_bs = d.a_batched ? d.m * d.k : 0;
  const std::int64_t b_bs = d.b_batched ? d.k * d.n : 0;
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.m * d.n), 0.0);
  for (std::int64_t t = 0; t < d.batch; ++t) {
    const double* ap = av.data() + t * a_bs;
    const double* bp = bv.data() + t * b_bs;
    double* op = out.data() + t * d.m * d.n;
    for (std::int64_t i = 0; i < d.m; ++i) {
      for (std::int64_t kk = 0; kk < d.k; ++kk) {
        const double aik = ap[i * d.k + kk];
        if (aik == 0.0) continue;
        const double* brow = bp + kk * d.n;
        double* orow = op + i * d.n;
        for (std::int64_t j = 0; j < d.n; ++j) orow[j] += aik * brow[j];
      }
    }
  }

  Tensor result = make_op_output(std::move(out), std::move(out_shape), a.dtype(), {a, b});
  if (should_record(result)) {
    Graph::current()->push_node([a, b, result, d]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp) return;
      const auto& g = *gp;
      const auto& av = a.data();
      const auto& bv = b.data();
      const std::int64_t a_bs = d.a_batched ? d.m * d.k : 0;
      const std::int64_t b_bs = d.b_batched ? d.k * d.n : 0;
      if (a.requires_grad()) {
        std::vector<double> da(av.size(), 0.0);
        for (std::int64_t t = 0; t < d.batch; ++t) {
          const double* gpp = g.data() + t * d.m * d.n;
          const double* bp = bv.data() + t * b_bs;
          double* dap = da.data() + t * a_bs;
          for (std::int64_t i = 0; i < d.m; ++i) {
            for (std::int64_t j = 0; j < d.n; ++j) {
              const double gij = gpp[i * d.n + j];
              if (gij == 0.0) continue;
              const double* brow = bp + j;
              double* darow = dap + i * d.k;
              for (std::int64_t kk = 0; kk < d.k; ++kk) darow[kk] += gij * brow[kk * d.n];
            }
          }
        }
        const_cast<Tensor&>(a).accumulate_grad(da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(bv.size(), 0.0);
        for (std::int64_t t = 0; t < d.batch; ++t) {
          const double* gpp = g.data() + t * d.m * d.n;
          const double* ap = av.data() + t * a_bs;
          double* dbp = db.data() + t * b_bs;
          for (std::int64_t kk = 0; kk < d.k; ++kk) {
            for (std::int64_t i = 0; i < d.m; ++i) {
              const double aik = ap[i * d.k + kk];
              if (aik == 0.0) continue;
              const double* grow = gpp + i * d.n;
              double* dbrow = dbp + kk * d.n;
              for (std::int64_t j = 0; j < d.n; ++j) dbrow[j] += aik * grow[j];
            }
          }
        }
        const_cast<Tensor&>(b).accumulate_grad(db);
      }
    });
  }
  return result;
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t h, w, cin, kh, kw, cinpg, cout, coutpg, ho, wo;
  int stride, padding, groups;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int padding,
                   int groups) {
  if (input.rank() != 3) fail("conv2d: input must be [H, W, Cin], got " + shape_str(input.shape()));
  if (weight.rank() != 4) {
    fail("conv2d: weight must be [kh, kw, Cin/groups, Cout], got " + shape_str(weight.shape()));
  }
  if (stride < 1) fail("conv2d: stride must be >= 1");
  if (padding < 0) fail("conv2d: padding must be >= 0");
  if (groups < 1) fail("conv2d: groups must be >= 1");
  ConvDims d{};
  d.h = input.dim(0);
  d.w = input.dim(1);
  d.cin = input.dim(2);
  d.kh = weight.dim(0);
  d.kw = weight.dim(1);
  d.cinpg = weight.dim(2);
  d.cout = weight.dim(3);
  d.stride = stride;
  d.padding = padding;
  d.groups = groups;
  if (d.cin % groups != 0) {
    fail("conv2d: Cin=" + std::to_string(d.cin) + " not divisible by groups=" +
         std::to_string(groups));
  }
  if (d.cout % groups != 0) {
    fail("conv2d: Cout=" + std::to_string(d.cout) + " not divisible by groups=" +
         std::to_string(groups));
  }
  if (d.cinpg != d.cin / groups) {
    fail("conv2d: weight channel extent " + std::to_string(d.cinpg) + " != Cin/groups = " +
         std::to_string(d.cin / groups));
  }
  d.coutpg = d.cout / groups;
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw || d.ho < 1 || d.wo < 1) {
    fail("conv2d: output extent < 1 for input " + shape_str(input.shape()) + ", kernel " +
         shape_str(weight.shape()) + ", stride " + std::to_string(stride) + ", padding " +
         std::to_string(padding));
  }
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int groups) {
  check_same_dtype(input, weight, "conv2d");
  const ConvDims d = conv_dims(input, weight, stride, padding, groups);
  if (bias) {
    check_same_dtype(input, *bias, "conv2d");
    if (bias->rank() != 1 || bias->dim(0) != d.cout) {
      fail("conv2d: bias must be [Cout], got " + shape_str(bias->shape()));
    }
  }

  const auto& in = input.data();
  const auto& wv = weight.data();
  std::vector<double> out(static_cast<std::size_t>(d.ho * d.wo * d.cout), 0.0);
  if (bias) {
    const auto& bv = bias->data();
    for (std::int64_t p = 0; p < d.ho * d.wo; ++p) {
      for (std::int64_t co = 0; co < d.cout; ++co) out[p * d.cout + co] = bv[co];
    }
  }
  for (std::int64_t ho = 0; ho < d.ho; ++ho) {
    for (std::int64_t wo = 0; wo < d.wo; ++wo) {
      double* orow = out.data() + (ho * d.wo + wo) * d.cout;
      for (std::int64_t kh = 0; kh < d.kh; ++kh) {
        const std::int64_t hi = ho * d.stride - d.padding + kh;
        if (hi < 0 || hi >= d.h) continue;
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          const std::int64_t wi = wo * d.stride - d.padding + kw;
          if (wi < 0 || wi >= d.w) continue;
          const double* irow = in.data() + (hi * d.w + wi) * d.cin;
          const double* wrow = wv.data() + (kh * d.kw + kw) * d.cinpg * d.cout;
          for (std::int64_t g = 0; g < d.groups; ++g) {
            for (std::int64_t ci = 0; ci < d.cinpg; ++ci) {
              const double xv = irow[g * d.cinpg + ci];
              if (xv == 0.0) continue;
              const double* wp = wrow + ci * d.cout + g * d.coutpg;
              double* op = orow + g * d.coutpg;
              for (std::int64_t co = 0; co < d.coutpg; ++co) op[co] += xv * wp[co];
            }
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Tensor result =
      make_op_output(std::move(out), {d.ho, d.wo, d.cout}, input.dtype(), inputs);
  if (should_record(result)) {
    std::optional<Tensor> b = bias;
    Graph::current()->push_node([input, weight, b, result, d]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp) return;
      const auto& g = *gp;
      const auto& in = input.data();
      const auto& wv = weight.data();
      std::vector<double> din, dw;
      if (input.requires_grad()) din.assign(in.size(), 0.0);
      if (weight.requires_grad()) dw.assign(wv.size(), 0.0);
      if (!din.empty() || !dw.empty()) {
        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
          for (std::int64_t wo = 0; wo < d.wo; ++wo) {
            const double* grow = g.data() + (ho * d.wo + wo) * d.cout;
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t hi = ho * d.stride - d.padding + kh;
              if (hi < 0 || hi >= d.h) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t wi = wo * d.stride - d.padding + kw;
                if (wi < 0 || wi >= d.w) continue;
                const std::int64_t ioff = (hi * d.w + wi) * d.cin;
                const std::int64_t woff = (kh * d.kw + kw) * d.cinpg * d.cout;
                for (std::int64_t gi = 0; gi < d.groups; ++gi) {
                  for (std::int64_t ci = 0; ci < d.cinpg; ++ci) {
                    const std::int64_t iidx = ioff + gi * d.cinpg + ci;
                    const double* wp = wv.data() + woff + ci * d.cout + gi * d.coutpg;
                    const double* gitem = grow + gi * d.coutpg;
                    if (!din.empty()) {
                      double acc = 0.0;
                      for (std::int64_t co = 0; co < d.coutpg; ++co) acc += gitem[co] * wp[co];
                      din[iidx] += acc;
                    }
                    if (!dw.empty()) {
                      const double xv = in[iidx];
                      if (xv != 0.0) {
                        double* dwp = dw.data() + woff + ci * d.cout + gi * d.coutpg;
                        for (std::int64_t co = 0; co < d.coutpg; ++co) dwp[co] += xv * gitem[co];
                      }
                    }
                  }
                }
              }
            }
          }
        }
        if (!din.empty()) const_cast<Tensor&>(input).accumulate_grad(din);
        if (!dw.empty()) const_cast<Tensor&>(weight).accumulate_grad(dw);
      }
      if (b && b->requires_grad()) {
        std::vector<double> db(static_cast<std::size_t>(d.cout), 0.0);
        for (std::int64_t p = 0; p < d.ho * d.wo; ++p) {
          const double* grow = g.data() + p * d.cout;
          for (std::int64_t co = 0; co < d.cout; ++co) db[co] += grow[co];
        }
        const_cast<Tensor&>(*b).accumulate_grad(db);
      }
    });
  }
  return result;
}

// ---- softmax ---------------------------------------------------------------

namespace {

void axis_split(const Shape& shape, int axis, std::int64_t& outer, std::int64_t& n,
                std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

int normalize_axis(const Tensor& x, int axis, const char* op) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail(std::string(op) + ": invalid axis");
  return axis;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(x, axis, "softmax");
  std::int64_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
      double denom = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (std::int64_t i = 0; i < n; ++i) out[base + i * inner] *= inv;
    }
  }
  Tensor result = make_op_output(std::move(out), x.shape(), x.dtype(), {x});
  if (should_record(result)) {
    const std::int64_t co = outer, cn = n, ci = inner;
    Graph::current()->push_node([x, result, co, cn, ci]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const auto& g = *gp;
      const auto& p = result.data();
      std::vector<double> dx(g.size());
      for (std::int64_t o = 0; o < co; ++o) {
        for (std::int64_t in = 0; in < ci; ++in) {
          const std::int64_t base = o * cn * ci + in;
          double dot = 0.0;
          for (std::int64_t i = 0; i < cn; ++i) dot += g[base + i * ci] * p[base + i * ci];
          for (std::int64_t i = 0; i < cn; ++i) {
            const std::int64_t idx = base + i * ci;
            dx[idx] = p[idx] * (g[idx] - dot);
          }
        }
      }
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

// ---- layer_norm ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_same_dtype(x, gamma, "layer_norm");
  check_same_dtype(x, beta, "layer_norm");
  if (eps <= 0.0) fail("layer_norm: eps must be > 0");
  if (x.rank() < 1) fail("layer_norm: rank must be >= 1");
  const std::int64_t c = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    fail("layer_norm: gamma/beta must be [C] with C = " + std::to_string(c));
  }
  const std::int64_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * c;
    double mean = 0.0;
    for (std::int64_t i = 0; i < c; ++i) mean += xr[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t i = 0; i < c; ++i) {
      const double dshift = xr[i] - mean;
      var += dshift * dshift;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (std::int64_t i = 0; i < c; ++i) {
      const double xh = (xr[i] - mean) * inv;
      xhat[r * c + i] = xh;
      out[r * c + i] = xh * gv[i] + bv[i];
    }
  }
  Tensor result = make_op_output(std::move(out), x.shape(), x.dtype(), {x, gamma, beta});
  if (should_record(result)) {
    Graph::current()->push_node(
        [x, gamma, beta, result, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), c]() {
          const std::vector<double>* gp = out_grad(result);
          if (!gp) return;
          const auto& g = *gp;
          const std::int64_t rows = static_cast<std::int64_t>(g.size()) / c;
          const auto& gv = gamma.data();
          if (gamma.requires_grad() || beta.requires_grad()) {
            std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0);
            std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0);
            for (std::int64_t r = 0; r < rows; ++r) {
              for (std::int64_t i = 0; i < c; ++i) {
                dgamma[i] += g[r * c + i] * xhat[r * c + i];
                dbeta[i] += g[r * c + i];
              }
            }
            if (gamma.requires_grad()) const_cast<Tensor&>(gamma).accumulate_grad(dgamma);
            if (beta.requires_grad()) const_cast<Tensor&>(beta).accumulate_grad(dbeta);
          }
          if (x.requires_grad()) {
            std::vector<double> dx(g.size());
            for (std::int64_t r = 0; r < rows; ++r) {
              double mean_gy = 0.0, mean_gyxh = 0.0;
              for (std::int64_t i = 0; i < c; ++i) {
                const double gy = g[r * c + i] * gv[i];
                mean_gy += gy;
                mean_gyxh += gy * xhat[r * c + i];
              }
              mean_gy /= static_cast<double>(c);
              mean_gyxh /= static_cast<double>(c);
              for (std::int64_t i = 0; i < c; ++i) {
                const double gy = g[r * c + i] * gv[i];
                dx[r * c + i] = inv_sigma[r] * (gy - mean_gy - xhat[r * c + i] * mean_gyxh);
              }
            }
            const_cast<Tensor&>(x).accumulate_grad(dx);
          }
        });
  }
  return result;
}

// ---- elementwise add / mul with leading broadcast ---------------------------

namespace {

// Checks whether `small` can broadcast across the leading axes of `big`:
// after stripping leading extents of 1, small's shape must equal the trailing
// slice of big's shape. Returns the repeat count (big.numel / small.numel).
bool leading_broadcast_ok(const Shape& big, const Shape& small, std::int64_t& repeats) {
  std::size_t start = 0;
  while (start < small.size() && small[start] == 1) ++start;
  const std::size_t tail = small.size() - start;
  if (tail > big.size()) return false;
  for (std::size_t i = 0; i < tail; ++i) {
    if (small[start + i] != big[big.size() - tail + i]) return false;
  }
  std::int64_t rep = 1;
  for (std::size_t i = 0; i + tail < big.size(); ++i) rep *= big[i];
  repeats = rep;
  return true;
}

enum class BinTag { Add, Mul };

Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinTag tag, const char* name) {
  check_same_dtype(a, b, name);
  const bool a_big = a.numel() >= b.numel();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  std::int64_t repeats = 1;
  if (!leading_broadcast_ok(big.shape(), small.shape(), repeats)) {
    fail(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()) + " are not broadcast-compatible (leading-1 extents only)");
  }
  const auto& bigv = big.data();
  const auto& smallv = small.data();
  const std::int64_t block = small.numel();
  std::vector<double> out(bigv.size());
  if (tag == BinTag::Add) {
    for (std::int64_t r = 0; r < repeats; ++r) {
      const double* bp = bigv.data() + r * block;
      double* op = out.data() + r * block;
      for (std::int64_t i = 0; i < block; ++i) op[i] = bp[i] + smallv[i];
    }
  } else {
    for (std::int64_t r = 0; r < repeats; ++r) {
      const double* bp = bigv.data() + r * block;
      double* op = out.data() + r * block;
      for (std::int64_t i = 0; i < block; ++i) op[i] = bp[i] * smallv[i];
    }
  }
  Tensor result = make_op_output(std::move(out), big.shape(), a.dtype(), {a, b});
  if (should_record(result)) {
    Graph::current()->push_node([big, small, result, repeats, block, tag]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp) return;
      const auto& g = *gp;
      if (big.requires_grad()) {
        if (tag == BinTag::Add) {
          const_cast<Tensor&>(big).accumulate_grad(g);
        } else {
          std::vector<double> dbig(g.size());
          const auto& sv = small.data();
          for (std::int64_t r = 0; r < repeats; ++r) {
            for (std::int64_t i = 0; i < block; ++i) {
              dbig[r * block + i] = g[r * block + i] * sv[i];
            }
          }
          const_cast<Tensor&>(big).accumulate_grad(dbig);
        }
      }
      if (small.requires_grad()) {
        std::vector<double> dsmall(static_cast<std::size_t>(block), 0.0);
        if (tag == BinTag::Add) {
          for (std::int64_t r = 0; r < repeats; ++r) {
            for (std::int64_t i = 0; i < block; ++i) dsmall[i] += g[r * block + i];
          }
        } else {
          const auto& bv = big.data();
          for (std::int64_t r = 0; r < repeats; ++r) {
            for (std::int64_t i = 0; i < block; ++i) {
              dsmall[i] += g[r * block + i] * bv[r * block + i];
            }
          }
        }
        const_cast<Tensor&>(small).accumulate_grad(dsmall);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinTag::Add, "add"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinTag::Mul, "mul"); }

// ---- unary elementwise -----------------------------------------------------

namespace {

Tensor unary_op(const Tensor& x, const std::function<double(double)>& f,
                const std::function<double(double)>& dfdx) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor result = make_op_output(std::move(out), x.shape(), x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result, dfdx]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const auto& g = *gp;
      const auto& xv = x.data();
      std::vector<double> dx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * dfdx(xv[i]);
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor relu6(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::min(std::max(v, 0.0), 6.0); },
      [](double v) { return (v > 0.0 && v < 6.0) ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        const double u = kGeluC * (v + kGeluA * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
      },
      [](double v) {
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        return 0.5 * (1.0 + t) + 0.5 * v * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

// ---- concat ----------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: needs at least one tensor");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("concat: invalid axis");
  Shape out_shape = parts[0].shape();
  std::int64_t axis_total = 0;
  for (const Tensor& t : parts) {
    check_same_dtype(parts[0], t, "concat");
    if (t.rank() != r) fail("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.dim(i) != out_shape[i]) {
        fail("concat: off-axis extent mismatch between " + shape_str(parts[0].shape()) +
             " and " + shape_str(t.shape()));
      }
    }
    axis_total += t.dim(axis);
  }
  out_shape[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];

  std::vector<double> out(static_cast<std::size_t>(numel_of(out_shape)));
  std::int64_t offset = 0;
  for (const Tensor& t : parts) {
    const std::int64_t block = t.dim(axis) * inner;
    const auto& tv = t.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(tv.begin() + o * block, tv.begin() + (o + 1) * block,
                out.begin() + o * axis_total * inner + offset * inner);
    }
    offset += t.dim(axis);
  }
  Tensor result = make_op_output(std::move(out), out_shape, parts[0].dtype(), parts);
  if (should_record(result)) {
    Graph::current()->push_node([parts, result, outer, inner, axis_total, axis]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp) return;
      const auto& g = *gp;
      std::int64_t offset = 0;
      for (const Tensor& t : parts) {
        const std::int64_t extent = t.dim(axis);
        if (t.requires_grad()) {
          std::vector<double> dt(static_cast<std::size_t>(t.numel()));
          const std::int64_t block = extent * inner;
          for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(g.begin() + o * axis_total * inner + offset * inner,
                      g.begin() + o * axis_total * inner + offset * inner + block,
                      dt.begin() + o * block);
          }
          const_cast<Tensor&>(t).accumulate_grad(dt);
        }
        offset += extent;
      }
    });
  }
  return result;
}

// ---- reshape / permute -----------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel()) {
    fail("reshape: cannot reshape " + shape_str(x.shape()) + " (" + std::to_string(x.numel()) +
         " elements) to " + shape_str(new_shape));
  }
  Tensor result = make_op_output(x.data(), std::move(new_shape), x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const_cast<Tensor&>(x).accumulate_grad(*gp);
    });
  }
  return result;
}

namespace {

std::vector<double> apply_permutation(const std::vector<double>& src, const Shape& in_shape,
                                      const std::vector<int>& axes, Shape& out_shape) {
  const int r = static_cast<int>(in_shape.size());
  out_shape.resize(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = row_major_strides(in_shape);
  const auto out_strides = row_major_strides(out_shape);
  std::vector<double> out(src.size());
  std::vector<std::int64_t> idx(r, 0);
  const std::int64_t n = static_cast<std::int64_t>(src.size());
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t rem = flat;
    std::int64_t src_flat = 0;
    for (int i = 0; i < r; ++i) {
      idx[i] = rem / out_strides[i];
      rem %= out_strides[i];
      src_flat += idx[i] * in_strides[axes[i]];
    }
    out[flat] = src[src_flat];
  }
  return out;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) fail("permute: axes size must equal rank");
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[a]) fail("permute: axes must be a permutation of 0..rank-1");
    seen[a] = true;
  }
  Shape out_shape;
  std::vector<double> out = apply_permutation(x.data(), x.shape(), axes, out_shape);
  Tensor result = make_op_output(std::move(out), out_shape, x.dtype(), {x});
  if (should_record(result)) {
    std::vector<int> inverse(r);
    for (int i = 0; i < r; ++i) inverse[axes[i]] = i;
    Graph::current()->push_node([x, result, inverse]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      Shape ignored;
      std::vector<double> dx = apply_permutation(*gp, result.shape(), inverse, ignored);
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

// ---- bilinear upsample -----------------------------------------------------

namespace {

struct Tap {
  std::int64_t lo, hi;
  double w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

Tap bilinear_tap(std::int64_t out_idx, int factor, std::int64_t in_extent) {
  const double src = (static_cast<double>(out_idx) + 0.5) / factor - 0.5;
  Tap t{};
  if (src <= 0.0) {
    t.lo = t.hi = 0;
    t.w_hi = 0.0;
  } else if (src >= static_cast<double>(in_extent - 1)) {
    t.lo = t.hi = in_extent - 1;
    t.w_hi = 0.0;
  } else {
    t.lo = static_cast<std::int64_t>(std::floor(src));
    t.hi = t.lo + 1;
    t.w_hi = src - static_cast<double>(t.lo);
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (x.rank() != 3) fail("bilinear_upsample: input must be [H, W, C]");
  if (factor < 1) fail("bilinear_upsample: factor must be >= 1");
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::int64_t oh = h * factor, ow = w * factor;
  const auto& xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(oh * ow * c));
  std::vector<Tap> ytap(oh), xtap(ow);
  for (std::int64_t i = 0; i < oh; ++i) ytap[i] = bilinear_tap(i, factor, h);
  for (std::int64_t j = 0; j < ow; ++j) xtap[j] = bilinear_tap(j, factor, w);
  for (std::int64_t i = 0; i < oh; ++i) {
    const Tap& ty = ytap[i];
    for (std::int64_t j = 0; j < ow; ++j) {
      const Tap& tx = xtap[j];
      const double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
      const double w01 = (1.0 - ty.w_hi) * tx.w_hi;
      const double w10 = ty.w_hi * (1.0 - tx.w_hi);
      const double w11 = ty.w_hi * tx.w_hi;
      const double* p00 = xv.data() + (ty.lo * w + tx.lo) * c;
      const double* p01 = xv.data() + (ty.lo * w + tx.hi) * c;
      const double* p10 = xv.data() + (ty.hi * w + tx.lo) * c;
      const double* p11 = xv.data() + (ty.hi * w + tx.hi) * c;
      double* op = out.data() + (i * ow + j) * c;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        op[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
    }
  }
  Tensor result = make_op_output(std::move(out), {oh, ow, c}, x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result, ytap = std::move(ytap), xtap = std::move(xtap), h, w,
                                 c, oh, ow]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const auto& g = *gp;
      std::vector<double> dx(static_cast<std::size_t>(h * w * c), 0.0);
      for (std::int64_t i = 0; i < oh; ++i) {
        const Tap& ty = ytap[i];
        for (std::int64_t j = 0; j < ow; ++j) {
          const Tap& tx = xtap[j];
          const double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
          const double w01 = (1.0 - ty.w_hi) * tx.w_hi;
          const double w10 = ty.w_hi * (1.0 - tx.w_hi);
          const double w11 = ty.w_hi * tx.w_hi;
          const double* grow = g.data() + (i * ow + j) * c;
          double* d00 = dx.data() + (ty.lo * w + tx.lo) * c;
          double* d01 = dx.data() + (ty.lo * w + tx.hi) * c;
          double* d10 = dx.data() + (ty.hi * w + tx.lo) * c;
          double* d11 = dx.data() + (ty.hi * w + tx.hi) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            d00[ch] += w00 * grow[ch];
            d01[ch] += w01 * grow[ch];
            d10[ch] += w10 * grow[ch];
            d11[ch] += w11 * grow[ch];
          }
        }
      }
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

Tensor pad_bottom_right(const Tensor& x, int pad_h, int pad_w) {
  if (x.rank() != 3) fail("pad_bottom_right: input must be [H, W, C]");
  if (pad_h < 0 || pad_w < 0) fail("pad_bottom_right: padding must be >= 0");
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::int64_t oh = h + pad_h, ow = w + pad_w;
  const auto& xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(oh * ow * c), 0.0);
  for (std::int64_t i = 0; i < h; ++i) {
    std::copy(xv.begin() + i * w * c, xv.begin() + (i + 1) * w * c,
              out.begin() + i * ow * c);
  }
  Tensor result = make_op_output(std::move(out), {oh, ow, c}, x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result, h, w, c, ow]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const auto& g = *gp;
      std::vector<double> dx(static_cast<std::size_t>(h * w * c));
      for (std::int64_t i = 0; i < h; ++i) {
        std::copy(g.begin() + i * ow * c, g.begin() + i * ow * c + w * c,
                  dx.begin() + i * w * c);
      }
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

Tensor crop_top_left(const Tensor& x, std::int64_t new_h, std::int64_t new_w) {
  if (x.rank() != 3) fail("crop_top_left: input must be [H, W, C]");
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (new_h < 1 || new_h > h || new_w < 1 || new_w > w) {
    fail("crop_top_left: window " + std::to_string(new_h) + "x" + std::to_string(new_w) +
         " invalid for " + shape_str(x.shape()));
  }
  const auto& xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(new_h * new_w * c));
  for (std::int64_t i = 0; i < new_h; ++i) {
    std::copy(xv.begin() + i * w * c, xv.begin() + i * w * c + new_w * c,
              out.begin() + i * new_w * c);
  }
  Tensor result = make_op_output(std::move(out), {new_h, new_w, c}, x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result, h, w, c, new_h, new_w]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      const auto& g = *gp;
      std::vector<double> dx(static_cast<std::size_t>(h * w * c), 0.0);
      for (std::int64_t i = 0; i < new_h; ++i) {
        std::copy(g.begin() + i * new_w * c, g.begin() + (i + 1) * new_w * c,
                  dx.begin() + i * w * c);
      }
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

// ---- cross entropy ---------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const Tensor& labels, int ignore_index) {
  if (logits.rank() != 2) fail("cross_entropy: logits must be [N, K]");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (labels.rank() != 1 || labels.dim(0) != n) {
    fail("cross_entropy: labels must be [N] with N = " + std::to_string(n));
  }
  const auto& lv = logits.data();
  const auto& yv = labels.data();
  std::vector<std::int64_t> targets(static_cast<std::size_t>(n));
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t y = static_cast<std::int64_t>(yv[i]);
    if (y == ignore_index) {
      targets[i] = -1;
      continue;
    }
    if (y < 0 || y >= k) {
      fail("cross_entropy: label " + std::to_string(y) + " out of range [0, " + std::to_string(k) +
           ") at row " + std::to_string(i));
    }
    targets[i] = y;
    ++valid;
  }
  double loss = 0.0;
  if (valid > 0) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (targets[i] < 0) continue;
      const double* row = lv.data() + i * k;
      double mx = row[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
      loss += -(row[targets[i]] - mx - std::log(denom));
    }
    loss /= static_cast<double>(valid);
  }
  if (!std::isfinite(loss)) throw std::runtime_error("cross_entropy: non-finite loss");
  Tensor result = make_op_output({loss}, {1}, logits.dtype(), {logits});
  if (should_record(result)) {
    Graph::current()->push_node([logits, result, targets = std::move(targets), valid, n, k]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !logits.requires_grad()) return;
      const double gout = (*gp)[0];
      std::vector<double> dl(static_cast<std::size_t>(n * k), 0.0);
      if (valid > 0) {
        const auto& lv = logits.data();
        const double invn = 1.0 / static_cast<double>(valid);
        for (std::int64_t i = 0; i < n; ++i) {
          if (targets[i] < 0) continue;
          const double* row = lv.data() + i * k;
          double mx = row[0];
          for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
          double denom = 0.0;
          for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
          for (std::int64_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - mx) / denom;
            const double y = (j == targets[i]) ? 1.0 : 0.0;
            dl[i * k + j] = (p - y) * invn * gout;
          }
        }
      }
      const_cast<Tensor&>(logits).accumulate_grad(dl);
    });
  }
  return result;
}

// ---- sum -------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto& xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor result = make_op_output({s}, {1}, x.dtype(), {x});
  if (should_record(result)) {
    Graph::current()->push_node([x, result]() {
      const std::vector<double>* gp = out_grad(result);
      if (!gp || !x.requires_grad()) return;
      std::vector<double> dx(static_cast<std::size_t>(x.numel()), (*gp)[0]);
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return result;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace convformer
