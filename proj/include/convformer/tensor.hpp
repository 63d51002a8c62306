#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace convformer {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(Dtype dt);

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

/// Dense n-dimensional array with row-major storage. Copies share the
/// underlying buffer; no operation mutates its inputs. Values are held in
/// double precision internally; tensors tagged F32 are rounded through
/// float after every producing operation, so an F32 graph behaves like a
/// single-precision computation while F64 stays exact for oracles.
class Tensor {
public:
  struct State {
    Shape shape;
    Dtype dtype = Dtype::F32;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches it
    bool requires_grad = false;
    const Graph* producer = nullptr;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt = Dtype::F32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::F32, bool requires_grad = false);
  static Tensor scalar(double value, Dtype dt = Dtype::F64);
  static Tensor from_data(std::vector<double> values, Shape shape, Dtype dt = Dtype::F32,
                          bool requires_grad = false);

  bool defined() const { return state_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  std::int64_t numel() const;
  Dtype dtype() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  const std::vector<double>& data() const;
  /// Direct write access to the buffer. Intended for parameter
  /// initialization and optimizer updates between graph lifetimes only.
  std::vector<double>& mutable_data();

  double value() const;  // scalar tensors
  double at(std::initializer_list<std::int64_t> index) const;

  bool grad_defined() const;
  const std::vector<double>& grad() const;
  void zero_grad();
  void accumulate_grad(const std::vector<double>& delta);

  Tensor detached() const;
  Tensor astype(Dtype dt) const;

  const std::shared_ptr<State>& state() const { return state_; }

private:
  explicit Tensor(std::shared_ptr<State> st) : state_(std::move(st)) {}
  std::shared_ptr<State> state_;
  friend class Graph;
  friend Tensor make_op_output(std::vector<double> values, Shape shape, Dtype dt,
                               const std::vector<Tensor>& inputs);
};

/// Reverse-mode tape. Construction activates it for the current thread;
/// differentiable operations append one node per execution, and
/// backward() replays them in exact reverse order. A tape can be consumed
/// once; a second backward() call throws.
class Graph {
public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Graph* current();
  void push_node(std::function<void()> fn);

private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// ---- operations -----------------------------------------------------------

/// Batched matrix product over the last two axes. Leading extents must be
/// identical, or one operand may be rank-2 and is then shared across the
/// other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// 2-D cross-correlation on a channels-last [H, W, Cin] map with weight
/// [kh, kw, Cin/groups, Cout]. groups=Cin=Cout gives depthwise, 1x1 with
/// groups=1 gives pointwise.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int groups);

Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis, then applies the affine pair.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// add/mul allow the smaller operand to broadcast across leading axes only
/// (its shape, after stripping leading 1s, must equal a trailing slice of
/// the larger shape).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor relu6(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor scale(const Tensor& x, double factor);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);

/// Channelwise bilinear interpolation, align-corners=false.
Tensor bilinear_upsample(const Tensor& x, int factor);

/// Zero-pads a [H, W, C] map at the bottom/right edges (plumbing for
/// patch aggregation on non-divisible extents).
Tensor pad_bottom_right(const Tensor& x, int pad_h, int pad_w);

/// Keeps the top-left [new_h, new_w] window of a [H, W, C] map; inverse
/// of pad_bottom_right.
Tensor crop_top_left(const Tensor& x, std::int64_t new_h, std::int64_t new_w);

/// Mean negative log-softmax over rows whose label differs from
/// ignore_index. An all-ignored batch yields 0 with zero gradient.
Tensor cross_entropy(const Tensor& logits, const Tensor& labels, int ignore_index);

Tensor sum(const Tensor& x);

bool all_finite(const Tensor& x);

}  // namespace convformer
