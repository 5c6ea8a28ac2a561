#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ride/error.hpp"

namespace ride {

using Shape = std::vector<std::int64_t>;

enum class DType { f32, f64 };

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `f.template operator()<T>()` with T matching the runtime dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

namespace detail {

struct Node {
  Shape shape;
  DType dtype = DType::f32;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<float> g32;
  std::vector<double> g64;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's gradient and accumulates into the parents' gradients.
  std::function<void(Node&)> backward_fn;

  template <typename T>
  std::vector<T>& buf() {
    if constexpr (std::is_same_v<T, float>) return f32;
    else return f64;
  }
  template <typename T>
  std::vector<T>& gbuf() {
    if constexpr (std::is_same_v<T, float>) return g32;
    else return g64;
  }
  bool has_grad() const { return !g32.empty() || !g64.empty(); }
  /// Gradient buffer, zero-filled on first access.
  template <typename T>
  std::span<T> grad_span() {
    auto& g = gbuf<T>();
    if (g.empty()) g.assign(f32.size() + f64.size(), T(0));
    return g;
  }
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Copies share the underlying node (handle semantics); use clone() for a
/// deep copy. The computation graph formed by operations on tensors with
/// requires_grad set is confined to the thread that built it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::f32, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f32,
                     bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<float> data, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::f32);

  /// Builds an operation result. When gradient mode is on and any parent
  /// requires a gradient, `backward` is recorded on the result.
  template <typename T>
  static Tensor make_result(const Shape& shape, std::vector<T> data,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::int64_t dim(int axis) const;
  [[nodiscard]] int rank() const { return static_cast<int>(shape().size()); }
  [[nodiscard]] std::int64_t numel() const;
  [[nodiscard]] DType dtype() const;

  template <typename T>
  [[nodiscard]] std::span<T> data() {
    check_dtype<T>();
    return node_->buf<T>();
  }
  template <typename T>
  [[nodiscard]] std::span<const T> data() const {
    check_dtype<T>();
    return node_->buf<T>();
  }
  /// Element values converted to double.
  [[nodiscard]] std::vector<double> to_vector() const;
  /// Value of a single-element tensor.
  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::int64_t flat_index) const;

  [[nodiscard]] bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  /// Gradient as a plain tensor; zeros if none was accumulated.
  [[nodiscard]] Tensor grad() const;
  [[nodiscard]] bool has_grad() const;
  void zero_grad();

  [[nodiscard]] Tensor detach() const;
  [[nodiscard]] Tensor clone() const;
  [[nodiscard]] Tensor to(DType dtype) const;
  [[nodiscard]] bool is_leaf() const;

  [[nodiscard]] detail::Node& node() const { return *node_; }
  [[nodiscard]] const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  template <typename T>
  void check_dtype() const {
    if (dtype_of<T>() != dtype()) throw ShapeError("tensor dtype mismatch in data access");
  }

  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
/// calls until zeroed; intermediate gradients are transient.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. All are differentiable unless stated otherwise.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
/// max(a, floor) elementwise; gradient passes where a > floor.
Tensor clamp_min(const Tensor& a, double floor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
/// Maximum along an axis (axis removed); ties resolve to the smallest index.
Tensor max(const Tensor& a, int axis);
Tensor softmax(const Tensor& a, int axis);
Tensor logsumexp(const Tensor& a, int axis);
/// Unit L2 norm along `axis`. Vectors with zero norm map to zero and are
/// counted in `zero_vectors` when given.
Tensor l2_normalize(const Tensor& a, int axis, std::int64_t* zero_vectors = nullptr);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
/// Elements [start, start + length) along `axis`.
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor index_select(const Tensor& a, int axis, std::span<const std::int64_t> indices);
/// Elements at flat row-major positions; result is 1-D.
Tensor gather_flat(const Tensor& a, std::span<const std::int64_t> indices);

/// Per-channel normalization over every axis except 1. Running statistics
/// are updated in place in training mode and used in inference mode.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

/// Valid cross-correlation, no bias: [B,Cin,H,W] x [Cout,Cin,k,k] -> [B,Cout,H-k+1,W-k+1].
Tensor conv2d_valid(const Tensor& input, const Tensor& kernel);

// ---------------------------------------------------------------------------

template <typename T>
Tensor Tensor::make_result(const Shape& shape, std::vector<T> data, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  if (static_cast<std::int64_t>(data.size()) != ride::numel(shape))
    throw ShapeError("result data size does not match shape " + to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->dtype = dtype_of<T>();
  node->buf<T>() = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (auto& p : parents) node->parents.push_back(p.node_);
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace ride
