#include "ride/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ride {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(const Shape& shape, DType dtype, bool requires_grad) {
  return full(shape, 0.0, dtype, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->dtype = dtype;
  const auto n = static_cast<std::size_t>(ride::numel(shape));
  if (dtype == DType::f32) node->f32.assign(n, static_cast<float>(value));
  else node->f64.assign(n, value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != ride::numel(shape))
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->dtype = DType::f32;
  node->f32 = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != ride::numel(shape))
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->dtype = DType::f64;
  node->f64 = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range");
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return ride::numel(shape()); }

DType Tensor::dtype() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->dtype;
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " +
                                        to_string(shape()));
  return at(0);
}

double Tensor::at(std::int64_t i) const {
  if (i < 0 || i >= numel()) throw ShapeError("flat index out of range");
  return dispatch(dtype(), [&]<typename T>() { return static_cast<double>(data<T>()[i]); });
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward_fn; }

bool Tensor::has_grad() const { return node_ && node_->has_grad(); }

Tensor Tensor::grad() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto& g = node_->gbuf<T>();
    if (g.empty()) return Tensor::zeros(shape(), dtype());
    return Tensor::from_data(shape(), std::vector<T>(g.begin(), g.end()));
  });
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->g32.clear();
  node_->g64.clear();
}

Tensor Tensor::detach() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return Tensor::from_data(shape(), std::vector<T>(d.begin(), d.end()));
  });
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad() && is_leaf();
  return t;
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  if (target == DType::f64) {
    auto d = data<float>();
    return Tensor::from_data(shape(), std::vector<double>(d.begin(), d.end()));
  }
  auto d = data<double>();
  std::vector<float> out(d.size());
  std::transform(d.begin(), d.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return Tensor::from_data(shape(), std::move(out));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any requires_grad leaf");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) {
      n->g32.clear();
      n->g64.clear();
    }
  }
  dispatch(loss.dtype(), [&]<typename T>() { loss.node().grad_span<T>()[0] += T(1); });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward_fn) continue;
    if (n->has_grad()) n->backward_fn(*n);
    // Intermediate gradients are not retained.
    n->g32 = {};
    n->g64 = {};
  }
}

}  // namespace ride
