#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pcaus::nn {

using Shape = std::vector<int>;

// Tensor storage. Fixed alignment keeps vectorized reductions bitwise
// reproducible across runs.
using Buffer = std::vector<float, Eigen::aligned_allocator<float>>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation graph. `backward` reads `grad` of this node and
// accumulates into the grads of the parents it captured.
struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  float* grad_data() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return grad.data();
  }
};

class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  template <class Alloc>
    requires(!std::same_as<Alloc, Buffer::allocator_type>)
  static Tensor from_vector(const std::vector<float, Alloc>& values, Shape shape, bool requires_grad = false) {
    return from_vector(Buffer(values.begin(), values.end()), std::move(shape), requires_grad);
  }

  static Tensor from_vector(Buffer values, Shape shape, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->value = std::move(values);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const {
    const int rank = static_cast<int>(node_->shape.size());
    return node_->shape.at(static_cast<std::size_t>(i < 0 ? rank + i : i));
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  float* data() { return node_->value.data(); }
  const float* data() const { return node_->value.data(); }
  float* mutable_data() const { return node_->value.data(); }
  std::span<float> values() { return node_->value; }
  std::span<const float> values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  float* grad() const { return node_->grad_data(); }
  std::span<const float> grad_values() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  float item() const {
    if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return node_->value[0];
  }

  // Detached copy of the values.
  Tensor detach() const { return from_vector(node_->value, node_->shape); }

  Node& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

  // Reverse-mode accumulation from a scalar root.
  void backward() const {
    if (node_->value.size() != 1) throw std::logic_error("backward() requires a scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_data()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

// Creates the result node of an op. Gradient bookkeeping is attached only when
// grad mode is on and some input requires it.
inline Tensor make_result(Shape shape, Buffer value,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (GradMode::enabled()) {
    for (const Tensor& t : inputs) {
      if (t.defined() && t.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      for (const Tensor& t : inputs) {
        if (t.defined() && t.requires_grad()) n->parents.push_back(t.node_ptr());
      }
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_string(shape) +
                                ", got " + shape_string(t.shape()));
  }
}

inline void expect_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace pcaus::nn
