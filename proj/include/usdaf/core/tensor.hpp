#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "usdaf/core/error.hpp"

namespace usdaf::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline constexpr std::size_t kNoTapeId = std::numeric_limits<std::size_t>::max();

/// One value in the computation graph. Leaves (parameters, inputs) are never
/// recorded on a tape; op results are.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  std::size_t tape_id = kNoTapeId;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + to_string(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  /// Allocates (or resets) the gradient buffer to zeros.
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  std::size_t tape_id() const { return node_->tape_id; }
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Detached deep copy of the values.
  Tensor clone(bool requires_grad = false) const { return from(shape(), node_->value, requires_grad); }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed ops. Ops record into the tape that is active
/// on the calling thread; with no active tape they run in inference mode.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// RAII activation of a tape on the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_slot()) { active_slot() = &tape; }
    ~Scope() { active_slot() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return active_slot(); }

  std::size_t record(const std::shared_ptr<Node>& node) {
    node->tape_id = nodes_.size();
    nodes_.push_back(node);
    return node->tape_id;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& at(std::size_t id) const { return *nodes_.at(id); }

  /// Reverse sweep from a scalar loss. Each reachable node runs its backward
  /// closure once; leaf gradients accumulate additively.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward() needs a scalar loss");
    }
    const auto start = loss.tape_id();
    if (start == kNoTapeId || start >= nodes_.size() || nodes_[start] != loss.node()) {
      throw Error("backward(): loss was not produced on this tape");
    }
    std::vector<char> reachable(start + 1, 0);
    reachable[start] = 1;
    auto& root = *nodes_[start];
    root.ensure_grad();
    root.grad[0] += 1.0;
    visited_ = 0;
    for (std::size_t id = start + 1; id-- > 0;) {
      if (!reachable[id]) continue;
      Node& node = *nodes_[id];
      ++visited_;
      for (auto& in : node.inputs) {
        if (!in->requires_grad) continue;
        in->ensure_grad();
        if (in->tape_id != kNoTapeId && in->tape_id < reachable.size()) reachable[in->tape_id] = 1;
      }
      node.ensure_grad();
      if (node.backward) node.backward(node);
    }
  }

  /// Number of nodes processed by the last backward() call.
  std::size_t last_visit_count() const { return visited_; }

 private:
  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }

  std::vector<std::shared_ptr<Node>> nodes_;
  std::size_t visited_ = 0;
};

inline void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw Error("backward() called without an active tape");
  tape->backward(loss);
}

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Builds an op result and records it when any input needs a gradient and a
/// tape is active.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  Tape* tape = Tape::active();
  if (needs && tape) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace detail
}  // namespace usdaf::ad
