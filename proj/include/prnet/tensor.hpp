#pragma once

// Dense NCHW tensors with a reverse-mode gradient graph.
//
// A Tensor is a cheap handle onto a shared node. Nodes produced by an op keep
// references to their inputs and a closure that pushes the node's gradient
// back into them. backward() linearises the reachable graph into a Tape and
// replays it in reverse.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prnet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }

  // NCHW accessors; valid on rank-4 shapes only.
  std::size_t n() const { return dims_.at(0); }
  std::size_t c() const { return dims_.at(1); }
  std::size_t h() const { return dims_.at(2); }
  std::size_t w() const { return dims_.at(3); }

  std::string str() const;
  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

// Whether new ops record their backward closures. Disabled by NoGradGuard.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Branch log for finite-difference checks. While recording, each non-smooth
// op (relu, max pooling, the BCE clamp) logs the branch it takes; while
// replaying, the same ops reuse the logged branches in call order, so
// perturbed evaluations stay on the piece the gradient was taken on.
class BranchLog {
 public:
  enum class Mode { Record, Replay };

  // Installs itself as the active log until destroyed.
  BranchLog();
  ~BranchLog();
  BranchLog(const BranchLog&) = delete;
  BranchLog& operator=(const BranchLog&) = delete;

  // Rewinds and switches to replay.
  void replay();
  Mode mode() const { return mode_; }
  std::size_t entries() const { return entries_.size(); }

  static BranchLog* active();
  // Slot for the next op: a fresh buffer of `size` when recording, the logged
  // one when replaying. Throws std::logic_error when the replay diverges.
  std::vector<std::size_t>& next(std::size_t size);

 private:
  Mode mode_ = Mode::Record;
  std::vector<std::vector<std::size_t>> entries_;
  std::size_t cursor_ = 0;
  BranchLog* previous_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access, for parameter updates and test fixtures.
  std::span<T> mutable_data() { return node_->data; }

  T item() const;
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no gradient has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // A new leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Builds an op result. The backward closure is kept only when grad mode is
  // on and at least one input requires grad.
  static Tensor from_op(Shape shape, std::vector<T> data, const char* op,
                        std::vector<Tensor> inputs,
                        std::function<void(Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Topologically ordered record of every grad-requiring node reachable from a
// root. Replaying in reverse visits each recorded op exactly once.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<TensorNode<T>*>& order() const { return order_; }
  // Returns the number of backward closures executed.
  std::size_t replay_backward() const;

 private:
  std::vector<TensorNode<T>*> order_;
  std::vector<std::shared_ptr<TensorNode<T>>> keep_alive_;
};

// Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate (+=).
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace prnet
