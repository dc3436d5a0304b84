#include "prnet/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace prnet {

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

namespace {
thread_local BranchLog* g_branch_log = nullptr;
}

BranchLog::BranchLog() : previous_(g_branch_log) { g_branch_log = this; }
BranchLog::~BranchLog() { g_branch_log = previous_; }

void BranchLog::replay() {
  mode_ = Mode::Replay;
  cursor_ = 0;
}

BranchLog* BranchLog::active() { return g_branch_log; }

std::vector<std::size_t>& BranchLog::next(std::size_t size) {
  if (mode_ == Mode::Record) {
    entries_.emplace_back(size);
    return entries_.back();
  }
  if (cursor_ >= entries_.size() || entries_[cursor_].size() != size)
    throw std::logic_error("branch log replay diverged at entry " +
                           std::to_string(cursor_));
  return entries_[cursor_++];
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape.numel() != data.size())
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape.numel();
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape().str());
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h,
                std::size_t w) const {
  const Shape& s = shape();
  return node_->data[((n * s.c() + c) * s.h() + h) * s.w() + w];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, const char* op,
                             std::vector<Tensor> inputs,
                             std::function<void(Node&)> backward) {
  assert(shape.numel() == data.size());
  assert(all_finite<T>(data));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_mode_enabled())
    for (const auto& in : inputs)
      if (in.defined() && in.requires_grad()) needs = true;
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  tape.keep_alive_.push_back(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto& child = node->inputs[next++];
      if (child && child->requires_grad && seen.insert(child.get()).second) {
        tape.keep_alive_.push_back(child);
        stack.emplace_back(child.get(), 0);
      }
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

template <typename T>
std::size_t Tape<T>::replay_backward() const {
  std::size_t visited = 0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    ++visited;
  }
  return visited;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     loss.shape().str());
  if (!loss.requires_grad()) return;
  auto tape = Tape<T>::record(loss);
  // Only leaves accumulate across calls; interior gradients are per pass.
  for (auto* node : tape.order())
    if (node->backward) node->grad.clear();
  loss.node()->ensure_grad()[0] += T(1);
  tape.replay_backward();
  for (auto* node : tape.order())
    if (node->backward) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace prnet
