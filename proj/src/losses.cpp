#include <algorithm>
#include <cmath>

#include "prnet/training.hpp"

namespace prnet {

namespace {

template <typename T>
void check_pair(const Tensor<T>& p, const Tensor<T>& g, const char* op) {
  if (!(p.shape() == g.shape()))
    throw ShapeError(std::string(op) + ": prediction " + p.shape().str() +
                     " vs mask " + g.shape().str());
  if (p.numel() == 0) throw ShapeError(std::string(op) + ": empty input");
}

}  // namespace

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& g) {
  check_pair(p, g, "bce_loss");
  const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
  const std::size_t M = p.numel();
  const T* pd = p.data().data();
  const T* gd = g.data().data();
  // Branch codes: 0 inside the clamp range, 1 clamped low, 2 clamped high.
  std::vector<std::size_t> branch(M);
  BranchLog* log = BranchLog::active();
  const bool replay = log && log->mode() == BranchLog::Mode::Replay;
  if (replay) branch = log->next(M);
  double acc = 0.0;
  for (std::size_t k = 0; k < M; ++k) {
    if (!replay) branch[k] = pd[k] < lo ? 1 : pd[k] > hi ? 2 : 0;
    const double q = branch[k] == 1 ? lo : branch[k] == 2 ? hi : pd[k];
    acc -= gd[k] * std::log(q) + (1.0 - gd[k]) * std::log(1.0 - q);
  }
  if (log && !replay) log->next(M) = branch;
  const T value = static_cast<T>(acc / static_cast<double>(M));
  auto bw = [=](TensorNode<T>& self) {
    const T up = self.grad[0] / static_cast<T>(M);
    auto& in = self.inputs[0];
    if (in && in->requires_grad) {
      auto& gp = in->ensure_grad();
      const T* pv = in->data.data();
      const T* gv = self.inputs[1]->data.data();
      for (std::size_t k = 0; k < M; ++k) {
        if (pv[k] < lo || pv[k] > hi) continue;
        gp[k] += up * (-gv[k] / pv[k] + (T(1) - gv[k]) / (T(1) - pv[k]));
      }
    }
  };
  return Tensor<T>::from_op(Shape{1}, {value}, "bce_loss", {p, g}, bw);
}

template <typename T>
Tensor<T> cel_loss(const Tensor<T>& p, const Tensor<T>& g) {
  check_pair(p, g, "cel_loss");
  const std::size_t N = p.shape()[0];
  const std::size_t per = p.numel() / N;
  const T* pd = p.data().data();
  const T* gd = g.data().data();
  std::vector<double> num(N, 0.0), den(N, 0.0);
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
      num[n] += pd[k] + gd[k] - 2.0 * gd[k] * pd[k];
      den[n] += pd[k] + gd[k];
    }
    if (den[n] >= kCelGuard) acc += num[n] / den[n];
  }
  const T value = static_cast<T>(acc / static_cast<double>(N));
  auto bw = [=](TensorNode<T>& self) {
    auto& in = self.inputs[0];
    if (!in || !in->requires_grad) return;
    const double up = static_cast<double>(self.grad[0]) / static_cast<double>(N);
    auto& gp = in->ensure_grad();
    const T* gv = self.inputs[1]->data.data();
    for (std::size_t n = 0; n < N; ++n) {
      if (den[n] < kCelGuard) continue;
      const double inv2 = 1.0 / (den[n] * den[n]);
      for (std::size_t k = n * per; k < (n + 1) * per; ++k)
        gp[k] += static_cast<T>(
            up * ((1.0 - 2.0 * gv[k]) * den[n] - num[n]) * inv2);
    }
  };
  return Tensor<T>::from_op(Shape{1}, {value}, "cel_loss", {p, g}, bw);
}

template <typename T>
LossBreakdown<T> saliency_loss(const Tensor<T>& p, const Tensor<T>& g) {
  LossBreakdown<T> out;
  out.bce = bce_loss(p, g);
  out.cel = cel_loss(p, g);
  out.total = add(out.bce, out.cel);
  return out;
}

#define PRNET_INSTANTIATE_LOSSES(T)                                   \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> cel_loss(const Tensor<T>&, const Tensor<T>&);   \
  template LossBreakdown<T> saliency_loss(const Tensor<T>&, const Tensor<T>&);

PRNET_INSTANTIATE_LOSSES(float)
PRNET_INSTANTIATE_LOSSES(double)

}  // namespace prnet
