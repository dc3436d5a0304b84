#include "prnet/layers.hpp"

#include <algorithm>
#include <cmath>

namespace prnet {

template <typename T>
void ParameterStore<T>::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  names_.push_back(name);
}

template <typename T>
Parameter<T>* ParameterStore<T>::create(const std::string& name, Shape shape,
                                        std::vector<T> values, bool decay) {
  claim(name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->momentum.assign(values.size(), T(0));
  p->value = Tensor<T>(std::move(shape), std::move(values), true);
  p->decay = decay;
  params_.push_back(std::move(p));
  return params_.back().get();
}

template <typename T>
Parameter<T>* ParameterStore<T>::create_uniform(const std::string& name,
                                                Shape shape, T bound,
                                                bool decay) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  std::vector<T> values(shape.numel());
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return create(name, std::move(shape), std::move(values), decay);
}

template <typename T>
BatchNormState<T>* ParameterStore<T>::create_norm_state(const std::string& name,
                                                        std::size_t channels) {
  claim(name);
  auto s = std::make_unique<NamedNormState<T>>();
  s->name = name;
  s->state = BatchNormState<T>(channels);
  norms_.push_back(std::move(s));
  return &norms_.back()->state;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::parameters() const {
  std::vector<Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<NamedNormState<T>*> ParameterStore<T>::norm_states() const {
  std::vector<NamedNormState<T>*> out;
  for (const auto& s : norms_) out.push_back(s.get());
  return out;
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->value.zero_grad();
}

template <typename T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t out, std::size_t kernel,
                  Conv2dOptions opt, bool with_bias)
    : options(opt) {
  const T bound = T(1) / std::sqrt(static_cast<T>(in * kernel * kernel));
  weight = store.create_uniform(name + ".weight", Shape{out, in, kernel, kernel},
                                bound);
  if (with_bias) bias = store.create_uniform(name + ".bias", Shape{out}, bound);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight->value, bias ? bias->value : Tensor<T>(), options);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParameterStore<T>& store, const std::string& name,
                            std::size_t channels) {
  gamma = store.create(name + ".gamma", Shape{channels},
                       std::vector<T>(channels, T(1)), false);
  beta = store.create(name + ".beta", Shape{channels},
                      std::vector<T>(channels, T(0)), false);
  state = store.create_norm_state(name + ".running", channels);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, NormMode mode) const {
  return batch_norm(x, gamma->value, beta->value, *state, mode);
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(ParameterStore<T>& store, const std::string& name,
                          std::size_t in, std::size_t out, std::size_t kernel,
                          Conv2dOptions opt)
    : conv(store, name + ".conv", in, out, kernel, opt),
      norm(store, name + ".bn", out) {}

template <typename T>
Tensor<T> ConvBnRelu<T>::operator()(const Tensor<T>& x, NormMode mode) const {
  return relu(norm(conv(x), mode));
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t out) {
  const T bound = T(1) / std::sqrt(static_cast<T>(in));
  weight = store.create_uniform(name + ".weight", Shape{in, out}, bound);
  bias = store.create_uniform(name + ".bias", Shape{out}, bound);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return affine(x, weight->value, bias->value);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace prnet
