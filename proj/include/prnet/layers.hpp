#pragma once

// Named parameters and the small layer wrappers the network is built from.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "prnet/ops.hpp"

namespace prnet {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;          // leaf, requires_grad
  std::vector<T> momentum;  // SGD velocity, zero-initialised
  bool decay = true;        // false for normalisation gains and shifts
};

template <typename T>
struct NamedNormState {
  std::string name;
  BatchNormState<T> state;
};

// Owns every parameter and running-statistics buffer of a model, in
// registration order. Names are unique.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>* create(const std::string& name, Shape shape,
                       std::vector<T> values, bool decay = true);
  // Uniform in [-bound, bound] from the store's generator.
  Parameter<T>* create_uniform(const std::string& name, Shape shape, T bound,
                               bool decay = true);
  BatchNormState<T>* create_norm_state(const std::string& name,
                                       std::size_t channels);

  std::vector<Parameter<T>*> parameters() const;
  std::vector<NamedNormState<T>*> norm_states() const;
  Parameter<T>* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  void claim(const std::string& name);

  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::unique_ptr<NamedNormState<T>>> norms_;
  std::vector<std::string> names_;
  std::mt19937_64 rng_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  // Weights and bias uniform in +-1/sqrt(fan_in).
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in,
         std::size_t out, std::size_t kernel, Conv2dOptions opt = {},
         bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;

  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Conv2dOptions options;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, const std::string& name,
              std::size_t channels);

  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) const;

  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormState<T>* state = nullptr;
};

// conv -> batch norm -> relu
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParameterStore<T>& store, const std::string& name, std::size_t in,
             std::size_t out, std::size_t kernel, Conv2dOptions opt = {});

  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) const;

  Conv2d<T> conv;
  BatchNorm2d<T> norm;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in,
         std::size_t out);

  Tensor<T> operator()(const Tensor<T>& x) const;

  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;
};

}  // namespace prnet
