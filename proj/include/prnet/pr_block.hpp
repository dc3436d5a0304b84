#pragma once

// Perception-and-regulation: a perceiver reads one high-level feature and
// emits a scalar weight per regulated feature; the regulator scales each
// regulated feature by its weight before fusion.

#include <map>
#include <string>
#include <vector>

#include "prnet/layers.hpp"

namespace prnet {

enum class PerceptionStrategy {
  FullyConnected,  // adaptive max pool, flatten, one-hidden-layer MLP
  Spatial,         // per unit: two sigmoid 3x3 convs down to one channel, mean
  Channel,         // per unit: global average, sigmoid FC to C/r, mean
};

const char* strategy_name(PerceptionStrategy s);
PerceptionStrategy parse_strategy(const std::string& s);

struct PerceptionConfig {
  PerceptionStrategy strategy = PerceptionStrategy::Spatial;
  std::size_t pooled_h = 4;  // fully-connected strategy; clamped to the input
  std::size_t pooled_w = 4;
  std::size_t reduction = 16;  // spatial and channel strategies
  std::size_t regulated_count = 8;
  bool detach_input = false;
};

// Weights for one regulation site: values is N x order.size(), every entry in
// (0, 2) for the perceiver outputs.
template <typename T>
struct RegulationWeights {
  std::vector<std::string> order;
  Tensor<T> values;

  RegulationWeights() = default;
  RegulationWeights(std::vector<std::string> names, Tensor<T> v);

  std::size_t size() const { return order.size(); }
  std::size_t index_of(const std::string& name) const;
  // N x 1 column, still attached to the graph.
  Tensor<T> column(const std::string& name) const;
  Tensor<T> column(std::size_t k) const;

  // Every weight equal to `value`, detached from any graph.
  static RegulationWeights constant(std::vector<std::string> names,
                                    std::size_t batch, T value);
};

template <typename T>
class Perceiver {
 public:
  Perceiver() = default;
  // The input feature has `channels` channels and in_h x in_w extent.
  Perceiver(ParameterStore<T>& store, const std::string& name,
            const PerceptionConfig& cfg, std::size_t channels,
            std::size_t in_h, std::size_t in_w);

  // N x regulated_count weights in (0, 2).
  Tensor<T> operator()(const Tensor<T>& feature) const;

  const PerceptionConfig& config() const { return cfg_; }
  std::size_t hidden_width() const { return hidden_width_; }
  std::size_t bottleneck() const { return bottleneck_; }

  // Strategy-specific parameters, exposed for inspection and tests.
  Linear<T> hidden, output;                        // fully connected
  std::vector<std::pair<Conv2d<T>, Conv2d<T>>> spatial_units;
  std::vector<Linear<T>> channel_units;

 private:
  Tensor<T> perceive_fc(const Tensor<T>& f) const;
  Tensor<T> perceive_spatial(const Tensor<T>& f) const;
  Tensor<T> perceive_channel(const Tensor<T>& f) const;

  PerceptionConfig cfg_;
  std::size_t channels_ = 0;
  std::size_t pooled_h_ = 0, pooled_w_ = 0;
  std::size_t hidden_width_ = 0;
  std::size_t bottleneck_ = 0;
};

// W'_k = 3 exp(W_k) / sum_j exp(W_j), row-wise on N x 3. Rows sum to 3.
template <typename T>
Tensor<T> couple_softmax(const Tensor<T>& raw);

// Scales every regulated feature by its per-sample weight. Features that are
// not in the registry pass through untouched.
template <typename T>
std::map<std::string, Tensor<T>> apply_regulation(
    const std::map<std::string, Tensor<T>>& features,
    const RegulationWeights<T>& weights);

}  // namespace prnet
