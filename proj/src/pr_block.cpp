#include "prnet/pr_block.hpp"

#include <algorithm>

namespace prnet {

const char* strategy_name(PerceptionStrategy s) {
  switch (s) {
    case PerceptionStrategy::FullyConnected:
      return "fc";
    case PerceptionStrategy::Spatial:
      return "s";
    case PerceptionStrategy::Channel:
      return "c";
  }
  return "?";
}

PerceptionStrategy parse_strategy(const std::string& s) {
  if (s == "fc" || s == "FC") return PerceptionStrategy::FullyConnected;
  if (s == "s" || s == "S") return PerceptionStrategy::Spatial;
  if (s == "c" || s == "C") return PerceptionStrategy::Channel;
  throw std::invalid_argument("unknown perception strategy '" + s +
                              "' (expected fc, s or c)");
}

template <typename T>
RegulationWeights<T>::RegulationWeights(std::vector<std::string> names,
                                        Tensor<T> v)
    : order(std::move(names)), values(std::move(v)) {
  if (values.shape().rank() != 2 || values.shape()[1] != order.size())
    throw ShapeError("regulation weights " + values.shape().str() + " for " +
                     std::to_string(order.size()) + " regulated features");
}

template <typename T>
std::size_t RegulationWeights<T>::index_of(const std::string& name) const {
  auto it = std::find(order.begin(), order.end(), name);
  if (it == order.end())
    throw std::out_of_range("no regulation weight named '" + name + "'");
  return static_cast<std::size_t>(it - order.begin());
}

template <typename T>
Tensor<T> RegulationWeights<T>::column(const std::string& name) const {
  return column(index_of(name));
}

template <typename T>
Tensor<T> RegulationWeights<T>::column(std::size_t k) const {
  return select_column(values, k);
}

template <typename T>
RegulationWeights<T> RegulationWeights<T>::constant(
    std::vector<std::string> names, std::size_t batch, T value) {
  const std::size_t k = names.size();
  return RegulationWeights(std::move(names),
                           Tensor<T>::full(Shape{batch, k}, value));
}

template <typename T>
Perceiver<T>::Perceiver(ParameterStore<T>& store, const std::string& name,
                        const PerceptionConfig& cfg, std::size_t channels,
                        std::size_t in_h, std::size_t in_w)
    : cfg_(cfg), channels_(channels) {
  const std::size_t units = cfg.regulated_count;
  if (units == 0) throw std::invalid_argument(name + ": no regulated features");
  switch (cfg.strategy) {
    case PerceptionStrategy::FullyConnected: {
      pooled_h_ = std::min(cfg.pooled_h, in_h);
      pooled_w_ = std::min(cfg.pooled_w, in_w);
      if (pooled_h_ == 0 || pooled_w_ == 0)
        throw std::invalid_argument(name + ": empty pooled extent");
      hidden_width_ = channels * units;
      hidden = Linear<T>(store, name + ".hidden",
                         channels * pooled_h_ * pooled_w_, hidden_width_);
      output = Linear<T>(store, name + ".output", hidden_width_, units);
      break;
    }
    case PerceptionStrategy::Spatial:
    case PerceptionStrategy::Channel: {
      if (cfg.reduction == 0)
        throw std::invalid_argument(name + ": reduction ratio must be >= 1");
      bottleneck_ = channels / cfg.reduction;
      if (bottleneck_ < 1)
        throw std::invalid_argument(
            name + ": " + std::to_string(channels) +
            " channels reduced by " + std::to_string(cfg.reduction) +
            " leaves no memory-unit width");
      for (std::size_t k = 0; k < units; ++k) {
        const std::string unit = name + ".unit" + std::to_string(k);
        if (cfg.strategy == PerceptionStrategy::Spatial) {
          spatial_units.emplace_back(
              Conv2d<T>(store, unit + ".reduce", channels, bottleneck_, 3,
                        {1, 1, 1}),
              Conv2d<T>(store, unit + ".collapse", bottleneck_, 1, 3,
                        {1, 1, 1}));
        } else {
          channel_units.emplace_back(store, unit + ".fc", channels,
                                     bottleneck_);
        }
      }
      break;
    }
  }
}

template <typename T>
Tensor<T> Perceiver<T>::operator()(const Tensor<T>& feature) const {
  if (feature.shape().rank() != 4 || feature.shape().c() != channels_)
    throw ShapeError("perceiver expects " + std::to_string(channels_) +
                     " channels, got " + feature.shape().str());
  const Tensor<T> f = cfg_.detach_input ? feature.detach() : feature;
  switch (cfg_.strategy) {
    case PerceptionStrategy::FullyConnected:
      return perceive_fc(f);
    case PerceptionStrategy::Spatial:
      return perceive_spatial(f);
    case PerceptionStrategy::Channel:
      return perceive_channel(f);
  }
  return {};
}

template <typename T>
Tensor<T> Perceiver<T>::perceive_fc(const Tensor<T>& f) const {
  auto pooled = flatten(adaptive_max_pool(f, pooled_h_, pooled_w_));
  auto h = relu(hidden(pooled));
  return scale(sigmoid(output(h)), T(2));
}

template <typename T>
Tensor<T> Perceiver<T>::perceive_spatial(const Tensor<T>& f) const {
  const std::size_t N = f.shape().n();
  std::vector<Tensor<T>> cols;
  for (const auto& [reduce, collapse] : spatial_units) {
    auto m = scale(sigmoid(collapse(sigmoid(reduce(f)))), T(2));
    cols.push_back(reshape(global_avg_pool(m), Shape{N, 1, 1, 1}));
  }
  return reshape(concat_channels(cols), Shape{N, cols.size()});
}

template <typename T>
Tensor<T> Perceiver<T>::perceive_channel(const Tensor<T>& f) const {
  const std::size_t N = f.shape().n();
  auto pooled = reshape(global_avg_pool(f), Shape{N, channels_});
  std::vector<Tensor<T>> cols;
  for (const auto& fc : channel_units) {
    auto v = scale(sigmoid(fc(pooled)), T(2));
    cols.push_back(reshape(row_mean(v), Shape{N, 1, 1, 1}));
  }
  return reshape(concat_channels(cols), Shape{N, cols.size()});
}

template <typename T>
Tensor<T> couple_softmax(const Tensor<T>& raw) {
  if (raw.shape().rank() != 2 || raw.shape()[1] != 3)
    throw ShapeError("couple_softmax expects N x 3, got " + raw.shape().str());
  return scale(softmax_rows(raw), T(3));
}

template <typename T>
std::map<std::string, Tensor<T>> apply_regulation(
    const std::map<std::string, Tensor<T>>& features,
    const RegulationWeights<T>& weights) {
  for (const auto& name : weights.order)
    if (!features.count(name))
      throw std::invalid_argument("regulated feature '" + name +
                                  "' is missing from the feature map");
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, f] : features) {
    auto it = std::find(weights.order.begin(), weights.order.end(), name);
    if (it == weights.order.end()) {
      out.emplace(name, f);
    } else {
      out.emplace(name, scale_per_sample(f, weights.column(static_cast<std::size_t>(
                                                it - weights.order.begin()))));
    }
  }
  return out;
}

template struct RegulationWeights<float>;
template struct RegulationWeights<double>;
template class Perceiver<float>;
template class Perceiver<double>;
template Tensor<float> couple_softmax(const Tensor<float>&);
template Tensor<double> couple_softmax(const Tensor<double>&);
template std::map<std::string, Tensor<float>> apply_regulation(
    const std::map<std::string, Tensor<float>>&, const RegulationWeights<float>&);
template std::map<std::string, Tensor<double>> apply_regulation(
    const std::map<std::string, Tensor<double>>&,
    const RegulationWeights<double>&);

}  // namespace prnet
