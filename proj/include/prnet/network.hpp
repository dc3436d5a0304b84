#pragma once

// Backbone, channel unification, SSD-style perception input, the CFE and IEO
// enhancement modules and the FPN / GGS decoders with PR regulation.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prnet/ieo.hpp"

namespace prnet {

enum class DecoderVariant { Fpn, Ggs, GgsSsd };

const char* decoder_name(DecoderVariant v);
DecoderVariant parse_decoder(const std::string& s);

struct ModelConfig {
  std::vector<std::size_t> backbone_widths{16, 32, 64, 64, 64};
  std::size_t unified_channels = 16;
  DecoderVariant decoder = DecoderVariant::Fpn;
  PerceptionStrategy strategy = PerceptionStrategy::Spatial;
  std::size_t pooled_extent = 4;
  std::size_t reduction = 16;
  bool ieo_enabled = false;
  bool cfe_enabled = false;
  // When false every regulation weight is 1 and no perceivers are built.
  bool regulation_enabled = true;
  bool detach_perception = false;
  std::size_t input_size = 64;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  // Ordered key=value pairs; also the checkpoint config echo.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static ModelConfig from_pairs(
      const std::vector<std::pair<std::string, std::string>>& pairs);
  static bool is_key(const std::string& key);

  // Full-scale preset: 384 input, 64 unified channels, VGG-like widths.
  static ModelConfig full_preset();
  // The full network: GGS decoder, SSD perception input, IEO at levels 3-5.
  static ModelConfig toy_prnet();
};

// Lists "key: a -> b" for every differing key; empty when equal.
std::vector<std::string> config_diff(const ModelConfig& a,
                                     const ModelConfig& b);

template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 5> i;  // interlayer i1..i5
  std::array<Tensor<T>, 5> d;  // decoder d1..d5
  std::array<Tensor<T>, 3> g;  // guidance g1..g3 (GGS only)
};

// Every regulation weight emitted by one forward pass, in registry order.
template <typename T>
struct Diagnostics {
  std::vector<std::string> names;
  std::vector<std::vector<double>> per_sample;  // [sample][weight]

  void append(const std::string& prefix, const RegulationWeights<T>& w);
  std::size_t size() const { return names.size(); }
};

template <typename T>
struct ForwardResult {
  Tensor<T> prediction;  // N x 1 x H x W, values in (0, 1)
  FeaturePyramid<T> pyramid;
  Diagnostics<T> diagnostics;
};

template <typename T>
class Cfe {
 public:
  static constexpr std::array<std::size_t, 4> kDilations{1, 3, 5, 7};

  Cfe() = default;
  Cfe(ParameterStore<T>& store, const std::string& name, std::size_t channels,
      const PerceptionConfig& perception, std::size_t perception_channels,
      std::size_t perception_h, std::size_t perception_w);

  // `weights` is N x 4, one column per dilation branch.
  Tensor<T> apply(const Tensor<T>& feature, const Tensor<T>& weights) const;
  std::array<Tensor<T>, 4> branches(const Tensor<T>& feature) const;

  std::array<Conv2d<T>, 4> branch_convs;
  Conv2d<T> reduce;  // 4C -> C, 1x1
  std::optional<Perceiver<T>> memory_units;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ForwardResult<T> forward(const Tensor<T>& image, NormMode mode) const;

  // Five raw stage outputs; stage k has extent input / 2^k.
  std::array<Tensor<T>, 5> backbone_forward(const Tensor<T>& image,
                                            NormMode mode) const;
  std::array<Tensor<T>, 5> unify_channels(const std::array<Tensor<T>, 5>& raw,
                                          NormMode mode) const;
  // Stages 6-8 after stage 5; combines stages 4, 7, 8 at stage-7 extent.
  Tensor<T> ssd_extend_and_combine(const std::array<Tensor<T>, 5>& raw,
                                   NormMode mode) const;
  // Fills pyramid.d (and pyramid.g for GGS) and returns the prediction.
  Tensor<T> fpn_pr_decode(FeaturePyramid<T>& pyramid,
                          const RegulationWeights<T>& weights,
                          NormMode mode) const;
  Tensor<T> ggs_pr_decode(FeaturePyramid<T>& pyramid,
                          const RegulationWeights<T>& weights,
                          NormMode mode) const;

  // Names regulated by the decoder perceiver, in registry order.
  std::vector<std::string> decoder_registry() const;
  // Extent of the perception input for the configured variant.
  std::size_t perception_extent() const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& store() { return *store_; }
  const ParameterStore<T>& store() const { return *store_; }

  // Modules, exposed for tests and inspection.
  std::vector<std::array<ConvBnRelu<T>, 2>> stages;
  std::array<ConvBnRelu<T>, 5> unify;
  std::array<ConvBnRelu<T>, 3> ssd_stages;
  Conv2d<T> ssd_combine;
  std::optional<Perceiver<T>> decoder_perceiver;
  std::array<ConvBnRelu<T>, 4> merges;  // merges[k] produces d_{k+1}
  Conv2d<T> guidance_conv;
  Conv2d<T> head;
  std::map<std::size_t, Ieo<T>> ieos;  // keyed by level 3..5
  std::map<std::size_t, Cfe<T>> cfes;

 private:
  Tensor<T> decode(FeaturePyramid<T>& pyramid,
                   const RegulationWeights<T>& weights, bool guided,
                   NormMode mode) const;

  ModelConfig config_;
  std::unique_ptr<ParameterStore<T>> store_;
};

}  // namespace prnet
