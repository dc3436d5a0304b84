#pragma once

// Imitating-eye-observation module.
//
//   step 1  split F1 into quadrants; each quadrant goes through the
//           peripheral-vision attention (PVM) with a residual modulation;
//           reassemble into F2
//   step 2  F3 = relu(conv3x3(concat_c(F1, F2)))
//   step 3  F3' = F3 + F3 * pvm(F3); foveal = dilated conv (rate 5) on F1;
//           F4 = concat_c(w1 F3', w2 foveal, w3 F1) with (w1, w2, w3) from
//           three memory units coupled by a 3x softmax; output is a 3C -> C
//           fusion conv with relu
//
// PVM on F: split into quadrants, stack them along channels (4C), 3x3 conv
// with relu, split the channels back into four parts, reassemble them
// spatially, 3x3 conv to one channel with sigmoid. Each attention pixel thus
// sees a 3x3 neighbourhood at the mirrored position of every quadrant.

#include <string>

#include "prnet/pr_block.hpp"

namespace prnet {

template <typename T>
struct PvmParams {
  PvmParams() = default;
  PvmParams(ParameterStore<T>& store, const std::string& name,
            std::size_t channels);

  Conv2d<T> conv1;  // 4C -> 4C, 3x3, relu
  Conv2d<T> conv2;  // C -> 1, 3x3, sigmoid
};

// Attention map N x 1 x H x W in (0, 1). H and W must be even.
template <typename T>
Tensor<T> pvm(const Tensor<T>& feature, const PvmParams<T>& params);

// feature + feature * attention, attention broadcast over channels.
template <typename T>
Tensor<T> pvm_modulate(const Tensor<T>& feature, const Tensor<T>& attention);

template <typename T>
struct IeoOutput {
  Tensor<T> output;   // N x C x H x W
  Tensor<T> coupled;  // N x 3, rows sum to 3: peripheral, foveal, original
};

template <typename T>
class Ieo {
 public:
  static constexpr std::size_t kFovealDilation = 5;

  Ieo() = default;
  // `perception` describes the memory units reading the perception input of
  // shape N x perception_channels x perception_h x perception_w.
  Ieo(ParameterStore<T>& store, const std::string& name, std::size_t channels,
      PerceptionConfig perception, std::size_t perception_channels,
      std::size_t perception_h, std::size_t perception_w);

  Tensor<T> step1_partition_search(const Tensor<T>& f1) const;
  Tensor<T> step2_integrate(const Tensor<T>& f1, const Tensor<T>& f2) const;
  // F3' (global-receptive peripheral feature).
  Tensor<T> peripheral(const Tensor<T>& f3) const;
  Tensor<T> foveal(const Tensor<T>& f1) const;
  // Fusion with explicit coupled weights (N x 3).
  Tensor<T> fuse(const Tensor<T>& peripheral, const Tensor<T>& foveal,
                 const Tensor<T>& original, const Tensor<T>& coupled) const;

  IeoOutput<T> forward(const Tensor<T>& f1,
                       const Tensor<T>& perception_input) const;

  PvmParams<T> step1_pvm;
  Conv2d<T> integrate;  // 2C -> C
  PvmParams<T> step3_pvm;
  Conv2d<T> foveal_conv;  // C -> C, dilation 5
  Conv2d<T> fusion;       // 3C -> C
  Perceiver<T> memory_units;

 private:
  std::size_t channels_ = 0;
};

// Checks the extent requirement (divisible by 4) and throws ShapeError.
void require_ieo_extent(const Shape& s);

}  // namespace prnet
