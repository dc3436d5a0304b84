#pragma once

// Differentiable tensor operations. All spatial data is NCHW, row-major.
// Binary ops require equal shapes; the only broadcasts are a scalar constant,
// a per-sample scalar (scale_per_sample) and a single-channel map over
// channels (mul_channel_broadcast).

#include <array>
#include <cstddef>
#include <vector>

#include "prnet/tensor.hpp"

namespace prnet {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t dilation = 1;
};

// Output extent along one axis, or 0 when the geometry is invalid.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               const Conv2dOptions& opt);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dOptions& opt = {});

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel,
                     std::size_t stride);
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t kernel,
                     std::size_t stride);
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);
// Window i along an axis of extent L split into O windows spans
// [floor(i*L/O), ceil((i+1)*L/O)).
template <typename T>
Tensor<T> adaptive_max_pool(const Tensor<T>& input, std::size_t out_h,
                            std::size_t out_w);

// Bilinear with half-pixel centres (align_corners = false).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h,
                          std::size_t out_w);

// input N x D, weight D x M, bias M (may be undefined).
template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
// x: N x ..., w: N values (any shape with numel N). Sample n is scaled by w[n].
template <typename T>
Tensor<T> scale_per_sample(const Tensor<T>& x, const Tensor<T>& w);
// x: N x C x H x W, map: N x 1 x H x W.
template <typename T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& x, const Tensor<T>& map);

// Row-wise softmax on N x K (a K-vector is treated as 1 x K).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
std::vector<T> softmax_vec(const std::vector<T>& x);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t count);
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::size_t parts);

// Quadrant order: top-left, top-right, bottom-left, bottom-right.
template <typename T>
std::array<Tensor<T>, 4> quadrant_split(const Tensor<T>& x);
template <typename T>
Tensor<T> quadrant_merge(const std::array<Tensor<T>, 4>& parts);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);  // N x (rest)
// Column k of an N x K tensor, as N x 1.
template <typename T>
Tensor<T> select_column(const Tensor<T>& x, std::size_t k);
template <typename T>
Tensor<T> row_mean(const Tensor<T>& x);  // N x K -> N x 1
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x);

enum class NormMode { Train, Eval };

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Train mode normalises with biased batch variance and updates the running
// statistics with the unbiased variance.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     NormMode mode);

}  // namespace prnet
