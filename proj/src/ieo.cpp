#include "prnet/ieo.hpp"

namespace prnet {

void require_ieo_extent(const Shape& s) {
  if (s.rank() != 4 || s.h() % 4 != 0 || s.w() % 4 != 0 || s.h() == 0 ||
      s.w() == 0)
    throw ShapeError("IEO needs spatial extents divisible by 4, got " +
                     s.str());
}

template <typename T>
PvmParams<T>::PvmParams(ParameterStore<T>& store, const std::string& name,
                        std::size_t channels)
    : conv1(store, name + ".conv1", 4 * channels, 4 * channels, 3, {1, 1, 1}),
      conv2(store, name + ".conv2", channels, 1, 3, {1, 1, 1}) {}

template <typename T>
Tensor<T> pvm(const Tensor<T>& feature, const PvmParams<T>& params) {
  auto q = quadrant_split(feature);
  auto stacked = concat_channels<T>({q[0], q[1], q[2], q[3]});
  auto mixed = relu(params.conv1(stacked));
  auto parts = split_channels(mixed, 4);
  auto merged = quadrant_merge<T>({parts[0], parts[1], parts[2], parts[3]});
  return sigmoid(params.conv2(merged));
}

template <typename T>
Tensor<T> pvm_modulate(const Tensor<T>& feature, const Tensor<T>& attention) {
  return add(feature, mul_channel_broadcast(feature, attention));
}

template <typename T>
Ieo<T>::Ieo(ParameterStore<T>& store, const std::string& name,
            std::size_t channels, PerceptionConfig perception,
            std::size_t perception_channels, std::size_t perception_h,
            std::size_t perception_w)
    : step1_pvm(store, name + ".step1_pvm", channels),
      integrate(store, name + ".integrate", 2 * channels, channels, 3,
                {1, 1, 1}),
      step3_pvm(store, name + ".step3_pvm", channels),
      foveal_conv(store, name + ".foveal", channels, channels, 3,
                  {1, kFovealDilation, kFovealDilation}),
      fusion(store, name + ".fusion", 3 * channels, channels, 3, {1, 1, 1}),
      channels_(channels) {
  perception.regulated_count = 3;
  memory_units = Perceiver<T>(store, name + ".pr", perception,
                              perception_channels, perception_h, perception_w);
}

template <typename T>
Tensor<T> Ieo<T>::step1_partition_search(const Tensor<T>& f1) const {
  require_ieo_extent(f1.shape());
  auto q = quadrant_split(f1);
  std::array<Tensor<T>, 4> modulated;
  for (std::size_t k = 0; k < 4; ++k)
    modulated[k] = pvm_modulate(q[k], pvm(q[k], step1_pvm));
  return quadrant_merge(modulated);
}

template <typename T>
Tensor<T> Ieo<T>::step2_integrate(const Tensor<T>& f1,
                                  const Tensor<T>& f2) const {
  if (!(f1.shape() == f2.shape()))
    throw ShapeError("IEO integrate: " + f1.shape().str() + " vs " +
                     f2.shape().str());
  return relu(integrate(concat_channels<T>({f1, f2})));
}

template <typename T>
Tensor<T> Ieo<T>::peripheral(const Tensor<T>& f3) const {
  return pvm_modulate(f3, pvm(f3, step3_pvm));
}

template <typename T>
Tensor<T> Ieo<T>::foveal(const Tensor<T>& f1) const {
  return foveal_conv(f1);
}

template <typename T>
Tensor<T> Ieo<T>::fuse(const Tensor<T>& peripheral, const Tensor<T>& foveal,
                       const Tensor<T>& original,
                       const Tensor<T>& coupled) const {
  auto f4 = concat_channels<T>(
      {scale_per_sample(peripheral, select_column(coupled, 0)),
       scale_per_sample(foveal, select_column(coupled, 1)),
       scale_per_sample(original, select_column(coupled, 2))});
  return relu(fusion(f4));
}

template <typename T>
IeoOutput<T> Ieo<T>::forward(const Tensor<T>& f1,
                             const Tensor<T>& perception_input) const {
  require_ieo_extent(f1.shape());
  if (f1.shape().c() != channels_)
    throw ShapeError("IEO expects " + std::to_string(channels_) +
                     " channels, got " + f1.shape().str());
  auto f2 = step1_partition_search(f1);
  auto f3 = step2_integrate(f1, f2);
  auto f3p = peripheral(f3);
  auto fov = foveal(f1);
  auto coupled = couple_softmax(memory_units(perception_input));
  return {fuse(f3p, fov, f1, coupled), coupled};
}

template struct PvmParams<float>;
template struct PvmParams<double>;
template class Ieo<float>;
template class Ieo<double>;
template Tensor<float> pvm(const Tensor<float>&, const PvmParams<float>&);
template Tensor<double> pvm(const Tensor<double>&, const PvmParams<double>&);
template Tensor<float> pvm_modulate(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> pvm_modulate(const Tensor<double>&,
                                     const Tensor<double>&);

}  // namespace prnet
