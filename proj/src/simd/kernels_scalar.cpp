#include "prnet/simd.hpp"

namespace prnet::simd::scalar {

namespace {

template <typename T>
void axpy_impl(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
T sum_impl(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

}  // namespace

void axpy(float a, const float* x, float* y, std::size_t n) {
  axpy_impl(a, x, y, n);
}
void axpy(double a, const double* x, double* y, std::size_t n) {
  axpy_impl(a, x, y, n);
}
float dot(const float* x, const float* y, std::size_t n) {
  return dot_impl(x, y, n);
}
double dot(const double* x, const double* y, std::size_t n) {
  return dot_impl(x, y, n);
}
float sum(const float* x, std::size_t n) { return sum_impl(x, n); }
double sum(const double* x, std::size_t n) { return sum_impl(x, n); }

}  // namespace prnet::simd::scalar
