#pragma once

// Inner-loop kernels shared by the tensor ops.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2
// variant selected at runtime from CPUID. axpy never fuses the multiply and
// add, so both variants are bit-identical. Reductions (dot, sum) reassociate
// in the vector variant; forcing Isa::Scalar gives the fixed left-to-right
// order used by gradient checking.

#include <cstddef>

namespace prnet::simd {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);
bool isa_supported(Isa isa);
// Best supported ISA unless overridden by force_isa().
Isa active_isa();
void force_isa(Isa isa);
// Clears any override.
void reset_isa();

class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  bool had_override_;
  Isa previous_;
};

// y[i] += a * x[i]
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
// sum x[i] * y[i]
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
// sum x[i]
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);

namespace scalar {
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define PRNET_HAVE_AVX2_KERNELS 1
namespace avx2 {
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2
#else
#define PRNET_HAVE_AVX2_KERNELS 0
#endif

}  // namespace prnet::simd
