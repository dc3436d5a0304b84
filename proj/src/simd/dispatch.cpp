#include "prnet/simd.hpp"

#include <atomic>

namespace prnet::simd {

namespace {

Isa detect() {
#if PRNET_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

const Isa g_detected = detect();
std::atomic<int> g_override{-1};

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  return isa == Isa::Scalar || (isa == Isa::Avx2 && g_detected == Isa::Avx2);
}

Isa active_isa() {
  const int o = g_override.load(std::memory_order_relaxed);
  return o < 0 ? g_detected : static_cast<Isa>(o);
}

void force_isa(Isa isa) {
  if (!isa_supported(isa)) isa = Isa::Scalar;
  g_override.store(static_cast<int>(isa), std::memory_order_relaxed);
}

void reset_isa() { g_override.store(-1, std::memory_order_relaxed); }

ScopedIsa::ScopedIsa(Isa isa)
    : had_override_(g_override.load() >= 0), previous_(active_isa()) {
  force_isa(isa);
}

ScopedIsa::~ScopedIsa() {
  if (had_override_)
    force_isa(previous_);
  else
    reset_isa();
}

#if PRNET_HAVE_AVX2_KERNELS
#define PRNET_DISPATCH(call)                      \
  if (active_isa() == Isa::Avx2) return avx2::call; \
  return scalar::call
#else
#define PRNET_DISPATCH(call) return scalar::call
#endif

void axpy(float a, const float* x, float* y, std::size_t n) {
  PRNET_DISPATCH(axpy(a, x, y, n));
}
void axpy(double a, const double* x, double* y, std::size_t n) {
  PRNET_DISPATCH(axpy(a, x, y, n));
}
float dot(const float* x, const float* y, std::size_t n) {
  PRNET_DISPATCH(dot(x, y, n));
}
double dot(const double* x, const double* y, std::size_t n) {
  PRNET_DISPATCH(dot(x, y, n));
}
float sum(const float* x, std::size_t n) { PRNET_DISPATCH(sum(x, n)); }
double sum(const double* x, std::size_t n) { PRNET_DISPATCH(sum(x, n)); }

#undef PRNET_DISPATCH

}  // namespace prnet::simd
