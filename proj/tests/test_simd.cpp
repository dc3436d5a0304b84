#include <doctest.h>

#include "prnet/ops.hpp"
#include "prnet/simd.hpp"
#include "test_util.hpp"

using namespace prnet;

namespace {

template <typename T>
std::vector<T> draw(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

}  // namespace

#if PRNET_HAVE_AVX2_KERNELS
TEST_CASE_TEMPLATE("avx2 kernels agree with scalar", T, float, double) {
  if (!simd::isa_supported(simd::Isa::Avx2)) return;
  std::mt19937_64 rng(21);
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-12;
  for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 9u, 16u, 31u, 100u, 1027u}) {
    const auto x = draw<T>(n, rng), y0 = draw<T>(n, rng);
    auto ys = y0, yv = y0;
    simd::scalar::axpy(T(0.37), x.data(), ys.data(), n);
    simd::avx2::axpy(T(0.37), x.data(), yv.data(), n);
    CHECK(ys == yv);
    const double ds = simd::scalar::dot(x.data(), y0.data(), n);
    const double dv = simd::avx2::dot(x.data(), y0.data(), n);
    CHECK(std::abs(ds - dv) <= tol * (1.0 + std::abs(ds)));
    const double ss = simd::scalar::sum(x.data(), n);
    const double sv = simd::avx2::sum(x.data(), n);
    CHECK(std::abs(ss - sv) <= tol * (1.0 + std::abs(ss)));
  }
}
#endif

TEST_CASE("scoped isa restores the previous choice") {
  const auto before = simd::active_isa();
  {
    simd::ScopedIsa s(simd::Isa::Scalar);
    CHECK(simd::active_isa() == simd::Isa::Scalar);
  }
  CHECK(simd::active_isa() == before);
  CHECK(simd::isa_supported(simd::Isa::Scalar));
  CHECK(std::string(simd::isa_name(simd::Isa::Scalar)) == "scalar");
}

TEST_CASE("conv2d is the same under either isa") {
  if (!simd::isa_supported(simd::Isa::Avx2)) return;
  std::mt19937_64 rng(22);
  auto x = testutil::random<float>(Shape{2, 5, 11, 9}, rng, -1, 1, true);
  auto w = testutil::random<float>(Shape{6, 5, 3, 3}, rng, -1, 1, true);
  auto b = testutil::random<float>(Shape{6}, rng, -1, 1, true);
  std::vector<float> out[2], gx[2], gw[2];
  const simd::Isa isas[2] = {simd::Isa::Scalar, simd::Isa::Avx2};
  for (int k = 0; k < 2; ++k) {
    simd::ScopedIsa s(isas[k]);
    x.zero_grad();
    w.zero_grad();
    auto y = conv2d(x, w, b, {1, 2, 2});
    backward(sum_all(mul(y, y)));
    out[k] = testutil::vec(y);
    gx[k] = x.grad();
    gw[k] = w.grad();
  }
  CHECK(testutil::max_abs_diff(out[0], out[1]) < 1e-4);
  CHECK(testutil::max_abs_diff(gx[0], gx[1]) < 1e-3);
  CHECK(testutil::max_abs_diff(gw[0], gw[1]) < 1e-3);
}
