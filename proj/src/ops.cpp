#include "prnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prnet/simd.hpp"

namespace prnet {

namespace {

using std::ptrdiff_t;
using std::size_t;

template <typename T>
using Node = TensorNode<T>;

// Gradient buffer of input k, or nullptr when that input takes no gradient.
template <typename T>
std::vector<T>* input_grad(Node<T>& self, size_t k) {
  auto& in = self.inputs[k];
  return (in && in->requires_grad) ? &in->ensure_grad() : nullptr;
}

void require_rank(const Shape& s, size_t rank, const char* op) {
  if (s.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + s.str());
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
}

// Output columns [lo, hi) whose input column ox*1 + offset lies in [0, width).
// Only used on stride-1 geometry.
inline void valid_span(ptrdiff_t offset, ptrdiff_t width, ptrdiff_t out_w,
                       ptrdiff_t& lo, ptrdiff_t& hi) {
  lo = std::max<ptrdiff_t>(0, -offset);
  hi = std::min<ptrdiff_t>(out_w, width - offset);
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

size_t conv_output_extent(size_t in, size_t kernel, const Conv2dOptions& opt) {
  if (opt.stride == 0 || opt.dilation == 0 || kernel == 0) return 0;
  const ptrdiff_t span = static_cast<ptrdiff_t>(opt.dilation * (kernel - 1) + 1);
  const ptrdiff_t padded = static_cast<ptrdiff_t>(in + 2 * opt.pad);
  if (padded < span) return 0;
  return static_cast<size_t>((padded - span) / static_cast<ptrdiff_t>(opt.stride)) + 1;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dOptions& opt) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  if (xs.c() != ws[1])
    throw ShapeError("conv2d: input has " + std::to_string(xs.c()) +
                     " channels but weight " + ws.str() + " expects " +
                     std::to_string(ws[1]));
  if (opt.dilation < 1 || opt.stride < 1)
    throw ShapeError("conv2d: stride and dilation must be >= 1");
  const size_t N = xs.n(), C = xs.c(), H = xs.h(), W = xs.w();
  const size_t O = ws[0], KH = ws[2], KW = ws[3];
  if (bias.defined() && bias.numel() != O)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) +
                     " values for " + std::to_string(O) + " output channels");
  const size_t OH = conv_output_extent(H, KH, opt);
  const size_t OW = conv_output_extent(W, KW, opt);
  if (OH == 0 || OW == 0)
    throw ShapeError("conv2d: non-positive output extent for input " +
                     xs.str() + " and kernel " + ws.str());

  const ptrdiff_t pad = static_cast<ptrdiff_t>(opt.pad);
  const ptrdiff_t dil = static_cast<ptrdiff_t>(opt.dilation);
  const ptrdiff_t stride = static_cast<ptrdiff_t>(opt.stride);

  std::vector<T> out(N * O * OH * OW);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (size_t n = 0; n < N; ++n) {
    for (size_t o = 0; o < O; ++o) {
      T* op = out.data() + (n * O + o) * OH * OW;
      std::fill(op, op + OH * OW, bias.defined() ? bias.data()[o] : T(0));
      for (size_t c = 0; c < C; ++c) {
        const T* xp = x + (n * C + c) * H * W;
        for (size_t ky = 0; ky < KH; ++ky) {
          for (size_t kx = 0; kx < KW; ++kx) {
            const T wv = w[((o * C + c) * KH + ky) * KW + kx];
            const ptrdiff_t xoff = static_cast<ptrdiff_t>(kx) * dil - pad;
            for (size_t oy = 0; oy < OH; ++oy) {
              const ptrdiff_t iy = static_cast<ptrdiff_t>(oy) * stride +
                                   static_cast<ptrdiff_t>(ky) * dil - pad;
              if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
              const T* xrow = xp + iy * static_cast<ptrdiff_t>(W);
              T* orow = op + oy * OW;
              if (stride == 1) {
                ptrdiff_t lo, hi;
                valid_span(xoff, W, OW, lo, hi);
                if (hi > lo)
                  simd::axpy(wv, xrow + lo + xoff, orow + lo,
                             static_cast<size_t>(hi - lo));
              } else {
                for (size_t ox = 0; ox < OW; ++ox) {
                  const ptrdiff_t ix = static_cast<ptrdiff_t>(ox) * stride + xoff;
                  if (ix >= 0 && ix < static_cast<ptrdiff_t>(W))
                    orow[ox] += wv * xrow[ix];
                }
              }
            }
          }
        }
      }
    }
  }

  auto bw = [=](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.inputs[0]->data.data();
    const T* wv = self.inputs[1]->data.data();
    if (auto* gx = input_grad(self, 0)) {
      for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
          T* gxp = gx->data() + (n * C + c) * H * W;
          for (size_t o = 0; o < O; ++o) {
            const T* gp = g + (n * O + o) * OH * OW;
            for (size_t ky = 0; ky < KH; ++ky) {
              for (size_t kx = 0; kx < KW; ++kx) {
                const T wk = wv[((o * C + c) * KH + ky) * KW + kx];
                const ptrdiff_t xoff = static_cast<ptrdiff_t>(kx) * dil - pad;
                for (size_t oy = 0; oy < OH; ++oy) {
                  const ptrdiff_t iy = static_cast<ptrdiff_t>(oy) * stride +
                                       static_cast<ptrdiff_t>(ky) * dil - pad;
                  if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                  T* gxrow = gxp + iy * static_cast<ptrdiff_t>(W);
                  const T* grow = gp + oy * OW;
                  if (stride == 1) {
                    ptrdiff_t lo, hi;
                    valid_span(xoff, W, OW, lo, hi);
                    if (hi > lo)
                      simd::axpy(wk, grow + lo, gxrow + lo + xoff,
                                 static_cast<size_t>(hi - lo));
                  } else {
                    for (size_t ox = 0; ox < OW; ++ox) {
                      const ptrdiff_t ix =
                          static_cast<ptrdiff_t>(ox) * stride + xoff;
                      if (ix >= 0 && ix < static_cast<ptrdiff_t>(W))
                        gxrow[ix] += wk * grow[ox];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
    if (auto* gw = input_grad(self, 1)) {
      for (size_t o = 0; o < O; ++o) {
        for (size_t c = 0; c < C; ++c) {
          for (size_t ky = 0; ky < KH; ++ky) {
            for (size_t kx = 0; kx < KW; ++kx) {
              const ptrdiff_t xoff = static_cast<ptrdiff_t>(kx) * dil - pad;
              T acc = 0;
              for (size_t n = 0; n < N; ++n) {
                const T* gp = g + (n * O + o) * OH * OW;
                const T* xp = xv + (n * C + c) * H * W;
                for (size_t oy = 0; oy < OH; ++oy) {
                  const ptrdiff_t iy = static_cast<ptrdiff_t>(oy) * stride +
                                       static_cast<ptrdiff_t>(ky) * dil - pad;
                  if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                  const T* xrow = xp + iy * static_cast<ptrdiff_t>(W);
                  const T* grow = gp + oy * OW;
                  if (stride == 1) {
                    ptrdiff_t lo, hi;
                    valid_span(xoff, W, OW, lo, hi);
                    if (hi > lo)
                      acc += simd::dot(grow + lo, xrow + lo + xoff,
                                       static_cast<size_t>(hi - lo));
                  } else {
                    for (size_t ox = 0; ox < OW; ++ox) {
                      const ptrdiff_t ix =
                          static_cast<ptrdiff_t>(ox) * stride + xoff;
                      if (ix >= 0 && ix < static_cast<ptrdiff_t>(W))
                        acc += grow[ox] * xrow[ix];
                    }
                  }
                }
              }
              (*gw)[((o * C + c) * KH + ky) * KW + kx] += acc;
            }
          }
        }
      }
    }
    if (self.inputs.size() > 2) {
      if (auto* gb = input_grad(self, 2)) {
        for (size_t o = 0; o < O; ++o) {
          T acc = 0;
          for (size_t n = 0; n < N; ++n)
            acc += simd::sum(g + (n * O + o) * OH * OW, OH * OW);
          (*gb)[o] += acc;
        }
      }
    }
  };
  return Tensor<T>::from_op(Shape{N, O, OH, OW}, std::move(out), "conv2d",
                            {input, weight, bias}, bw);
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, size_t kernel, size_t stride) {
  const Shape& s = input.shape();
  require_rank(s, 4, "max_pool2d");
  if (kernel == 0 || stride == 0 || kernel > s.h() || kernel > s.w())
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) +
                     " does not fit input " + s.str());
  const size_t N = s.n(), C = s.c(), H = s.h(), W = s.w();
  const size_t OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  std::vector<T> out(N * C * OH * OW);
  std::vector<size_t> arg(out.size());
  const T* x = input.data().data();
  BranchLog* log = BranchLog::active();
  if (log && log->mode() == BranchLog::Mode::Replay) {
    arg = log->next(arg.size());
    for (size_t o = 0; o < arg.size(); ++o) out[o] = x[arg[o]];
  } else {
    for (size_t p = 0; p < N * C; ++p) {
      const T* xp = x + p * H * W;
      for (size_t oy = 0; oy < OH; ++oy)
        for (size_t ox = 0; ox < OW; ++ox) {
          size_t best = (oy * stride) * W + ox * stride;
          for (size_t ky = 0; ky < kernel; ++ky)
            for (size_t kx = 0; kx < kernel; ++kx) {
              const size_t idx = (oy * stride + ky) * W + ox * stride + kx;
              if (xp[idx] > xp[best]) best = idx;
            }
          const size_t o = (p * OH + oy) * OW + ox;
          out[o] = xp[best];
          arg[o] = p * H * W + best;
        }
    }
    if (log) log->next(arg.size()) = arg;
  }
  auto bw = [arg = std::move(arg)](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t o = 0; o < arg.size(); ++o) (*gx)[arg[o]] += self.grad[o];
  };
  return Tensor<T>::from_op(Shape{N, C, OH, OW}, std::move(out), "max_pool2d",
                            {input}, bw);
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, size_t kernel, size_t stride) {
  const Shape& s = input.shape();
  require_rank(s, 4, "avg_pool2d");
  if (kernel == 0 || stride == 0 || kernel > s.h() || kernel > s.w())
    throw ShapeError("avg_pool2d: window " + std::to_string(kernel) +
                     " does not fit input " + s.str());
  const size_t N = s.n(), C = s.c(), H = s.h(), W = s.w();
  const size_t OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  std::vector<T> out(N * C * OH * OW);
  const T* x = input.data().data();
  for (size_t p = 0; p < N * C; ++p)
    for (size_t oy = 0; oy < OH; ++oy)
      for (size_t ox = 0; ox < OW; ++ox) {
        T acc = 0;
        for (size_t ky = 0; ky < kernel; ++ky)
          for (size_t kx = 0; kx < kernel; ++kx)
            acc += x[p * H * W + (oy * stride + ky) * W + ox * stride + kx];
        out[(p * OH + oy) * OW + ox] = acc * inv;
      }
  auto bw = [=](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t p = 0; p < N * C; ++p)
        for (size_t oy = 0; oy < OH; ++oy)
          for (size_t ox = 0; ox < OW; ++ox) {
            const T g = self.grad[(p * OH + oy) * OW + ox] * inv;
            for (size_t ky = 0; ky < kernel; ++ky)
              for (size_t kx = 0; kx < kernel; ++kx)
                (*gx)[p * H * W + (oy * stride + ky) * W + ox * stride + kx] += g;
          }
  };
  return Tensor<T>::from_op(Shape{N, C, OH, OW}, std::move(out), "avg_pool2d",
                            {input}, bw);
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  const Shape& s = input.shape();
  require_rank(s, 4, "global_avg_pool");
  const size_t N = s.n(), C = s.c(), HW = s.h() * s.w();
  if (HW == 0) throw ShapeError("global_avg_pool: empty plane");
  std::vector<T> out(N * C);
  const T* x = input.data().data();
  for (size_t p = 0; p < N * C; ++p)
    out[p] = simd::sum(x + p * HW, HW) / static_cast<T>(HW);
  auto bw = [=](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t p = 0; p < N * C; ++p) {
        const T g = self.grad[p] / static_cast<T>(HW);
        for (size_t i = 0; i < HW; ++i) (*gx)[p * HW + i] += g;
      }
  };
  return Tensor<T>::from_op(Shape{N, C, 1, 1}, std::move(out),
                            "global_avg_pool", {input}, bw);
}

template <typename T>
Tensor<T> adaptive_max_pool(const Tensor<T>& input, size_t out_h,
                            size_t out_w) {
  const Shape& s = input.shape();
  require_rank(s, 4, "adaptive_max_pool");
  const size_t N = s.n(), C = s.c(), H = s.h(), W = s.w();
  if (out_h == 0 || out_w == 0 || H == 0 || W == 0)
    throw ShapeError("adaptive_max_pool: zero-sized window for input " +
                     s.str());
  if (out_h > H || out_w > W)
    throw ShapeError("adaptive_max_pool: target " + std::to_string(out_h) +
                     "x" + std::to_string(out_w) + " exceeds input " + s.str());
  auto lo = [](size_t i, size_t L, size_t O) { return (i * L) / O; };
  auto hi = [](size_t i, size_t L, size_t O) { return ((i + 1) * L + O - 1) / O; };
  std::vector<T> out(N * C * out_h * out_w);
  std::vector<size_t> arg(out.size());
  const T* x = input.data().data();
  BranchLog* log = BranchLog::active();
  if (log && log->mode() == BranchLog::Mode::Replay) {
    arg = log->next(arg.size());
    for (size_t o = 0; o < arg.size(); ++o) out[o] = x[arg[o]];
  } else {
    for (size_t p = 0; p < N * C; ++p)
      for (size_t oy = 0; oy < out_h; ++oy)
        for (size_t ox = 0; ox < out_w; ++ox) {
          const size_t y0 = lo(oy, H, out_h), y1 = hi(oy, H, out_h);
          const size_t x0 = lo(ox, W, out_w), x1 = hi(ox, W, out_w);
          size_t best = p * H * W + y0 * W + x0;
          for (size_t y = y0; y < y1; ++y)
            for (size_t xx = x0; xx < x1; ++xx) {
              const size_t idx = p * H * W + y * W + xx;
              if (x[idx] > x[best]) best = idx;
            }
          const size_t o = (p * out_h + oy) * out_w + ox;
          out[o] = x[best];
          arg[o] = best;
        }
    if (log) log->next(arg.size()) = arg;
  }
  auto bw = [arg = std::move(arg)](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t o = 0; o < arg.size(); ++o) (*gx)[arg[o]] += self.grad[o];
  };
  return Tensor<T>::from_op(Shape{N, C, out_h, out_w}, std::move(out),
                            "adaptive_max_pool", {input}, bw);
}

// ---------------------------------------------------------------------------
// Resize

namespace {

struct Lerp {
  size_t i0, i1;
  double frac;
};

std::vector<Lerp> bilinear_axis(size_t in, size_t out) {
  std::vector<Lerp> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    size_t i0 = static_cast<size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const size_t i1 = i0 + 1 < in ? i0 + 1 : i0;
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, size_t out_h, size_t out_w) {
  const Shape& s = input.shape();
  require_rank(s, 4, "resize_bilinear");
  if (out_h == 0 || out_w == 0 || s.h() == 0 || s.w() == 0)
    throw ShapeError("resize_bilinear: extents must be >= 1");
  const size_t N = s.n(), C = s.c(), H = s.h(), W = s.w();
  if (H == out_h && W == out_w) {
    auto bw = [](Node<T>& self) {
      if (auto* gx = input_grad(self, 0))
        simd::axpy(T(1), self.grad.data(), gx->data(), gx->size());
    };
    return Tensor<T>::from_op(s, std::vector<T>(input.data().begin(), input.data().end()),
                              "resize_bilinear", {input}, bw);
  }
  auto ty = bilinear_axis(H, out_h);
  auto tx = bilinear_axis(W, out_w);
  std::vector<T> out(N * C * out_h * out_w);
  const T* x = input.data().data();
  for (size_t p = 0; p < N * C; ++p) {
    const T* xp = x + p * H * W;
    for (size_t oy = 0; oy < out_h; ++oy) {
      const Lerp& a = ty[oy];
      const T fy = static_cast<T>(a.frac);
      for (size_t ox = 0; ox < out_w; ++ox) {
        const Lerp& b = tx[ox];
        const T fx = static_cast<T>(b.frac);
        const T v00 = xp[a.i0 * W + b.i0], v01 = xp[a.i0 * W + b.i1];
        const T v10 = xp[a.i1 * W + b.i0], v11 = xp[a.i1 * W + b.i1];
        const T top = v00 + fx * (v01 - v00);
        const T bot = v10 + fx * (v11 - v10);
        out[(p * out_h + oy) * out_w + ox] = top + fy * (bot - top);
      }
    }
  }
  auto bw = [=](Node<T>& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (size_t p = 0; p < N * C; ++p) {
      T* gp = gx->data() + p * H * W;
      for (size_t oy = 0; oy < out_h; ++oy) {
        const Lerp& a = ty[oy];
        const T fy = static_cast<T>(a.frac);
        for (size_t ox = 0; ox < out_w; ++ox) {
          const Lerp& b = tx[ox];
          const T fx = static_cast<T>(b.frac);
          const T g = self.grad[(p * out_h + oy) * out_w + ox];
          const T gt = g * (T(1) - fy), gb = g * fy;
          gp[a.i0 * W + b.i0] += gt * (T(1) - fx);
          gp[a.i0 * W + b.i1] += gt * fx;
          gp[a.i1 * W + b.i0] += gb * (T(1) - fx);
          gp[a.i1 * W + b.i1] += gb * fx;
        }
      }
    }
  };
  return Tensor<T>::from_op(Shape{N, C, out_h, out_w}, std::move(out),
                            "resize_bilinear", {input}, bw);
}

// ---------------------------------------------------------------------------
// Affine

template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "affine input");
  require_rank(weight.shape(), 2, "affine weight");
  const size_t N = input.shape()[0], D = input.shape()[1];
  const size_t M = weight.shape()[1];
  if (weight.shape()[0] != D)
    throw ShapeError("affine: input " + input.shape().str() +
                     " incompatible with weight " + weight.shape().str());
  if (bias.defined() && bias.numel() != M)
    throw ShapeError("affine: bias " + bias.shape().str() + " for width " +
                     std::to_string(M));
  std::vector<T> out(N * M, T(0));
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (size_t n = 0; n < N; ++n) {
    T* row = out.data() + n * M;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), row);
    for (size_t d = 0; d < D; ++d) simd::axpy(x[n * D + d], w + d * M, row, M);
  }
  auto bw = [=](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.inputs[0]->data.data();
    const T* wv = self.inputs[1]->data.data();
    if (auto* gx = input_grad(self, 0))
      for (size_t n = 0; n < N; ++n)
        for (size_t d = 0; d < D; ++d)
          (*gx)[n * D + d] += simd::dot(g + n * M, wv + d * M, M);
    if (auto* gw = input_grad(self, 1))
      for (size_t n = 0; n < N; ++n)
        for (size_t d = 0; d < D; ++d)
          simd::axpy(xv[n * D + d], g + n * M, gw->data() + d * M, M);
    if (self.inputs.size() > 2)
      if (auto* gb = input_grad(self, 2))
        for (size_t n = 0; n < N; ++n)
          simd::axpy(T(1), g + n * M, gb->data(), M);
  };
  return Tensor<T>::from_op(Shape{N, M}, std::move(out), "affine",
                            {input, weight, bias}, bw);
}

// ---------------------------------------------------------------------------
// Pointwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  BranchLog* log = BranchLog::active();
  if (log && log->mode() == BranchLog::Mode::Replay) {
    const auto& on = log->next(out.size());
    for (size_t i = 0; i < out.size(); ++i)
      if (!on[i]) out[i] = T(0);
  } else {
    for (auto& v : out) v = v > T(0) ? v : T(0);
    if (log) {
      auto& on = log->next(out.size());
      for (size_t i = 0; i < out.size(); ++i) on[i] = out[i] > T(0);
    }
  }
  auto bw = [](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t i = 0; i < self.data.size(); ++i)
        if (self.data[i] > T(0)) (*gx)[i] += self.grad[i];
  };
  return Tensor<T>::from_op(x.shape(), std::move(out), "relu", {x}, bw);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x.data()[i]);
  auto bw = [](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      for (size_t i = 0; i < self.data.size(); ++i) {
        const T s = self.data[i];
        (*gx)[i] += self.grad[i] * s * (T(1) - s);
      }
  };
  return Tensor<T>::from_op(x.shape(), std::move(out), "sigmoid", {x}, bw);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  simd::axpy(T(1), b.data().data(), out.data(), out.size());
  auto bw = [](Node<T>& self) {
    for (size_t k = 0; k < 2; ++k)
      if (auto* g = input_grad(self, k))
        simd::axpy(T(1), self.grad.data(), g->data(), g->size());
  };
  return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b}, bw);
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("add_n: no inputs");
  for (const auto& p : parts) require_same(parts[0].shape(), p.shape(), "add_n");
  std::vector<T> out(parts[0].data().begin(), parts[0].data().end());
  for (size_t k = 1; k < parts.size(); ++k)
    simd::axpy(T(1), parts[k].data().data(), out.data(), out.size());
  auto bw = [](Node<T>& self) {
    for (size_t k = 0; k < self.inputs.size(); ++k)
      if (auto* g = input_grad(self, k))
        simd::axpy(T(1), self.grad.data(), g->data(), g->size());
  };
  return Tensor<T>::from_op(parts[0].shape(), std::move(out), "add_n", parts,
                            bw);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto bw = [](Node<T>& self) {
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (auto* ga = input_grad(self, 0))
      for (size_t i = 0; i < av.size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (auto* gb = input_grad(self, 1))
      for (size_t i = 0; i < bv.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  };
  return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b}, bw);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  auto bw = [factor](Node<T>& self) {
    if (auto* gx = input_grad(self, 0))
      simd::axpy(factor, self.grad.data(), gx->data(), gx->size());
  };
  return Tensor<T>::from_op(x.shape(), std::move(out), "scale", {x}, bw);
}

template <typename T>
Tensor<T> scale_per_sample(const Tensor<T>& x, const Tensor<T>& w) {
  const size_t N = x.shape()[0];
  if (w.numel() != N)
    throw ShapeError("scale_per_sample: " + std::to_string(w.numel()) +
                     " weights for batch of " + std::to_string(N));
  const size_t per = x.numel() / std::max<size_t>(N, 1);
  std::vector<T> out(x.numel());
  for (size_t n = 0; n < N; ++n) {
    const T s = w.data()[n];
    for (size_t i = 0; i < per; ++i) out[n * per + i] = s * x.data()[n * per + i];
  }
  auto bw = [N, per](Node<T>& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& wv = self.inputs[1]->data;
    if (auto* gx = input_grad(self, 0))
      for (size_t n = 0; n < N; ++n)
        simd::axpy(wv[n], self.grad.data() + n * per, gx->data() + n * per, per);
    if (auto* gw = input_grad(self, 1))
      for (size_t n = 0; n < N; ++n)
        (*gw)[n] += simd::dot(self.grad.data() + n * per, xv.data() + n * per, per);
  };
  return Tensor<T>::from_op(x.shape(), std::move(out), "scale_per_sample",
                            {x, w}, bw);
}

template <typename T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& x, const Tensor<T>& map) {
  const Shape& s = x.shape();
  require_rank(s, 4, "mul_channel_broadcast");
  const Shape& ms = map.shape();
  if (ms.rank() != 4 || ms.n() != s.n() || ms.c() != 1 || ms.h() != s.h() ||
      ms.w() != s.w())
    throw ShapeError("mul_channel_broadcast: map " + ms.str() +
                     " does not match feature " + s.str());
  const size_t N = s.n(), C = s.c(), HW = s.h() * s.w();
  std::vector<T> out(x.numel());
  for (size_t n = 0; n < N; ++n)
    for (size_t c = 0; c < C; ++c)
      for (size_t i = 0; i < HW; ++i)
        out[(n * C + c) * HW + i] =
            x.data()[(n * C + c) * HW + i] * map.data()[n * HW + i];
  auto bw = [N, C, HW](Node<T>& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& mv = self.inputs[1]->data;
    auto* gx = input_grad(self, 0);
    auto* gm = input_grad(self, 1);
    for (size_t n = 0; n < N; ++n)
      for (size_t c = 0; c < C; ++c)
        for (size_t i = 0; i < HW; ++i) {
          const size_t k = (n * C + c) * HW + i;
          if (gx) (*gx)[k] += self.grad[k] * mv[n * HW + i];
          if (gm) (*gm)[n * HW + i] += self.grad[k] * xv[k];
        }
  };
  return Tensor<T>::from_op(s, std::move(out), "mul_channel_broadcast",
                            {x, map}, bw);
}

// ---------------------------------------------------------------------------
// Softmax

template <typename T>
std::vector<T> softmax_vec(const std::vector<T>& x) {
  if (x.empty()) return {};
  const T m = *std::max_element(x.begin(), x.end());
  std::vector<T> out(x.size());
  T total = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const Shape& s = x.shape();
  size_t N = 1, K = x.numel();
  if (s.rank() == 2) {
    N = s[0];
    K = s[1];
  } else if (s.rank() != 1) {
    throw ShapeError("softmax_rows: expected rank 1 or 2, got " + s.str());
  }
  std::vector<T> out(x.numel());
  for (size_t n = 0; n < N; ++n) {
    std::vector<T> row(x.data().begin() + n * K, x.data().begin() + (n + 1) * K);
    auto sm = softmax_vec(row);
    std::copy(sm.begin(), sm.end(), out.begin() + n * K);
  }
  auto bw = [N, K](Node<T>& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (size_t n = 0; n < N; ++n) {
      const T* y = self.data.data() + n * K;
      const T* g = self.grad.data() + n * K;
      T inner = 0;
      for (size_t k = 0; k < K; ++k) inner += g[k] * y[k];
      for (size_t k = 0; k < K; ++k) (*gx)[n * K + k] += y[k] * (g[k] - inner);
    }
  };
  return Tensor<T>::from_op(s, std::move(out), "softmax_rows", {x}, bw);
}

// ---------------------------------------------------------------------------
// Channel and quadrant rearrangement

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  require_rank(s0, 4, "concat_channels");
  size_t C = 0;
  std::vector<size_t> offsets;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require_rank(s, 4, "concat_channels");
    if (s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w())
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " +
                       s0.str());
    offsets.push_back(C);
    C += s.c();
  }
  const size_t N = s0.n(), HW = s0.h() * s0.w();
  std::vector<T> out(N * C * HW);
  for (size_t k = 0; k < parts.size(); ++k) {
    const size_t ck = parts[k].shape().c();
    for (size_t n = 0; n < N; ++n)
      std::copy_n(parts[k].data().begin() + n * ck * HW, ck * HW,
                  out.begin() + (n * C + offsets[k]) * HW);
  }
  auto bw = [N, C, HW, offsets](Node<T>& self) {
    for (size_t k = 0; k < self.inputs.size(); ++k) {
      auto* g = input_grad(self, k);
      if (!g) continue;
      const size_t ck = self.inputs[k]->shape.c();
      for (size_t n = 0; n < N; ++n)
        simd::axpy(T(1), self.grad.data() + (n * C + offsets[k]) * HW,
                   g->data() + n * ck * HW, ck * HW);
    }
  };
  return Tensor<T>::from_op(Shape{N, C, s0.h(), s0.w()}, std::move(out),
                            "concat_channels", parts, bw);
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, size_t begin, size_t count) {
  const Shape& s = x.shape();
  require_rank(s, 4, "slice_channels");
  if (begin + count > s.c() || count == 0)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + s.str());
  const size_t N = s.n(), C = s.c(), HW = s.h() * s.w();
  std::vector<T> out(N * count * HW);
  for (size_t n = 0; n < N; ++n)
    std::copy_n(x.data().begin() + (n * C + begin) * HW, count * HW,
                out.begin() + n * count * HW);
  auto bw = [=](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (size_t n = 0; n < N; ++n)
        simd::axpy(T(1), self.grad.data() + n * count * HW,
                   g->data() + (n * C + begin) * HW, count * HW);
  };
  return Tensor<T>::from_op(Shape{N, count, s.h(), s.w()}, std::move(out),
                            "slice_channels", {x}, bw);
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, size_t parts) {
  const size_t C = x.shape().c();
  if (parts == 0 || C % parts != 0)
    throw ShapeError("split_channels: " + std::to_string(C) +
                     " channels not divisible into " + std::to_string(parts));
  std::vector<Tensor<T>> out;
  for (size_t k = 0; k < parts; ++k)
    out.push_back(slice_channels(x, k * (C / parts), C / parts));
  return out;
}

template <typename T>
std::array<Tensor<T>, 4> quadrant_split(const Tensor<T>& x) {
  const Shape& s = x.shape();
  require_rank(s, 4, "quadrant_split");
  if (s.h() % 2 != 0 || s.w() % 2 != 0 || s.h() == 0 || s.w() == 0)
    throw ShapeError("quadrant_split: odd spatial extent " + s.str());
  const size_t N = s.n(), C = s.c(), H = s.h(), W = s.w();
  const size_t h = H / 2, w = W / 2;
  std::array<Tensor<T>, 4> out;
  for (size_t q = 0; q < 4; ++q) {
    const size_t y0 = (q / 2) * h, x0 = (q % 2) * w;
    std::vector<T> part(N * C * h * w);
    for (size_t p = 0; p < N * C; ++p)
      for (size_t y = 0; y < h; ++y)
        std::copy_n(x.data().begin() + p * H * W + (y0 + y) * W + x0, w,
                    part.begin() + (p * h + y) * w);
    auto bw = [=](Node<T>& self) {
      if (auto* g = input_grad(self, 0))
        for (size_t p = 0; p < N * C; ++p)
          for (size_t y = 0; y < h; ++y)
            simd::axpy(T(1), self.grad.data() + (p * h + y) * w,
                       g->data() + p * H * W + (y0 + y) * W + x0, w);
    };
    out[q] = Tensor<T>::from_op(Shape{N, C, h, w}, std::move(part),
                                "quadrant_split", {x}, bw);
  }
  return out;
}

template <typename T>
Tensor<T> quadrant_merge(const std::array<Tensor<T>, 4>& parts) {
  const Shape& s = parts[0].shape();
  require_rank(s, 4, "quadrant_merge");
  for (const auto& p : parts) require_same(s, p.shape(), "quadrant_merge");
  const size_t N = s.n(), C = s.c(), h = s.h(), w = s.w();
  const size_t H = 2 * h, W = 2 * w;
  std::vector<T> out(N * C * H * W);
  for (size_t q = 0; q < 4; ++q) {
    const size_t y0 = (q / 2) * h, x0 = (q % 2) * w;
    for (size_t p = 0; p < N * C; ++p)
      for (size_t y = 0; y < h; ++y)
        std::copy_n(parts[q].data().begin() + (p * h + y) * w, w,
                    out.begin() + p * H * W + (y0 + y) * W + x0);
  }
  auto bw = [=](Node<T>& self) {
    for (size_t q = 0; q < 4; ++q) {
      auto* g = input_grad(self, q);
      if (!g) continue;
      const size_t y0 = (q / 2) * h, x0 = (q % 2) * w;
      for (size_t p = 0; p < N * C; ++p)
        for (size_t y = 0; y < h; ++y)
          simd::axpy(T(1), self.grad.data() + p * H * W + (y0 + y) * W + x0,
                     g->data() + (p * h + y) * w, w);
    }
  };
  return Tensor<T>::from_op(Shape{N, C, H, W}, std::move(out),
                            "quadrant_merge",
                            {parts[0], parts[1], parts[2], parts[3]}, bw);
}

// ---------------------------------------------------------------------------
// Reshaping and reductions

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel())
    throw ShapeError("reshape: " + x.shape().str() + " -> " + shape.str());
  auto bw = [](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      simd::axpy(T(1), self.grad.data(), g->data(), g->size());
  };
  return Tensor<T>::from_op(std::move(shape),
                            std::vector<T>(x.data().begin(), x.data().end()),
                            "reshape", {x}, bw);
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  const size_t N = x.shape()[0];
  return reshape(x, Shape{N, x.numel() / std::max<size_t>(N, 1)});
}

template <typename T>
Tensor<T> select_column(const Tensor<T>& x, size_t k) {
  require_rank(x.shape(), 2, "select_column");
  const size_t N = x.shape()[0], K = x.shape()[1];
  if (k >= K)
    throw ShapeError("select_column: column " + std::to_string(k) +
                     " outside " + x.shape().str());
  std::vector<T> out(N);
  for (size_t n = 0; n < N; ++n) out[n] = x.data()[n * K + k];
  auto bw = [N, K, k](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (size_t n = 0; n < N; ++n) (*g)[n * K + k] += self.grad[n];
  };
  return Tensor<T>::from_op(Shape{N, 1}, std::move(out), "select_column", {x},
                            bw);
}

template <typename T>
Tensor<T> row_mean(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "row_mean");
  const size_t N = x.shape()[0], K = x.shape()[1];
  if (K == 0) throw ShapeError("row_mean: empty rows");
  std::vector<T> out(N);
  for (size_t n = 0; n < N; ++n)
    out[n] = simd::sum(x.data().data() + n * K, K) / static_cast<T>(K);
  auto bw = [N, K](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (size_t n = 0; n < N; ++n)
        for (size_t k = 0; k < K; ++k)
          (*g)[n * K + k] += self.grad[n] / static_cast<T>(K);
  };
  return Tensor<T>::from_op(Shape{N, 1}, std::move(out), "row_mean", {x}, bw);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<T> out{simd::sum(x.data().data(), x.numel())};
  auto bw = [](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  };
  return Tensor<T>::from_op(Shape{1}, std::move(out), "sum_all", {x}, bw);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  std::vector<T> out{simd::sum(x.data().data(), x.numel()) / n};
  auto bw = [n](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (auto& v : *g) v += self.grad[0] / n;
  };
  return Tensor<T>::from_op(Shape{1}, std::move(out), "mean_all", {x}, bw);
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
  const Shape& s = x.shape();
  require_rank(s, 4, "flip_horizontal");
  const size_t rows = s.n() * s.c() * s.h(), W = s.w();
  std::vector<T> out(x.numel());
  for (size_t r = 0; r < rows; ++r)
    for (size_t i = 0; i < W; ++i) out[r * W + i] = x.data()[r * W + W - 1 - i];
  auto bw = [rows, W](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (size_t r = 0; r < rows; ++r)
        for (size_t i = 0; i < W; ++i)
          (*g)[r * W + W - 1 - i] += self.grad[r * W + i];
  };
  return Tensor<T>::from_op(s, std::move(out), "flip_horizontal", {x}, bw);
}

// ---------------------------------------------------------------------------
// Batch normalisation

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     NormMode mode) {
  const Shape& s = x.shape();
  require_rank(s, 4, "batch_norm");
  const size_t N = s.n(), C = s.c(), HW = s.h() * s.w();
  if (gamma.numel() != C || beta.numel() != C ||
      state.running_mean.size() != C || state.running_var.size() != C)
    throw ShapeError("batch_norm: parameter width does not match " + s.str());
  if (mode == NormMode::Train && N < 2)
    throw ShapeError("batch_norm: train mode needs a batch of at least 2, got " +
                     std::to_string(N));

  const T* xv = x.data().data();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  const T M = static_cast<T>(N * HW);
  for (size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == NormMode::Train) {
      T acc = 0;
      for (size_t n = 0; n < N; ++n) acc += simd::sum(xv + (n * C + c) * HW, HW);
      mean = acc / M;
      T sq = 0;
      for (size_t n = 0; n < N; ++n)
        for (size_t i = 0; i < HW; ++i) {
          const T d = xv[(n * C + c) * HW + i] - mean;
          sq += d * d;
        }
      var = sq / M;
      const T unbiased = M > 1 ? sq / (M - 1) : var;
      state.running_mean[c] =
          (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] =
          (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var + state.eps);
    const T g = gamma.data()[c], b = beta.data()[c];
    for (size_t n = 0; n < N; ++n)
      for (size_t i = 0; i < HW; ++i) {
        const size_t k = (n * C + c) * HW + i;
        xhat[k] = (xv[k] - mean) * inv_std[c];
        out[k] = g * xhat[k] + b;
      }
  }

  const bool train = mode == NormMode::Train;
  auto bw = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                Node<T>& self) {
    const T* g = self.grad.data();
    const T* gam = self.inputs[1]->data.data();
    auto* gx = input_grad(self, 0);
    auto* gg = input_grad(self, 1);
    auto* gb = input_grad(self, 2);
    for (size_t c = 0; c < C; ++c) {
      T sum_g = 0, sum_gx = 0;
      for (size_t n = 0; n < N; ++n)
        for (size_t i = 0; i < HW; ++i) {
          const size_t k = (n * C + c) * HW + i;
          sum_g += g[k];
          sum_gx += g[k] * xhat[k];
        }
      if (gg) (*gg)[c] += sum_gx;
      if (gb) (*gb)[c] += sum_g;
      if (!gx) continue;
      const T scale_c = gam[c] * inv_std[c];
      for (size_t n = 0; n < N; ++n)
        for (size_t i = 0; i < HW; ++i) {
          const size_t k = (n * C + c) * HW + i;
          if (train)
            (*gx)[k] += scale_c * (g[k] - sum_g / M - xhat[k] * sum_gx / M);
          else
            (*gx)[k] += scale_c * g[k];
        }
    }
  };
  return Tensor<T>::from_op(s, std::move(out), "batch_norm", {x, gamma, beta},
                            bw);
}

// ---------------------------------------------------------------------------

#define PRNET_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                \
                            const Tensor<T>&, const Conv2dOptions&);           \
  template Tensor<T> max_pool2d(const Tensor<T>&, size_t, size_t);             \
  template Tensor<T> avg_pool2d(const Tensor<T>&, size_t, size_t);             \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                        \
  template Tensor<T> adaptive_max_pool(const Tensor<T>&, size_t, size_t);      \
  template Tensor<T> resize_bilinear(const Tensor<T>&, size_t, size_t);        \
  template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&,                \
                            const Tensor<T>&);                                 \
  template Tensor<T> relu(const Tensor<T>&);                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> add_n(const std::vector<Tensor<T>>&);                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale(const Tensor<T>&, T);                               \
  template Tensor<T> scale_per_sample(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> mul_channel_broadcast(const Tensor<T>&,                   \
                                           const Tensor<T>&);                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                           \
  template std::vector<T> softmax_vec(const std::vector<T>&);                  \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);           \
  template Tensor<T> slice_channels(const Tensor<T>&, size_t, size_t);         \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, size_t);    \
  template std::array<Tensor<T>, 4> quadrant_split(const Tensor<T>&);          \
  template Tensor<T> quadrant_merge(const std::array<Tensor<T>, 4>&);          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                         \
  template Tensor<T> flatten(const Tensor<T>&);                                \
  template Tensor<T> select_column(const Tensor<T>&, size_t);                  \
  template Tensor<T> row_mean(const Tensor<T>&);                               \
  template Tensor<T> sum_all(const Tensor<T>&);                                \
  template Tensor<T> mean_all(const Tensor<T>&);                               \
  template Tensor<T> flip_horizontal(const Tensor<T>&);                        \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&,            \
                                const Tensor<T>&, BatchNormState<T>&,          \
                                NormMode);

PRNET_INSTANTIATE_OPS(float)
PRNET_INSTANTIATE_OPS(double)

#undef PRNET_INSTANTIATE_OPS

}  // namespace prnet
