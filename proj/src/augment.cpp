#include <algorithm>
#include <cmath>
#include <numbers>

#include "prnet/training.hpp"

namespace prnet {

AugmentDraw draw_augmentation(std::mt19937_64& rng, const TrainConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  // Every draw is taken regardless of the toggles so the stream stays aligned.
  const double f = unit(rng), a = unit(rng), b = unit(rng), c = unit(rng);
  if (cfg.flip) d.flip = f < 0.5;
  if (cfg.rotate) d.angle_deg = (2.0 * a - 1.0) * cfg.max_rotation_deg;
  if (cfg.jitter) {
    d.brightness = 1.0 + (2.0 * b - 1.0) * cfg.jitter_amount;
    d.contrast = 1.0 + (2.0 * c - 1.0) * cfg.jitter_amount;
  }
  return d;
}

namespace {

void flip_planes(std::vector<float>& v, std::size_t planes, std::size_t h,
                 std::size_t w) {
  for (std::size_t p = 0; p < planes * h; ++p)
    std::reverse(v.begin() + p * w, v.begin() + (p + 1) * w);
}

// Inverse mapping: output (y, x) samples the source at the position rotated
// by -angle about the centre.
void rotate(Sample& s, double angle_deg) {
  const std::size_t H = s.height, W = s.width;
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  std::vector<float> img(s.image.size(), 0.0f), mask(s.mask.size(), 0.0f);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sx = ct * dx + st * dy + cx;
      const double sy = -st * dx + ct * dy + cy;
      const long ny = std::lround(sy), nx = std::lround(sx);
      if (ny >= 0 && nx >= 0 && ny < static_cast<long>(H) &&
          nx < static_cast<long>(W))
        mask[y * W + x] = s.mask[static_cast<std::size_t>(ny) * W +
                                 static_cast<std::size_t>(nx)];
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double wy = sy - fy, wx = sx - fx;
      for (std::size_t c = 0; c < 3; ++c) {
        const float* src = s.image.data() + c * H * W;
        double acc = 0.0;
        for (int oy = 0; oy < 2; ++oy)
          for (int ox = 0; ox < 2; ++ox) {
            const long yy = static_cast<long>(fy) + oy;
            const long xx = static_cast<long>(fx) + ox;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) ||
                xx >= static_cast<long>(W))
              continue;
            const double wgt = (oy ? wy : 1.0 - wy) * (ox ? wx : 1.0 - wx);
            acc += wgt * src[static_cast<std::size_t>(yy) * W +
                             static_cast<std::size_t>(xx)];
          }
        img[c * H * W + y * W + x] = static_cast<float>(acc);
      }
    }
  s.image = std::move(img);
  s.mask = std::move(mask);
}

}  // namespace

void apply_augmentation(Sample& s, const AugmentDraw& d) {
  if (d.flip) {
    flip_planes(s.image, 3, s.height, s.width);
    flip_planes(s.mask, 1, s.height, s.width);
  }
  if (d.angle_deg != 0.0) rotate(s, d.angle_deg);
  if (d.contrast != 1.0 || d.brightness != 1.0) {
    double mean = 0.0;
    for (float v : s.image) mean += v;
    mean /= static_cast<double>(s.image.size());
    for (float& v : s.image) {
      const double out = ((v - mean) * d.contrast + mean) * d.brightness;
      v = static_cast<float>(std::clamp(out, 0.0, 1.0));
    }
  }
}

AugmentDraw augment_sample(Sample& sample, std::mt19937_64& rng,
                           const TrainConfig& cfg) {
  const AugmentDraw d = draw_augmentation(rng, cfg);
  apply_augmentation(sample, d);
  return d;
}

}  // namespace prnet
