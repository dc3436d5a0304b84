#pragma once

// 8-bit image files: binary and ASCII PGM/PPM, plus PNG when built with
// libpng.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "prnet/metrics.hpp"

namespace prnet {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image8 {
  std::size_t width = 0, height = 0;
  std::size_t channels = 0;         // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved
};

// P2, P3, P5, P6. Maxval above 255 is rescaled to 8 bits.
Image8 decode_pnm(const std::vector<std::uint8_t>& bytes);
// P5 for one channel, P6 for three.
std::vector<std::uint8_t> encode_pnm(const Image8& img);

bool png_supported();

// Dispatches on the file signature.
Image8 read_image(const std::string& path);
void write_image(const std::string& path, const Image8& img);

// round(p * 255) with halves rounded up.
std::uint8_t quantize_unit(double p);
void write_saliency_pgm(const SaliencyMap& map, const std::string& path);

}  // namespace prnet
