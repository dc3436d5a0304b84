#include "prnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#ifdef PRNET_HAVE_PNG
#include <png.h>
#endif

namespace prnet {

namespace {

class PnmCursor {
 public:
  explicit PnmCursor(const std::vector<std::uint8_t>& b) : buf(b) {}

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(buf[pos]))
      throw ImageError(std::string("PNM: expected ") + what + " at byte " +
                       std::to_string(pos));
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
      if (v > (1u << 30)) throw ImageError(std::string("PNM: ") + what + " too large");
      ++pos;
    }
    return v;
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

#ifdef PRNET_HAVE_PNG
Image8 decode_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw ImageError("PNG '" + path + "': " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageError("PNG '" + path + "': " + image.message);
  }
  return out;
}

void encode_png(const std::string& path, const Image8& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr))
    throw ImageError("PNG '" + path + "': " + image.message);
}
#endif

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t k = 0; k < suffix.size(); ++k)
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + k])) !=
        suffix[k])
      return false;
  return true;
}

}  // namespace

Image8 decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw ImageError("PNM: missing 'P' magic");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    throw ImageError(std::string("PNM: unsupported format P") + kind);
  PnmCursor c(bytes);
  c.pos = 2;
  Image8 img;
  img.width = c.number("width");
  img.height = c.number("height");
  const std::size_t maxval = c.number("maxval");
  if (img.width == 0 || img.height == 0)
    throw ImageError("PNM: empty image");
  if (maxval == 0 || maxval > 65535)
    throw ImageError("PNM: maxval " + std::to_string(maxval) + " out of range");
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  const std::size_t count = img.width * img.height * img.channels;
  img.pixels.resize(count);
  auto rescale = [&](std::size_t v) -> std::uint8_t {
    if (v > maxval) throw ImageError("PNM: sample exceeds maxval");
    if (maxval == 255) return static_cast<std::uint8_t>(v);
    return static_cast<std::uint8_t>(
        (v * 255 * 2 + maxval) / (2 * maxval));
  };
  if (kind == '2' || kind == '3') {
    for (std::size_t k = 0; k < count; ++k) img.pixels[k] = rescale(c.number("sample"));
    return img;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  if (c.pos >= bytes.size() || !std::isspace(bytes[c.pos]))
    throw ImageError("PNM: missing separator after maxval");
  ++c.pos;
  const std::size_t width = maxval > 255 ? 2 : 1;
  if (bytes.size() - c.pos < count * width)
    throw ImageError("PNM: raster truncated at byte " +
                     std::to_string(bytes.size()) + ", need " +
                     std::to_string(c.pos + count * width));
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t v = bytes[c.pos + k * width];
    if (width == 2) v = (v << 8) | bytes[c.pos + k * width + 1];
    img.pixels[k] = rescale(v);
  }
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ImageError("PNM: cannot encode " + std::to_string(img.channels) +
                     " channels");
  if (img.pixels.size() != img.width * img.height * img.channels)
    throw ImageError("PNM: pixel buffer does not match the extent");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") +
                             "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

bool png_supported() {
#ifdef PRNET_HAVE_PNG
  return true;
#else
  return false;
#endif
}

Image8 read_image(const std::string& path) {
  auto bytes = slurp(path);
  static const std::uint8_t kPng[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) {
#ifdef PRNET_HAVE_PNG
    return decode_png(path);
#else
    throw ImageError("'" + path + "' is PNG but PNG support is not built in");
#endif
  }
  try {
    return decode_pnm(bytes);
  } catch (const ImageError& e) {
    throw ImageError("'" + path + "': " + e.what());
  }
}

void write_image(const std::string& path, const Image8& img) {
  if (has_suffix(path, ".png")) {
#ifdef PRNET_HAVE_PNG
    encode_png(path, img);
    return;
#else
    throw ImageError("cannot write '" + path + "': PNG support is not built in");
#endif
  }
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed for '" + path + "'");
}

std::uint8_t quantize_unit(double p) {
  const double c = std::isnan(p) ? 0.0 : std::clamp(p, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

void write_saliency_pgm(const SaliencyMap& map, const std::string& path) {
  Image8 img;
  img.width = map.width;
  img.height = map.height;
  img.channels = 1;
  img.pixels.resize(map.size());
  for (std::size_t k = 0; k < map.size(); ++k)
    img.pixels[k] = quantize_unit(map.values[k]);
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed for '" + path + "'");
}

}  // namespace prnet
