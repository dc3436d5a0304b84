#include "prnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "prnet/image_io.hpp"
#include "prnet/ops.hpp"

namespace prnet {

namespace fs = std::filesystem;

namespace {

bool supported_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return true;
  return ext == ".png" && png_supported();
}

// Single-channel [0, 1] view; colour is averaged.
std::vector<double> to_gray(const Image8& img) {
  std::vector<double> out(img.width * img.height);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (img.channels == 1) {
      out[k] = img.pixels[k] / 255.0;
    } else {
      const std::uint8_t* px = &img.pixels[k * 3];
      out[k] = (px[0] + px[1] + px[2]) / (3.0 * 255.0);
    }
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> list_images(
    const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("'" + dir + "' is not a directory");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !supported_extension(entry.path())) continue;
    out.emplace_back(entry.path().stem().string(), entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetIndex load_pairs(const std::string& image_dir,
                        const std::string& mask_dir) {
  const auto images = list_images(image_dir);
  const auto masks = list_images(mask_dir);
  std::map<std::string, std::string> mask_by_id;
  DatasetIndex index;
  for (const auto& [id, path] : masks)
    if (!mask_by_id.emplace(id, path).second) index.orphans.push_back(path);
  std::map<std::string, bool> used;
  for (const auto& [id, path] : images) {
    auto it = mask_by_id.find(id);
    if (it == mask_by_id.end() || used[id]) {
      index.orphans.push_back(path);
      continue;
    }
    used[id] = true;
    index.records.push_back({id, path, it->second});
  }
  for (const auto& [id, path] : mask_by_id)
    if (!used[id]) index.orphans.push_back(path);
  if (index.records.empty())
    throw std::runtime_error("no pairs between '" + image_dir + "' and '" +
                             mask_dir + "'");
  return index;
}

std::vector<float> resize_planes(const std::vector<float>& src,
                                 std::size_t channels, std::size_t h,
                                 std::size_t w, std::size_t out_h,
                                 std::size_t out_w) {
  NoGradGuard guard;
  Tensor<float> t(Shape{1, channels, h, w}, src);
  auto r = resize_bilinear(t, out_h, out_w);
  return {r.data().begin(), r.data().end()};
}

std::vector<float> resize_nearest(const std::vector<float>& src, std::size_t h,
                                  std::size_t w, std::size_t out_h,
                                  std::size_t out_w) {
  std::vector<float> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * out_w));
      out[y * out_w + x] = src[sy * w + sx];
    }
  }
  return out;
}

std::vector<double> read_mask(const std::string& path, std::size_t& height,
                              std::size_t& width) {
  const Image8 img = read_image(path);
  height = img.height;
  width = img.width;
  std::vector<double> out(img.width * img.height);
  for (std::size_t k = 0; k < out.size(); ++k) {
    // A colour mask counts as foreground where its first channel is set.
    const std::uint8_t v = img.pixels[k * img.channels];
    out[k] = v >= 128 ? 1.0 : 0.0;
  }
  return out;
}

std::vector<double> read_saliency(const std::string& path, std::size_t& height,
                                  std::size_t& width) {
  const Image8 img = read_image(path);
  height = img.height;
  width = img.width;
  return to_gray(img);
}

Sample load_image_sample(const std::string& id, const std::string& path,
                         std::size_t size) {
  const Image8 img = read_image(path);
  Sample s;
  s.id = id;
  s.height = img.height;
  s.width = img.width;
  const std::size_t plane = img.width * img.height;
  s.image.resize(3 * plane);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < plane; ++k) {
      const std::size_t src = img.channels == 1 ? k : k * 3 + c;
      s.image[c * plane + k] = static_cast<float>(img.pixels[src] / 255.0);
    }
  s.mask.assign(plane, 0.0f);
  if (size != 0 && (size != s.height || size != s.width)) {
    s.image = resize_planes(s.image, 3, s.height, s.width, size, size);
    s.mask.assign(size * size, 0.0f);
    s.height = s.width = size;
  }
  return s;
}

Sample load_sample(const DatasetRecord& record, std::size_t size) {
  Sample s = load_image_sample(record.id, record.image_path, 0);
  std::size_t mh, mw;
  const auto mask = read_mask(record.mask_path, mh, mw);
  if (mh != s.height || mw != s.width)
    throw std::runtime_error("'" + record.id + "': image is " +
                             std::to_string(s.width) + "x" +
                             std::to_string(s.height) + ", mask is " +
                             std::to_string(mw) + "x" + std::to_string(mh));
  s.mask.assign(mask.begin(), mask.end());
  if (size != 0 && (size != s.height || size != s.width)) {
    s.image = resize_planes(s.image, 3, s.height, s.width, size, size);
    s.mask = resize_nearest(s.mask, s.height, s.width, size, size);
    s.height = s.width = size;
  }
  return s;
}

std::vector<Sample> load_samples(const DatasetIndex& index, std::size_t size) {
  std::vector<Sample> out;
  out.reserve(index.records.size());
  for (const auto& r : index.records) out.push_back(load_sample(r, size));
  return out;
}

}  // namespace prnet
