#pragma once

// Image/mask pairs on disk and their in-memory decoded form.

#include <cstddef>
#include <string>
#include <vector>

namespace prnet {

struct DatasetRecord {
  std::string id;  // shared file stem
  std::string image_path;
  std::string mask_path;
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;  // sorted by id
  std::vector<std::string> orphans;    // files without a partner
  std::string split = "train";

  std::size_t skipped() const { return orphans.size(); }
};

// Pairs files by stem. Throws std::runtime_error when nothing pairs up.
DatasetIndex load_pairs(const std::string& image_dir,
                        const std::string& mask_dir);

// Files in `dir` with a supported image extension, keyed by stem, sorted.
std::vector<std::pair<std::string, std::string>> list_images(
    const std::string& dir);

struct Sample {
  std::string id;
  std::size_t height = 0, width = 0;
  std::vector<float> image;  // 3 x H x W in [0, 1]
  std::vector<float> mask;   // H x W in {0, 1}
};

// Decodes one pair. When `size` is nonzero the image is resized bilinearly
// and the mask by nearest neighbour to size x size.
Sample load_sample(const DatasetRecord& record, std::size_t size = 0);
// Image only; the mask is all zero.
Sample load_image_sample(const std::string& id, const std::string& path,
                         std::size_t size = 0);
std::vector<Sample> load_samples(const DatasetIndex& index,
                                 std::size_t size = 0);

// 8-bit mask file -> {0, 1}, foreground where the byte is >= 128.
std::vector<double> read_mask(const std::string& path, std::size_t& height,
                              std::size_t& width);
// Saliency map file -> [0, 1].
std::vector<double> read_saliency(const std::string& path, std::size_t& height,
                                  std::size_t& width);

// Nearest-neighbour resize of a single-channel map.
std::vector<float> resize_nearest(const std::vector<float>& src, std::size_t h,
                                  std::size_t w, std::size_t out_h,
                                  std::size_t out_w);
// Bilinear resize (align-corners false) of a C x H x W buffer.
std::vector<float> resize_planes(const std::vector<float>& src,
                                 std::size_t channels, std::size_t h,
                                 std::size_t w, std::size_t out_h,
                                 std::size_t out_w);

}  // namespace prnet
