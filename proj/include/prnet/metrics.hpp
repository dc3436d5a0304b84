#pragma once

// Saliency evaluation: MAE, threshold-swept precision/recall/F, adaptive F,
// weighted F, structure measure, enhanced-alignment measure and the
// large/small-object split.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace prnet {

inline constexpr std::size_t kThresholds = 256;
inline constexpr double kBeta2 = 0.3;
inline constexpr double kLargeRatio = 0.38;
inline constexpr double kSmallRatio = 0.03;

// H x W prediction, clamped to [0, 1] on construction.
struct SaliencyMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;

  SaliencyMap() = default;
  SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v);
  std::size_t size() const { return values.size(); }
};

// H x W binary mask; inputs at or above 0.5 are foreground.
struct GtMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> values;

  GtMask() = default;
  GtMask(std::size_t h, std::size_t w, const std::vector<double>& v);
  std::size_t size() const { return values.size(); }
  std::size_t foreground() const;
};

// Raised for an all-background mask where recall is undefined.
class EmptyForeground : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

double mae(const SaliencyMap& p, const GtMask& g);

struct PrfCurve {
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
  std::array<double, kThresholds> f{};
  double f_max = 0.0;
};

// Threshold k/255 predicts p >= k/255.
PrfCurve prf_curve(const SaliencyMap& p, const GtMask& g);

// F-measure (beta^2 = 0.3) from a binary prediction count; precision is 1
// when nothing is predicted.
double f_from_counts(std::size_t tp, std::size_t predicted,
                     std::size_t positives);

double adaptive_threshold(const SaliencyMap& p);
double f_adaptive(const SaliencyMap& p, const GtMask& g);

// Exact Euclidean distance to the nearest foreground pixel together
// with that pixel's linear index.
struct DistanceField {
  std::vector<double> distance;
  std::vector<std::size_t> nearest;
};
DistanceField distance_transform(const GtMask& g);

double weighted_f(const SaliencyMap& p, const GtMask& g);
double s_measure(const SaliencyMap& p, const GtMask& g);
double e_measure(const SaliencyMap& p, const GtMask& g);

enum class SizeClass { Large, Small, Neither };
const char* size_class_name(SizeClass c);
double foreground_ratio(const GtMask& g);
SizeClass classify_size(const GtMask& g);

struct LsPartition {
  std::vector<std::string> large, small, neither;
};
LsPartition split_ls(const std::vector<std::pair<std::string, GtMask>>& masks);

struct ImageMetrics {
  std::string id;
  double mae = 0.0;
  bool empty_gt = false;
  double f_max = 0.0, f_adaptive = 0.0, f_weighted = 0.0;
  double s_measure = 0.0, e_measure = 0.0;
};

struct MetricsReport {
  double mae = 0.0;
  double f_max = 0.0;
  double f_avg = 0.0;  // mean adaptive-threshold F
  double f_weighted = 0.0;
  double s_measure = 0.0;
  double e_measure = 0.0;
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
  std::array<double, kThresholds> f_curve{};
  std::size_t images = 0;
  std::size_t empty_gt = 0;   // excluded from F, S and E
  std::size_t unmatched = 0;  // files without a partner
  std::vector<ImageMetrics> per_image;
};

ImageMetrics evaluate_image(const std::string& id, const SaliencyMap& p,
                            const GtMask& g, PrfCurve* curve = nullptr);

// Sums per-image results; finalize() sorts by id before reducing, so the
// report does not depend on the order images were added.
class MetricsAccumulator {
 public:
  void add(const std::string& id, const SaliencyMap& p, const GtMask& g);
  MetricsReport finalize(std::size_t unmatched = 0) const;

 private:
  struct Entry {
    ImageMetrics metrics;
    PrfCurve curve;
  };
  std::vector<Entry> entries_;
};

// Bilinear resize to the mask extent when needed, then clamp.
SaliencyMap fit_to(const SaliencyMap& p, std::size_t height, std::size_t width);

// Stem-matched prediction and mask files.
MetricsReport evaluate_dataset(const std::string& pred_dir,
                               const std::string& gt_dir);

void write_report_json(const MetricsReport& r, const std::string& path);
void write_report_csv(const MetricsReport& r, const std::string& path);

}  // namespace prnet
