#include "prnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "prnet/dataset.hpp"

namespace prnet {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_same_extent(const SaliencyMap& p, const GtMask& g,
                         const char* op) {
  if (p.height != g.height || p.width != g.width)
    throw std::invalid_argument(
        std::string(op) + ": prediction " + std::to_string(p.height) + "x" +
        std::to_string(p.width) + " vs mask " + std::to_string(g.height) +
        "x" + std::to_string(g.width));
}

void require_foreground(const GtMask& g, const char* op) {
  if (g.foreground() == 0)
    throw EmptyForeground(std::string(op) + ": mask has no foreground");
}

// Largest k with k/255 <= v, or -1.
int threshold_bin(double v) {
  int k = static_cast<int>(std::floor(v * 255.0));
  k = std::clamp(k, -1, 255);
  while (k < 255 && static_cast<double>(k + 1) / 255.0 <= v) ++k;
  while (k >= 0 && static_cast<double>(k) / 255.0 > v) --k;
  return k;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

// Object similarity of the values on one side of the mask.
double object_score(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double x = mean_of(v);
  double var = 0.0;
  for (double a : v) var += (a - x) * (a - x);
  const double sigma =
      v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double s_object(const SaliencyMap& p, const GtMask& g) {
  std::vector<double> fg, bg;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.values[k])
      fg.push_back(p.values[k]);
    else
      bg.push_back(1.0 - p.values[k]);
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(g.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// SSIM of one rectangular block of the prediction against the mask.
double block_ssim(const SaliencyMap& p, const GtMask& g, std::size_t y0,
                  std::size_t y1, std::size_t x0, std::size_t x1) {
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  if (n == 0.0) return 0.0;
  double sx = 0.0, sy = 0.0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      sx += p.values[y * p.width + x];
      sy += g.values[y * g.width + x];
    }
  const double mx = sx / n, my = sy / n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double a = p.values[y * p.width + x] - mx;
      const double b = g.values[y * g.width + x] - my;
      vx += a * a;
      vy += b * b;
      cxy += a * b;
    }
  const double d = n - 1.0 + kEps;
  vx /= d;
  vy /= d;
  cxy /= d;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

double s_region(const SaliencyMap& p, const GtMask& g) {
  const std::size_t H = g.height, W = g.width;
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (g.values[y * W + x]) {
        total += 1.0;
        sx += static_cast<double>(x + 1);
        sy += static_cast<double>(y + 1);
      }
  // Centroid in 1-based pixel coordinates, rounded half away from zero.
  std::size_t X, Y;
  if (total == 0.0) {
    X = static_cast<std::size_t>(std::round(static_cast<double>(W) / 2.0));
    Y = static_cast<std::size_t>(std::round(static_cast<double>(H) / 2.0));
  } else {
    X = static_cast<std::size_t>(std::round(sx / total));
    Y = static_cast<std::size_t>(std::round(sy / total));
  }
  const double area = static_cast<double>(H * W);
  const double w1 = static_cast<double>(X * Y) / area;
  const double w2 = static_cast<double>((W - X) * Y) / area;
  const double w3 = static_cast<double>(X * (H - Y)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(p, g, 0, Y, 0, X) + w2 * block_ssim(p, g, 0, Y, X, W) +
         w3 * block_ssim(p, g, Y, H, 0, X) + w4 * block_ssim(p, g, Y, H, X, W);
}

// Squared distance lower envelope along one line (Felzenszwalb-Huttenlocher),
// keeping the index of the minimising sample.
void envelope_1d(const std::vector<double>& f, std::vector<double>& d,
                 std::vector<std::size_t>& arg) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const double fq = f[q] + static_cast<double>(q * q);
    auto cross = [&] {
      const double vk = static_cast<double>(v[k]);
      return (fq - (f[v[k]] + vk * vk)) / (2.0 * static_cast<double>(q) - 2.0 * vk);
    };
    double s = cross();
    while (s <= z[k]) {
      --k;
      s = cross();
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
    arg[q] = v[k];
  }
}

std::array<double, 49> gaussian_7x7() {
  std::array<double, 49> k{};
  double sum = 0.0;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) {
      const double v = std::exp(-static_cast<double>(x * x + y * y) / 50.0);
      k[static_cast<std::size_t>((y + 3) * 7 + x + 3)] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

SaliencyMap::SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w)
    throw std::invalid_argument("saliency map holds " +
                                std::to_string(values.size()) +
                                " values for " + std::to_string(h) + "x" +
                                std::to_string(w));
  for (auto& x : values) x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0);
}

GtMask::GtMask(std::size_t h, std::size_t w, const std::vector<double>& v)
    : height(h), width(w), values(v.size()) {
  if (v.size() != h * w)
    throw std::invalid_argument("mask holds " + std::to_string(v.size()) +
                                " values for " + std::to_string(h) + "x" +
                                std::to_string(w));
  for (std::size_t k = 0; k < v.size(); ++k) values[k] = v[k] >= 0.5 ? 1 : 0;
}

std::size_t GtMask::foreground() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
}

double mae(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "mae");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    acc += std::abs(p.values[k] - static_cast<double>(g.values[k]));
  return acc / static_cast<double>(p.size());
}

double f_from_counts(std::size_t tp, std::size_t predicted,
                     std::size_t positives) {
  const double P = predicted == 0 ? 1.0
                                  : static_cast<double>(tp) /
                                        static_cast<double>(predicted);
  const double R = static_cast<double>(tp) / static_cast<double>(positives);
  if (P == 0.0 && R == 0.0) return 0.0;
  return (1.0 + kBeta2) * P * R / (kBeta2 * P + R);
}

PrfCurve prf_curve(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "prf_curve");
  require_foreground(g, "prf_curve");
  // hist[k]: pixels whose largest admissible threshold index is k.
  std::array<std::size_t, kThresholds> all{}, fg{};
  for (std::size_t k = 0; k < p.size(); ++k) {
    const int b = threshold_bin(p.values[k]);
    if (b < 0) continue;
    ++all[static_cast<std::size_t>(b)];
    if (g.values[k]) ++fg[static_cast<std::size_t>(b)];
  }
  const std::size_t positives = g.foreground();
  PrfCurve c;
  std::size_t predicted = 0, tp = 0;
  for (std::size_t t = kThresholds; t-- > 0;) {
    predicted += all[t];
    tp += fg[t];
    c.precision[t] = predicted == 0 ? 1.0
                                    : static_cast<double>(tp) /
                                          static_cast<double>(predicted);
    c.recall[t] = static_cast<double>(tp) / static_cast<double>(positives);
    c.f[t] = f_from_counts(tp, predicted, positives);
  }
  c.f_max = *std::max_element(c.f.begin(), c.f.end());
  return c;
}

double adaptive_threshold(const SaliencyMap& p) {
  const double m = mean_of(p.values);
  return std::min(2.0 * m, 1.0 - 1e-9);
}

double f_adaptive(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "f_adaptive");
  require_foreground(g, "f_adaptive");
  const double t = adaptive_threshold(p);
  std::size_t tp = 0, predicted = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p.values[k] >= t) {
      ++predicted;
      tp += g.values[k];
    }
  return f_from_counts(tp, predicted, g.foreground());
}

DistanceField distance_transform(const GtMask& g) {
  const std::size_t H = g.height, W = g.width;
  constexpr double kFar = 1e20;
  std::vector<double> col_d(H * W);
  std::vector<std::size_t> col_arg(H * W);
  {
    std::vector<double> f(H), d(H);
    std::vector<std::size_t> a(H);
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t y = 0; y < H; ++y) f[y] = g.values[y * W + x] ? 0.0 : kFar;
      envelope_1d(f, d, a);
      for (std::size_t y = 0; y < H; ++y) {
        col_d[y * W + x] = d[y];
        col_arg[y * W + x] = a[y];
      }
    }
  }
  DistanceField out;
  out.distance.resize(H * W);
  out.nearest.resize(H * W);
  std::vector<double> f(W), d(W);
  std::vector<std::size_t> a(W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) f[x] = col_d[y * W + x];
    envelope_1d(f, d, a);
    for (std::size_t x = 0; x < W; ++x) {
      out.distance[y * W + x] = std::sqrt(d[x]);
      out.nearest[y * W + x] = col_arg[y * W + a[x]] * W + a[x];
    }
  }
  return out;
}

double weighted_f(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "weighted_f");
  require_foreground(g, "weighted_f");
  const std::size_t H = g.height, W = g.width, M = H * W;
  std::vector<double> E(M);
  for (std::size_t k = 0; k < M; ++k)
    E[k] = std::abs(p.values[k] - static_cast<double>(g.values[k]));
  const DistanceField dt = distance_transform(g);

  // Background errors take the error of their nearest foreground pixel.
  std::vector<double> Et(M);
  for (std::size_t k = 0; k < M; ++k)
    Et[k] = g.values[k] ? E[k] : E[dt.nearest[k]];

  static const auto K = gaussian_7x7();
  std::vector<double> EA(M, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int ky = -3; ky <= 3; ++ky)
        for (int kx = -3; kx <= 3; ++kx) {
          const long yy = static_cast<long>(y) + ky;
          const long xx = static_cast<long>(x) + kx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) ||
              xx >= static_cast<long>(W))
            continue;
          acc += K[static_cast<std::size_t>((ky + 3) * 7 + kx + 3)] *
                 Et[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
        }
      EA[y * W + x] = acc;
    }

  double fg_err = 0.0, bg_err = 0.0;
  const double fg_count = static_cast<double>(g.foreground());
  for (std::size_t k = 0; k < M; ++k) {
    if (g.values[k]) {
      fg_err += std::min(E[k], EA[k]);
    } else {
      const double B = 2.0 - std::exp(std::log(0.5) / 5.0 * dt.distance[k]);
      bg_err += E[k] * B;
    }
  }
  const double tpw = fg_count - fg_err;
  const double R = 1.0 - fg_err / fg_count;
  const double P = tpw / (kEps + tpw + bg_err);
  return 2.0 * R * P / (kEps + R + P);
}

double s_measure(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "s_measure");
  const double y = static_cast<double>(g.foreground()) /
                   static_cast<double>(g.size());
  if (y == 0.0) return 1.0 - mean_of(p.values);
  if (y == 1.0) return mean_of(p.values);
  const double q = 0.5 * s_object(p, g) + 0.5 * s_region(p, g);
  return std::max(q, 0.0);
}

double e_measure(const SaliencyMap& p, const GtMask& g) {
  require_same_extent(p, g, "e_measure");
  const std::size_t M = p.size();
  const double t = adaptive_threshold(p);
  std::vector<double> fm(M), gt(M);
  for (std::size_t k = 0; k < M; ++k) {
    fm[k] = p.values[k] > t ? 1.0 : 0.0;
    gt[k] = g.values[k];
  }
  const std::size_t fg = g.foreground();
  double acc = 0.0;
  if (fg == 0) {
    for (double v : fm) acc += 1.0 - v;
  } else if (fg == M) {
    for (double v : fm) acc += v;
  } else {
    const double mf = mean_of(fm), mg = mean_of(gt);
    for (std::size_t k = 0; k < M; ++k) {
      const double a = fm[k] - mf, b = gt[k] - mg;
      const double xi = 2.0 * a * b / (a * a + b * b + kEps);
      acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  }
  return acc / static_cast<double>(M);
}

const char* size_class_name(SizeClass c) {
  switch (c) {
    case SizeClass::Large:
      return "L";
    case SizeClass::Small:
      return "S";
    case SizeClass::Neither:
      return "neither";
  }
  return "?";
}

double foreground_ratio(const GtMask& g) {
  if (g.size() == 0) return 0.0;
  return static_cast<double>(g.foreground()) / static_cast<double>(g.size());
}

SizeClass classify_size(const GtMask& g) {
  const double r = foreground_ratio(g);
  if (r > kLargeRatio) return SizeClass::Large;
  if (r < kSmallRatio) return SizeClass::Small;
  return SizeClass::Neither;
}

LsPartition split_ls(const std::vector<std::pair<std::string, GtMask>>& masks) {
  LsPartition out;
  for (const auto& [id, m] : masks) {
    switch (classify_size(m)) {
      case SizeClass::Large:
        out.large.push_back(id);
        break;
      case SizeClass::Small:
        out.small.push_back(id);
        break;
      case SizeClass::Neither:
        out.neither.push_back(id);
        break;
    }
  }
  return out;
}

ImageMetrics evaluate_image(const std::string& id, const SaliencyMap& p,
                            const GtMask& g, PrfCurve* curve) {
  ImageMetrics m;
  m.id = id;
  m.mae = mae(p, g);
  m.empty_gt = g.foreground() == 0;
  if (m.empty_gt) return m;
  const PrfCurve c = prf_curve(p, g);
  m.f_max = c.f_max;
  m.f_adaptive = f_adaptive(p, g);
  m.f_weighted = weighted_f(p, g);
  m.s_measure = s_measure(p, g);
  m.e_measure = e_measure(p, g);
  if (curve) *curve = c;
  return m;
}

void MetricsAccumulator::add(const std::string& id, const SaliencyMap& p,
                             const GtMask& g) {
  Entry e;
  e.metrics = evaluate_image(id, p, g, &e.curve);
  entries_.push_back(std::move(e));
}

MetricsReport MetricsAccumulator::finalize(std::size_t unmatched) const {
  std::vector<const Entry*> sorted;
  for (const auto& e : entries_) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Entry* a, const Entry* b) {
                     return a->metrics.id < b->metrics.id;
                   });
  MetricsReport r;
  r.unmatched = unmatched;
  r.images = sorted.size();
  std::size_t scored = 0;
  for (const Entry* e : sorted) {
    const ImageMetrics& m = e->metrics;
    r.per_image.push_back(m);
    r.mae += m.mae;
    if (m.empty_gt) {
      ++r.empty_gt;
      continue;
    }
    ++scored;
    r.f_avg += m.f_adaptive;
    r.f_weighted += m.f_weighted;
    r.s_measure += m.s_measure;
    r.e_measure += m.e_measure;
    for (std::size_t t = 0; t < kThresholds; ++t) {
      r.precision[t] += e->curve.precision[t];
      r.recall[t] += e->curve.recall[t];
      r.f_curve[t] += e->curve.f[t];
    }
  }
  if (r.images) r.mae /= static_cast<double>(r.images);
  if (scored) {
    const double n = static_cast<double>(scored);
    r.f_avg /= n;
    r.f_weighted /= n;
    r.s_measure /= n;
    r.e_measure /= n;
    for (std::size_t t = 0; t < kThresholds; ++t) {
      r.precision[t] /= n;
      r.recall[t] /= n;
      r.f_curve[t] /= n;
    }
    r.f_max = *std::max_element(r.f_curve.begin(), r.f_curve.end());
  }
  return r;
}

SaliencyMap fit_to(const SaliencyMap& p, std::size_t height,
                   std::size_t width) {
  if (p.height == height && p.width == width) return p;
  std::vector<float> src(p.values.begin(), p.values.end());
  auto r = resize_planes(src, 1, p.height, p.width, height, width);
  return SaliencyMap(height, width, std::vector<double>(r.begin(), r.end()));
}

MetricsReport evaluate_dataset(const std::string& pred_dir,
                               const std::string& gt_dir) {
  const auto preds = list_images(pred_dir);
  const auto gts = list_images(gt_dir);
  std::map<std::string, std::string> gt_by_id(gts.begin(), gts.end());
  MetricsAccumulator acc;
  std::size_t matched = 0;
  for (const auto& [id, path] : preds) {
    auto it = gt_by_id.find(id);
    if (it == gt_by_id.end()) continue;
    ++matched;
    std::size_t gh, gw, ph, pw;
    auto gv = read_mask(it->second, gh, gw);
    auto pv = read_saliency(path, ph, pw);
    GtMask g(gh, gw, gv);
    acc.add(id, fit_to(SaliencyMap(ph, pw, std::move(pv)), gh, gw), g);
  }
  if (matched == 0)
    throw std::runtime_error("no prediction/mask pairs between '" + pred_dir +
                             "' and '" + gt_dir + "'");
  return acc.finalize(preds.size() + gts.size() - 2 * matched);
}

void write_report_json(const MetricsReport& r, const std::string& path) {
  nlohmann::json j;
  j["schema"] = "prnet-metrics/1";
  j["mae"] = r.mae;
  j["f_max"] = r.f_max;
  j["f_avg"] = r.f_avg;
  j["f_weighted"] = r.f_weighted;
  j["s_measure"] = r.s_measure;
  j["e_measure"] = r.e_measure;
  j["images"] = r.images;
  j["empty_gt"] = r.empty_gt;
  j["unmatched"] = r.unmatched;
  std::vector<double> th(kThresholds);
  for (std::size_t t = 0; t < kThresholds; ++t)
    th[t] = static_cast<double>(t) / 255.0;
  j["curves"] = {{"threshold", th},
                 {"precision", r.precision},
                 {"recall", r.recall},
                 {"f", r.f_curve}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

void write_report_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(10);
  out << "# prnet-metrics/1\n";
  out << "id,mae,empty_gt,f_max,f_adaptive,f_weighted,s_measure,e_measure\n";
  for (const auto& m : r.per_image)
    out << m.id << ',' << m.mae << ',' << (m.empty_gt ? 1 : 0) << ','
        << m.f_max << ',' << m.f_adaptive << ',' << m.f_weighted << ','
        << m.s_measure << ',' << m.e_measure << '\n';
}

}  // namespace prnet
