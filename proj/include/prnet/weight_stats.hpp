#pragma once

// Per-image regulation weights collected from eval passes and their grouped
// summaries.

#include <string>
#include <vector>

#include "prnet/metrics.hpp"
#include "prnet/training.hpp"

namespace prnet {

struct WeightRow {
  std::string image_id;
  std::string dataset;
  SizeClass size_class = SizeClass::Neither;
  std::vector<double> values;  // aligned with WeightStream::names
};

struct WeightStream {
  std::vector<std::string> names;  // fusion positions, registry order
  std::vector<WeightRow> rows;
};

enum class GroupBy { Dataset, SizeSplit };

struct WeightSummary {
  std::string group;
  std::string name;
  std::size_t count = 0;
  double mean = 0.0, min = 0.0, max = 0.0;
};

// Eval-mode forward over `data`; the size class comes from each mask.
WeightStream collect_weights(const Model<float>& model,
                             const std::vector<Sample>& data,
                             const std::string& dataset,
                             std::size_t batch = 4);
void append_stream(WeightStream& into, const WeightStream& from);

// One row per group per fusion position, groups in sorted order. Throws on an
// empty stream.
std::vector<WeightSummary> summarize_weights(const WeightStream& stream,
                                             GroupBy by);

// Writes <prefix>_per_image.csv, <prefix>_summary.csv and
// <prefix>_summary.json.
void export_weight_stats(const WeightStream& stream, GroupBy by,
                         const std::string& prefix);

}  // namespace prnet
