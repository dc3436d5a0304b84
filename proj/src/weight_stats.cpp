#include "prnet/weight_stats.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace prnet {

WeightStream collect_weights(const Model<float>& model,
                             const std::vector<Sample>& data,
                             const std::string& dataset, std::size_t batch) {
  NoGradGuard guard;
  WeightStream out;
  if (batch == 0) batch = 1;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> order;
    for (std::size_t k = start; k < std::min(data.size(), start + batch); ++k)
      order.push_back(k);
    Tensor<float> images, masks;
    make_batch(data, order, images, masks);
    const auto result = model.forward(images, NormMode::Eval);
    const auto& diag = result.diagnostics;
    if (out.names.empty()) out.names = diag.names;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const Sample& s = data[order[n]];
      WeightRow row;
      row.image_id = s.id;
      row.dataset = dataset;
      row.size_class = classify_size(GtMask(
          s.height, s.width, std::vector<double>(s.mask.begin(), s.mask.end())));
      row.values = diag.per_sample[n];
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

void append_stream(WeightStream& into, const WeightStream& from) {
  if (into.names.empty()) into.names = from.names;
  if (into.names != from.names)
    throw std::invalid_argument("weight streams list different positions");
  into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
}

std::vector<WeightSummary> summarize_weights(const WeightStream& stream,
                                             GroupBy by) {
  if (stream.rows.empty())
    throw std::invalid_argument("weight stream is empty");
  if (stream.names.empty())
    throw std::invalid_argument(
        "weight stream has no fusion positions (regulation disabled?)");
  std::map<std::string, std::vector<const WeightRow*>> groups;
  for (const auto& r : stream.rows) {
    if (r.values.size() != stream.names.size())
      throw std::invalid_argument("row '" + r.image_id + "' has " +
                                  std::to_string(r.values.size()) +
                                  " weights, expected " +
                                  std::to_string(stream.names.size()));
    const std::string key =
        by == GroupBy::Dataset ? r.dataset : size_class_name(r.size_class);
    groups[key].push_back(&r);
  }
  std::vector<WeightSummary> out;
  for (const auto& [group, rows] : groups)
    for (std::size_t k = 0; k < stream.names.size(); ++k) {
      WeightSummary s;
      s.group = group;
      s.name = stream.names[k];
      s.count = rows.size();
      s.min = s.max = rows.front()->values[k];
      double sum = 0.0;
      for (const WeightRow* r : rows) {
        const double v = r->values[k];
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
      }
      s.mean = sum / static_cast<double>(rows.size());
      out.push_back(s);
    }
  return out;
}

void export_weight_stats(const WeightStream& stream, GroupBy by,
                         const std::string& prefix) {
  const auto summary = summarize_weights(stream, by);
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(10);
    return out;
  };
  {
    auto out = open(prefix + "_per_image.csv");
    out << "# prnet-weights/1\n";
    out << "image_id,dataset,size_class,position,weight\n";
    for (const auto& r : stream.rows)
      for (std::size_t k = 0; k < stream.names.size(); ++k)
        out << r.image_id << ',' << r.dataset << ','
            << size_class_name(r.size_class) << ',' << stream.names[k] << ','
            << r.values[k] << '\n';
  }
  {
    auto out = open(prefix + "_summary.csv");
    out << "# prnet-weights/1\n";
    out << "group,position,count,mean,min,max\n";
    for (const auto& s : summary)
      out << s.group << ',' << s.name << ',' << s.count << ',' << s.mean << ','
          << s.min << ',' << s.max << '\n';
  }
  nlohmann::json j;
  j["schema"] = "prnet-weights/1";
  j["group_by"] = by == GroupBy::Dataset ? "dataset" : "size";
  j["positions"] = stream.names;
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& s : summary)
    groups[s.group][s.name] = {
        {"count", s.count}, {"mean", s.mean}, {"min", s.min}, {"max", s.max}};
  j["groups"] = groups;
  auto out = open(prefix + "_summary.json");
  out << j.dump(2) << '\n';
}

}  // namespace prnet
