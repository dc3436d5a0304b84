#include "prnet/config_file.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace prnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) +
                                  ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(number) +
                                  ": empty key");
    for (const auto& [k, v] : out)
      if (k == key)
        throw std::invalid_argument("config line " + std::to_string(number) +
                                    ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

RunConfig parse_run_config(const KeyValues& kv) {
  KeyValues model, train;
  RunConfig cfg;
  for (const auto& [k, v] : kv) {
    if (ModelConfig::is_key(k))
      model.emplace_back(k, v);
    else if (TrainConfig::is_key(k))
      train.emplace_back(k, v);
    else if (k == "train_images")
      cfg.train_images = v;
    else if (k == "train_masks")
      cfg.train_masks = v;
    else
      throw std::invalid_argument("unknown config key '" + k + "'");
  }
  cfg.model = ModelConfig::from_pairs(model);
  cfg.model.validate();
  cfg.train = TrainConfig::from_pairs(train);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_key_values(path));
}

std::string render_run_config(const RunConfig& cfg) {
  std::string s = "# model\n";
  for (const auto& [k, v] : cfg.model.to_pairs()) s += k + " = " + v + "\n";
  s += "\n# training\n";
  for (const auto& [k, v] : cfg.train.to_pairs()) s += k + " = " + v + "\n";
  s += "\n# data\n";
  s += "train_images = " + cfg.train_images + "\n";
  s += "train_masks = " + cfg.train_masks + "\n";
  return s;
}

}  // namespace prnet
