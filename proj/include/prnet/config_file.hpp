#pragma once

// Flat key=value configuration files. '#' starts a comment; blank lines are
// ignored; whitespace around keys and values is trimmed.

#include <string>
#include <utility>
#include <vector>

#include "prnet/training.hpp"

namespace prnet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Throws std::invalid_argument naming the line of any malformed entry.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_images;
  std::string train_masks;
};

// Every key must belong to the model, the trainer or the data section.
RunConfig parse_run_config(const KeyValues& kv);
RunConfig load_run_config(const std::string& path);

std::string render_run_config(const RunConfig& cfg);

}  // namespace prnet
