#pragma once

// Binary checkpoints, little-endian throughout:
//
//   "PRNC"  u32 version
//   u32 len, config text (key=value lines)
//   u64 epoch
//   u32 len, generator state text
//   u32 count, then per parameter:
//       u32 len, name   u8 dtype (1 = f32, 2 = f64)   u32 rank, u64 dims[rank]
//       values[numel]   momentum[numel]
//   u32 count, then per normalisation state:
//       u32 len, name   u8 dtype   u64 channels   mean[channels]   var[channels]

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "prnet/training.hpp"

namespace prnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model,
                                               const TrainState& state);
// Restores parameters, momentum and running statistics into `model`. The
// stored config must match the model's config.
template <typename T>
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                  Model<T>& model);

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const TrainState& state);
template <typename T>
TrainState load_checkpoint(const std::string& path, Model<T>& model);

// Reads only the config echo.
ModelConfig read_checkpoint_config(const std::string& path);

}  // namespace prnet
