#pragma once

// Saliency losses, SGD with momentum, the poly schedule, paired augmentation
// and the training loop.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "prnet/dataset.hpp"
#include "prnet/network.hpp"

namespace prnet {

template <typename T>
struct LossBreakdown {
  Tensor<T> bce;
  Tensor<T> cel;
  Tensor<T> total;  // bce + cel
};

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kCelGuard = 1e-8;

// Mean binary cross-entropy over every pixel of the batch. p is clamped to
// [1e-7, 1 - 1e-7]; clamped pixels pass no gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& g);

// sum(p + g - 2gp) / sum(p + g) per image, averaged over the batch. An image
// whose denominator is below 1e-8 contributes 0.
template <typename T>
Tensor<T> cel_loss(const Tensor<T>& p, const Tensor<T>& g);

template <typename T>
LossBreakdown<T> saliency_loss(const Tensor<T>& p, const Tensor<T>& g);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 4;
  double lr0 = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  std::uint64_t seed = 7;
  bool flip = true;
  bool rotate = true;
  bool jitter = true;
  double max_rotation_deg = 15.0;
  double jitter_amount = 0.1;
  // Stop after this many iterations when nonzero (schedule still spans all
  // epochs).
  std::size_t max_iterations = 0;
  std::string checkpoint_path;  // written after every epoch when set
  std::string trace_path;       // CSV loss trace when set

  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static TrainConfig from_pairs(
      const std::vector<std::pair<std::string, std::string>>& pairs);
  static bool is_key(const std::string& key);
};

// lr0 * (1 - iter / max_iter)^power. Requires iter <= max_iter.
double poly_lr(std::size_t iter, std::size_t max_iter, double lr0,
               double power = 0.9);
double poly_lr(std::size_t iter, std::size_t max_iter, const TrainConfig& cfg);

// v = momentum * v + (grad + wd * param); param -= lr * v. Parameters with
// decay == false skip the wd term.
template <typename T>
void sgd_momentum_step(const std::vector<Parameter<T>*>& params, double lr,
                       double momentum, double weight_decay);

struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;

  bool is_identity() const {
    return !flip && angle_deg == 0.0 && brightness == 1.0 && contrast == 1.0;
  }
};

AugmentDraw draw_augmentation(std::mt19937_64& rng, const TrainConfig& cfg);
// Flip, then rotation about the centre (bilinear for the image, nearest for
// the mask, zero outside), then contrast and brightness on the image only.
void apply_augmentation(Sample& sample, const AugmentDraw& draw);
AugmentDraw augment_sample(Sample& sample, std::mt19937_64& rng,
                           const TrainConfig& cfg);

struct TraceRow {
  std::size_t iter;
  double lr, bce, cel, total;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  std::size_t epoch = 0;
  std::mt19937_64 rng;
};

// Packs samples [first, first + count) of `order` into N x 3 x H x W and
// N x 1 x H x W tensors.
void make_batch(const std::vector<Sample>& samples,
                const std::vector<std::size_t>& order, Tensor<float>& images,
                Tensor<float>& masks);

// Called after each iteration; returning false stops training.
using TrainCallback = std::function<bool(const TraceRow&)>;

// Every sample must already be at the model's input extent. A short final
// batch is topped up from the start of the epoch's permutation. When `state`
// is given, training resumes from its epoch and generator.
TrainResult train_loop(Model<float>& model, const std::vector<Sample>& data,
                       const TrainConfig& cfg, TrainState* state = nullptr,
                       const TrainCallback& callback = {});

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRow>& trace);

// Eval-mode predictions, one H x W map per sample.
std::vector<std::vector<float>> predict_maps(const Model<float>& model,
                                             const std::vector<Sample>& data,
                                             std::size_t batch = 4);

}  // namespace prnet
