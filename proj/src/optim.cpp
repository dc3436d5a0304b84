#include <cmath>
#include <sstream>

#include "prnet/training.hpp"

#include "parse_value.hpp"

namespace prnet {

double poly_lr(std::size_t iter, std::size_t max_iter, double lr0,
               double power) {
  if (max_iter == 0 || iter > max_iter)
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) +
                                " outside [0, " + std::to_string(max_iter) +
                                "]");
  if (iter == max_iter) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(iter) /
                                  static_cast<double>(max_iter),
                        power);
}

double poly_lr(std::size_t iter, std::size_t max_iter, const TrainConfig& cfg) {
  return poly_lr(iter, max_iter, cfg.lr0, cfg.poly_power);
}

template <typename T>
void sgd_momentum_step(const std::vector<Parameter<T>*>& params, double lr,
                       double momentum, double weight_decay) {
  const T mu = static_cast<T>(momentum);
  const T step = static_cast<T>(lr);
  for (Parameter<T>* p : params) {
    auto value = p->value.mutable_data();
    const std::vector<T> grad = p->value.grad();
    const T wd = p->decay ? static_cast<T>(weight_decay) : T(0);
    for (std::size_t k = 0; k < value.size(); ++k) {
      p->momentum[k] = mu * p->momentum[k] + (grad[k] + wd * value[k]);
      value[k] -= step * p->momentum[k];
    }
  }
}

template void sgd_momentum_step(const std::vector<Parameter<float>*>&, double,
                                double, double);
template void sgd_momentum_step(const std::vector<Parameter<double>*>&, double,
                                double, double);

namespace {

constexpr const char* kTrainKeys[] = {
    "epochs",     "batch",      "lr0",           "momentum",
    "weight_decay", "poly_power", "train_seed",  "flip",
    "rotate",     "jitter",     "max_rotation_deg", "jitter_amount",
    "max_iterations", "checkpoint", "trace"};

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v +
                              "' is not a boolean");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const {
  return {{"epochs", std::to_string(epochs)},
          {"batch", std::to_string(batch)},
          {"lr0", fmt(lr0)},
          {"momentum", fmt(momentum)},
          {"weight_decay", fmt(weight_decay)},
          {"poly_power", fmt(poly_power)},
          {"train_seed", std::to_string(seed)},
          {"flip", flip ? "true" : "false"},
          {"rotate", rotate ? "true" : "false"},
          {"jitter", jitter ? "true" : "false"},
          {"max_rotation_deg", fmt(max_rotation_deg)},
          {"jitter_amount", fmt(jitter_amount)},
          {"max_iterations", std::to_string(max_iterations)},
          {"checkpoint", checkpoint_path},
          {"trace", trace_path}};
}

bool TrainConfig::is_key(const std::string& key) {
  for (const char* k : kTrainKeys)
    if (key == k) return true;
  return false;
}

TrainConfig TrainConfig::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  TrainConfig c;
  for (const auto& [k, v] : pairs) {
    if (k == "epochs")
      c.epochs = detail::parse_count(k, v);
    else if (k == "batch")
      c.batch = detail::parse_count(k, v);
    else if (k == "lr0")
      c.lr0 = detail::parse_real(k, v);
    else if (k == "momentum")
      c.momentum = detail::parse_real(k, v);
    else if (k == "weight_decay")
      c.weight_decay = detail::parse_real(k, v);
    else if (k == "poly_power")
      c.poly_power = detail::parse_real(k, v);
    else if (k == "train_seed")
      c.seed = detail::parse_seed(k, v);
    else if (k == "flip")
      c.flip = to_bool(k, v);
    else if (k == "rotate")
      c.rotate = to_bool(k, v);
    else if (k == "jitter")
      c.jitter = to_bool(k, v);
    else if (k == "max_rotation_deg")
      c.max_rotation_deg = detail::parse_real(k, v);
    else if (k == "jitter_amount")
      c.jitter_amount = detail::parse_real(k, v);
    else if (k == "max_iterations")
      c.max_iterations = detail::parse_count(k, v);
    else if (k == "checkpoint")
      c.checkpoint_path = v;
    else if (k == "trace")
      c.trace_path = v;
  }
  if (c.batch == 0) throw std::invalid_argument("batch must be positive");
  if (c.epochs == 0) throw std::invalid_argument("epochs must be positive");
  return c;
}

}  // namespace prnet
