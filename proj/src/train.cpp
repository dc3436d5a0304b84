#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "prnet/checkpoint.hpp"
#include "prnet/training.hpp"

namespace prnet {

void make_batch(const std::vector<Sample>& samples,
                const std::vector<std::size_t>& order, Tensor<float>& images,
                Tensor<float>& masks) {
  if (order.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Sample& first = samples.at(order[0]);
  const std::size_t H = first.height, W = first.width, N = order.size();
  std::vector<float> img(N * 3 * H * W), msk(N * H * W);
  for (std::size_t n = 0; n < N; ++n) {
    const Sample& s = samples.at(order[n]);
    if (s.height != H || s.width != W)
      throw ShapeError("make_batch: sample '" + s.id + "' is " +
                       std::to_string(s.height) + "x" + std::to_string(s.width) +
                       ", expected " + std::to_string(H) + "x" +
                       std::to_string(W));
    std::copy(s.image.begin(), s.image.end(), img.begin() + n * 3 * H * W);
    std::copy(s.mask.begin(), s.mask.end(), msk.begin() + n * H * W);
  }
  images = Tensor<float>(Shape{N, 3, H, W}, std::move(img));
  masks = Tensor<float>(Shape{N, 1, H, W}, std::move(msk));
}

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss trace '" + path + "'");
  out.precision(9);
  out << "iter,lr,bce,cel,total\n";
  for (const auto& r : trace)
    out << r.iter << ',' << r.lr << ',' << r.bce << ',' << r.cel << ','
        << r.total << '\n';
}

TrainResult train_loop(Model<float>& model, const std::vector<Sample>& data,
                       const TrainConfig& cfg, TrainState* state,
                       const TrainCallback& callback) {
  if (data.empty()) throw std::invalid_argument("train_loop: empty dataset");
  if (cfg.batch == 0) throw std::invalid_argument("train_loop: batch is 0");
  const std::size_t size = model.config().input_size;
  for (const auto& s : data)
    if (s.height != size || s.width != size)
      throw ShapeError("train_loop: sample '" + s.id + "' is not " +
                       std::to_string(size) + "x" + std::to_string(size));

  TrainState local;
  local.rng.seed(cfg.seed);
  TrainState& st = state ? *state : local;

  const std::size_t N = data.size();
  const std::size_t per_epoch = (N + cfg.batch - 1) / cfg.batch;
  const std::size_t total_iters = cfg.epochs * per_epoch;
  const auto params = model.store().parameters();

  TrainResult result;
  std::size_t iter = st.epoch * per_epoch;
  bool stop = false;
  for (std::size_t epoch = st.epoch; epoch < cfg.epochs && !stop; ++epoch) {
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), st.rng);

    std::size_t b = 0;
    for (; b < per_epoch && !stop; ++b) {
      std::vector<Sample> batch;
      std::vector<std::size_t> order;
      for (std::size_t k = 0; k < cfg.batch; ++k) {
        batch.push_back(data[perm[(b * cfg.batch + k) % N]]);
        augment_sample(batch.back(), st.rng, cfg);
        order.push_back(k);
      }
      Tensor<float> images, masks;
      make_batch(batch, order, images, masks);

      const double lr = poly_lr(iter, total_iters, cfg);
      model.store().zero_grad();
      auto out = model.forward(images, NormMode::Train);
      auto loss = saliency_loss(out.prediction, masks);
      const TraceRow row{iter, lr, loss.bce.item(), loss.cel.item(),
                         loss.total.item()};
      result.trace.push_back(row);
      if (!std::isfinite(row.total)) {
        if (!cfg.trace_path.empty()) write_trace_csv(cfg.trace_path, result.trace);
        throw TrainingDiverged("loss became non-finite at iteration " +
                               std::to_string(iter) +
                               "; the last checkpoint is kept");
      }
      backward(loss.total);
      sgd_momentum_step(params, lr, cfg.momentum, cfg.weight_decay);
      ++iter;
      if (callback && !callback(row)) stop = true;
      if (cfg.max_iterations && result.trace.size() >= cfg.max_iterations)
        stop = true;
    }
    if (b == per_epoch) {
      st.epoch = epoch + 1;
      ++result.epochs_run;
      if (!cfg.checkpoint_path.empty())
        save_checkpoint(cfg.checkpoint_path, model, st);
    }
  }
  if (!result.trace.empty()) result.final_loss = result.trace.back().total;
  if (!cfg.trace_path.empty()) write_trace_csv(cfg.trace_path, result.trace);
  return result;
}

std::vector<std::vector<float>> predict_maps(const Model<float>& model,
                                             const std::vector<Sample>& data,
                                             std::size_t batch) {
  NoGradGuard guard;
  std::vector<std::vector<float>> out;
  if (batch == 0) batch = 1;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> order;
    for (std::size_t k = start; k < std::min(data.size(), start + batch); ++k)
      order.push_back(k);
    Tensor<float> images, masks;
    make_batch(data, order, images, masks);
    auto pred = model.forward(images, NormMode::Eval).prediction;
    const std::size_t per = pred.numel() / order.size();
    for (std::size_t n = 0; n < order.size(); ++n)
      out.emplace_back(pred.data().begin() + n * per,
                       pred.data().begin() + (n + 1) * per);
  }
  return out;
}

}  // namespace prnet
