#include "prnet/cli.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "prnet/checkpoint.hpp"
#include "prnet/config_file.hpp"
#include "prnet/gradcheck.hpp"
#include "prnet/image_io.hpp"
#include "prnet/metrics.hpp"
#include "prnet/weight_stats.hpp"

namespace prnet {

namespace fs = std::filesystem;

namespace {

std::unique_ptr<Model<float>> open_model(const std::string& checkpoint) {
  auto model = std::make_unique<Model<float>>(read_checkpoint_config(checkpoint));
  load_checkpoint(checkpoint, *model);
  return model;
}

// Eval-mode maps at each source image's own extent.
std::vector<SaliencyMap> predict_native(const Model<float>& model,
                                        const std::vector<Sample>& natives) {
  const std::size_t S = model.config().input_size;
  std::vector<Sample> scaled;
  for (const auto& s : natives) {
    Sample r = s;
    if (r.height != S || r.width != S) {
      r.image = resize_planes(s.image, 3, s.height, s.width, S, S);
      r.mask.assign(S * S, 0.0f);
      r.height = r.width = S;
    }
    scaled.push_back(std::move(r));
  }
  const auto maps = predict_maps(model, scaled);
  std::vector<SaliencyMap> out;
  for (std::size_t k = 0; k < maps.size(); ++k)
    out.push_back(fit_to(SaliencyMap(S, S, {maps[k].begin(), maps[k].end()}),
                         natives[k].height, natives[k].width));
  return out;
}

void write_report(const MetricsReport& r, const std::string& prefix,
                  std::ostream& out) {
  write_report_json(r, prefix + ".json");
  write_report_csv(r, prefix + ".csv");
  out << "images " << r.images << "  empty_gt " << r.empty_gt << "  unmatched "
      << r.unmatched << '\n'
      << "mae " << r.mae << "  f_max " << r.f_max << "  f_avg " << r.f_avg
      << "  f_weighted " << r.f_weighted << "  s " << r.s_measure << "  e "
      << r.e_measure << '\n';
}

int cmd_train(const std::string& config_path, std::string images,
              std::string masks, std::string checkpoint, std::string trace,
              bool resume, std::ostream& out) {
  RunConfig cfg = load_run_config(config_path);
  if (!images.empty()) cfg.train_images = images;
  if (!masks.empty()) cfg.train_masks = masks;
  if (!checkpoint.empty()) cfg.train.checkpoint_path = checkpoint;
  if (!trace.empty()) cfg.train.trace_path = trace;
  if (cfg.train_images.empty() || cfg.train_masks.empty())
    throw std::invalid_argument("train: image and mask directories are required");

  const DatasetIndex index = load_pairs(cfg.train_images, cfg.train_masks);
  for (const auto& o : index.orphans) out << "skipped unpaired file " << o << '\n';
  const auto data = load_samples(index, cfg.model.input_size);
  out << "training on " << data.size() << " pairs\n";

  Model<float> model(cfg.model);
  TrainState state;
  state.rng.seed(cfg.train.seed);
  if (resume && !cfg.train.checkpoint_path.empty() &&
      fs::exists(cfg.train.checkpoint_path)) {
    state = load_checkpoint(cfg.train.checkpoint_path, model);
    out << "resuming at epoch " << state.epoch << '\n';
  }
  const std::size_t per_epoch = (data.size() + cfg.train.batch - 1) / cfg.train.batch;
  const auto result = train_loop(model, data, cfg.train, &state,
                                 [&](const TraceRow& r) {
    if ((r.iter + 1) % per_epoch == 0)
      out << "iter " << r.iter + 1 << "  lr " << r.lr << "  loss " << r.total
          << '\n';
    return true;
  });
  out << "finished " << result.epochs_run << " epochs, final loss "
      << result.final_loss << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& predictions,
             const std::string& images, const std::string& masks,
             const std::string& prefix, std::ostream& out) {
  if (!predictions.empty()) {
    write_report(evaluate_dataset(predictions, masks), prefix, out);
    return 0;
  }
  if (checkpoint.empty() || images.empty())
    throw std::invalid_argument(
        "eval: give --predictions, or --checkpoint with --images");
  const auto model = open_model(checkpoint);
  const DatasetIndex index = load_pairs(images, masks);
  MetricsAccumulator acc;
  for (const auto& rec : index.records) {
    const Sample s = load_sample(rec);
    const auto map = predict_native(*model, {s}).front();
    acc.add(rec.id, map,
            GtMask(s.height, s.width, std::vector<double>(s.mask.begin(), s.mask.end())));
  }
  write_report(acc.finalize(index.skipped()), prefix, out);
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& images,
                const std::string& out_dir, std::ostream& out) {
  const auto model = open_model(checkpoint);
  fs::create_directories(out_dir);
  std::size_t count = 0;
  for (const auto& [id, path] : list_images(images)) {
    const Sample s = load_image_sample(id, path);
    write_saliency_pgm(predict_native(*model, {s}).front(),
                       (fs::path(out_dir) / (id + ".pgm")).string());
    ++count;
  }
  if (count == 0) throw std::runtime_error("no images in '" + images + "'");
  out << "wrote " << count << " maps to " << out_dir << '\n';
  return 0;
}

int cmd_split_ls(const std::string& masks, const std::string& prefix,
                 std::ostream& out) {
  std::vector<std::pair<std::string, GtMask>> list;
  for (const auto& [id, path] : list_images(masks)) {
    std::size_t h, w;
    const auto v = read_mask(path, h, w);
    list.emplace_back(id, GtMask(h, w, v));
  }
  if (list.empty()) throw std::runtime_error("no masks in '" + masks + "'");
  const LsPartition part = split_ls(list);
  auto emit = [&](const char* label, const std::vector<std::string>& ids) {
    out << label << ": " << ids.size() << '\n';
    if (prefix.empty()) return;
    std::ofstream f(prefix + "_" + label + ".txt");
    if (!f) throw std::runtime_error("cannot write '" + prefix + "_" + label + ".txt'");
    for (const auto& id : ids) f << id << '\n';
  };
  emit("L", part.large);
  emit("neither", part.neither);
  emit("S", part.small);
  return 0;
}

int cmd_analyze(const std::string& checkpoint, const std::string& images,
                const std::string& masks, std::string dataset,
                const std::string& group_by, const std::string& prefix,
                std::ostream& out) {
  const auto model = open_model(checkpoint);
  const DatasetIndex index = load_pairs(images, masks);
  if (dataset.empty()) dataset = fs::path(images).filename().string();
  const auto data = load_samples(index, model->config().input_size);
  const WeightStream stream = collect_weights(*model, data, dataset);
  const GroupBy by = group_by == "dataset" ? GroupBy::Dataset : GroupBy::SizeSplit;
  export_weight_stats(stream, by, prefix);
  for (const auto& s : summarize_weights(stream, by))
    out << s.group << ' ' << s.name << "  mean " << s.mean << "  min " << s.min
        << "  max " << s.max << "  n " << s.count << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Perception-and-regulation saliency networks", "prnet"};
  app.require_subcommand(1);

  std::string config, images, masks, checkpoint, trace, predictions, out_path;
  std::string dataset, group_by = "size";
  bool resume = false;
  std::uint64_t seed = 2024;

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config, "key=value config file")->required();
  train->add_option("--images", images, "Training image directory");
  train->add_option("--masks", masks, "Training mask directory");
  train->add_option("--checkpoint", checkpoint, "Checkpoint written every epoch");
  train->add_option("--trace", trace, "Loss trace CSV");
  train->add_flag("--resume", resume, "Continue from --checkpoint if present");

  auto* eval = app.add_subcommand("eval", "Score saliency maps against masks");
  eval->add_option("--masks", masks, "Ground-truth mask directory")->required();
  eval->add_option("--predictions", predictions, "Directory of saliency maps");
  eval->add_option("--checkpoint", checkpoint, "Model to run instead");
  eval->add_option("--images", images, "Images for --checkpoint");
  eval->add_option("--out", out_path, "Report prefix (.json and .csv)")->required();

  auto* predict = app.add_subcommand("predict", "Write PGM saliency maps");
  predict->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  predict->add_option("--images", images, "Image directory")->required();
  predict->add_option("--out", out_path, "Output directory")->required();

  auto* split = app.add_subcommand("split-ls", "Large/small object listings");
  split->add_option("--masks", masks, "Mask directory")->required();
  split->add_option("--out", out_path, "Listing prefix");

  auto* analyze = app.add_subcommand("analyze-weights", "Regulation weight statistics");
  analyze->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  analyze->add_option("--images", images, "Image directory")->required();
  analyze->add_option("--masks", masks, "Mask directory")->required();
  analyze->add_option("--dataset", dataset, "Dataset label (default: image dir name)");
  analyze->add_option("--group-by", group_by, "size or dataset")
      ->check(CLI::IsMember({"size", "dataset"}));
  analyze->add_option("--out", out_path, "Output prefix")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app
                                                        : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (train->parsed())
      return cmd_train(config, images, masks, checkpoint, trace, resume, out);
    if (eval->parsed())
      return cmd_eval(checkpoint, predictions, images, masks, out_path, out);
    if (predict->parsed()) return cmd_predict(checkpoint, images, out_path, out);
    if (split->parsed()) return cmd_split_ls(masks, out_path, out);
    if (analyze->parsed())
      return cmd_analyze(checkpoint, images, masks, dataset, group_by, out_path, out);
    if (grad->parsed()) {
      const auto results = run_gradient_suite(seed, &out);
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.passed() ? 0 : 1;
      out << results.size() - failed << "/" << results.size() << " passed\n";
      return failed ? 1 : 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace prnet
