#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "prnet/checkpoint.hpp"
#include "prnet/training.hpp"
#include "test_util.hpp"

using namespace prnet;
using testutil::vec;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.backbone_widths = {4, 4, 4, 4, 4};
  c.unified_channels = 4;
  c.reduction = 2;
  c.input_size = 32;
  return c;
}

std::vector<Sample> disks(std::size_t count, std::size_t size) {
  std::vector<Sample> out;
  for (std::size_t k = 0; k < count; ++k) {
    Sample s;
    s.id = "s" + std::to_string(k);
    s.height = s.width = size;
    s.image.assign(3 * size * size, 0.2f);
    s.mask.assign(size * size, 0.0f);
    const double cy = size * (0.3 + 0.1 * k), cx = size * 0.5, r = size * 0.2;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
          s.mask[y * size + x] = 1.0f;
          for (std::size_t c = 0; c < 3; ++c) s.image[(c * size + y) * size + x] = 0.8f;
        }
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig quick(std::size_t epochs, std::size_t batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = batch;
  t.lr0 = 0.01;
  return t;
}

}  // namespace

TEST_CASE("bce") {
  Tensor<double> g(Shape{1, 1, 2, 2}, {0, 1, 1, 0});
  CHECK(bce_loss(g, g).item() <= 2e-7);
  CHECK(bce_loss(Tensor<double>::full(g.shape(), 0.5), g).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bce_loss(g, Tensor<double>::zeros(Shape{1, 1, 2, 3})), ShapeError);

  const auto c = testutil::oracle("ops_values.json")["losses"];
  Tensor<double> p(Shape(testutil::dims(c["shape"])), c["p"].get<std::vector<double>>(), true);
  Tensor<double> t(p.shape(), c["g"].get<std::vector<double>>());
  auto loss = bce_loss(p, t);
  CHECK(loss.item() == doctest::Approx(c["bce"].get<double>()).epsilon(1e-12));
  backward(loss);
  CHECK(testutil::max_abs_diff(p.grad(), c["bce_grad"].get<std::vector<double>>()) < 1e-12);
}

TEST_CASE("cel") {
  Tensor<double> g(Shape{1, 1, 2, 2}, {0, 1, 1, 0});
  CHECK(cel_loss(g, g).item() == 0.0);
  Tensor<double> inv(g.shape(), {1, 0, 0, 1});
  CHECK(cel_loss(inv, g).item() == doctest::Approx(1.0));
  CHECK(cel_loss(Tensor<double>::full(g.shape(), 0.5), g).item() == doctest::Approx(0.5));
  CHECK(cel_loss(Tensor<double>::zeros(g.shape()), Tensor<double>::zeros(g.shape())).item() ==
        0.0);

  const auto c = testutil::oracle("ops_values.json")["losses"];
  Tensor<double> p(Shape(testutil::dims(c["shape"])), c["p"].get<std::vector<double>>(), true);
  Tensor<double> t(p.shape(), c["g"].get<std::vector<double>>());
  auto loss = cel_loss(p, t);
  CHECK(loss.item() == doctest::Approx(c["cel"].get<double>()).epsilon(1e-12));
  backward(loss);
  CHECK(testutil::max_abs_diff(p.grad(), c["cel_grad"].get<std::vector<double>>()) < 1e-12);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = testutil::random(Shape{2, 1, 4, 4}, rng, 0.0, 1.0);
    auto m = testutil::random(Shape{2, 1, 4, 4}, rng, 0.0, 1.0);
    auto mv = vec(m);
    for (auto& v : mv) v = v < 0.5 ? 0.0 : 1.0;
    const double v = cel_loss(q, Tensor<double>(m.shape(), mv)).item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    auto parts = saliency_loss(q, Tensor<double>(m.shape(), mv));
    CHECK(parts.total.item() == parts.bce.item() + parts.cel.item());
  }
}

TEST_CASE("poly schedule") {
  CHECK(poly_lr(0, 100, 0.001) == 0.001);
  CHECK(poly_lr(100, 100, 0.001) == 0.0);
  CHECK(poly_lr(50, 100, 0.001) ==
        doctest::Approx(testutil::oracle("ops_values.json")["poly_lr_half"].get<double>())
            .epsilon(1e-14));
  CHECK(poly_lr(50, 100, 0.001) == doctest::Approx(0.000536).epsilon(1e-3));
  for (std::size_t k = 1; k < 100; ++k) CHECK(poly_lr(k, 100, 0.001) < poly_lr(k - 1, 100, 0.001));
  TrainConfig t;
  CHECK(poly_lr(0, 10, t) == t.lr0);
}

TEST_CASE("sgd with momentum") {
  ParameterStore<double> store;
  auto* p = store.create("w", Shape{3}, {1.0, -2.0, 0.5});
  auto* bn = store.create("bn.gamma", Shape{1}, {1.0}, false);
  const std::vector<Parameter<double>*> params{p, bn};

  sgd_momentum_step(params, 0.1, 0.9, 0.0005);
  CHECK(vec(p->value) == std::vector<double>{1.0 - 0.1 * 0.0005, -2.0 + 0.1 * 0.001,
                                              0.5 - 0.1 * 0.00025});
  CHECK(bn->value.data()[0] == 1.0);

  ParameterStore<double> s2;
  auto* q = s2.create("w", Shape{2}, {0.0, 0.0});
  auto* bq = s2.create("b", Shape{1}, {2.0}, false);
  const std::vector<Parameter<double>*> ps{q, bq};
  for (auto* x : ps) x->value.zero_grad();
  sgd_momentum_step(ps, 0.1, 0.9, 0.0);
  CHECK(vec(q->value) == std::vector<double>{0.0, 0.0});

  const double lr = 0.01, g = 3.0;
  std::vector<double> after[2];
  for (int step = 0; step < 2; ++step) {
    auto gr = q->value.mutable_grad();
    gr[0] = g;
    gr[1] = -g;
    sgd_momentum_step(ps, lr, 0.9, 0.0);
    q->value.zero_grad();
    after[step] = vec(q->value);
  }
  // first step moves by lr g, the second by lr (0.9 g + g)
  CHECK(after[0][0] == doctest::Approx(-lr * g));
  CHECK(after[1][0] - after[0][0] == doctest::Approx(-lr * 1.9 * g));
  CHECK(after[1][1] - after[0][1] == doctest::Approx(lr * 1.9 * g));

  ParameterStore<double> s3;
  auto* r = s3.create("w", Shape{1}, {2.0});
  r->value.mutable_grad()[0] = 0.5;
  sgd_momentum_step(std::vector<Parameter<double>*>{r}, 0.1, 0.9, 0.01);
  CHECK(r->value.data()[0] == doctest::Approx(2.0 - 0.1 * (0.5 + 0.01 * 2.0)));
}

TEST_CASE("augmentation") {
  auto s = disks(1, 24).front();
  auto orig = s;

  apply_augmentation(s, AugmentDraw{});
  CHECK(s.image == orig.image);
  CHECK(s.mask == orig.mask);

  AugmentDraw flip;
  flip.flip = true;
  apply_augmentation(s, flip);
  CHECK(s.mask != orig.mask);
  apply_augmentation(s, flip);
  CHECK(s.image == orig.image);
  CHECK(s.mask == orig.mask);

  TrainConfig cfg;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    Sample t = orig;
    const auto d = augment_sample(t, rng, cfg);
    CHECK(std::abs(d.angle_deg) <= 15.0);
    CHECK(d.brightness >= 0.9);
    CHECK(d.brightness <= 1.1);
    CHECK(d.contrast >= 0.9);
    CHECK(d.contrast <= 1.1);
    for (float v : t.mask) CHECK((v == 0.0f || v == 1.0f));
    CHECK(t.image.size() == orig.image.size());
  }
  cfg.flip = cfg.rotate = cfg.jitter = false;
  CHECK(draw_augmentation(rng, cfg).is_identity());
}

TEST_CASE("training loop") {
  const auto data = disks(5, 32);
  SUBCASE("trace length and determinism") {
    Model<float> a(tiny()), b(tiny());
    const auto cfg = quick(2, 2);
    const auto ra = train_loop(a, data, cfg);
    const auto rb = train_loop(b, data, cfg);
    CHECK(ra.trace.size() == 2 * 3);
    CHECK(ra.epochs_run == 2);
    CHECK(ra.final_loss == rb.final_loss);
    for (std::size_t k = 0; k < ra.trace.size(); ++k) {
      CHECK(ra.trace[k].iter == k);
      CHECK(ra.trace[k].total == rb.trace[k].total);
    }
    CHECK(ra.trace.front().lr == cfg.lr0);
  }
  SUBCASE("resume continues the same run") {
    const auto cfg = quick(2, 2);
    Model<float> whole(tiny());
    const auto full = train_loop(whole, data, cfg);

    Model<float> part(tiny());
    TrainState st;
    st.rng.seed(cfg.seed);
    auto first = cfg;
    first.max_iterations = 3;
    train_loop(part, data, first, &st);
    const auto bytes = serialize_checkpoint(part, st);
    Model<float> resumed(tiny());
    TrainState st2 = deserialize_checkpoint(bytes, resumed);
    CHECK(st2.epoch == 1);
    const auto rest = train_loop(resumed, data, cfg, &st2);
    CHECK(rest.trace.size() == 3);
    CHECK(rest.trace.front().iter == 3);
    CHECK(rest.final_loss == full.final_loss);
  }
  SUBCASE("trace csv and callback stop") {
    const auto dir = std::filesystem::temp_directory_path() / "prnet_trace_test";
    std::filesystem::create_directories(dir);
    auto cfg = quick(3, 2);
    cfg.trace_path = (dir / "trace.csv").string();
    Model<float> m(tiny());
    std::size_t calls = 0;
    const auto r = train_loop(m, data, cfg, nullptr, [&](const TraceRow&) {
      return ++calls < 4;
    });
    CHECK(r.trace.size() == 4);
    CHECK(r.epochs_run == 1);
    std::ifstream in(cfg.trace_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "iter,lr,bce,cel,total");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 4);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("divergence keeps the last checkpoint") {
    const auto dir = std::filesystem::temp_directory_path() / "prnet_diverge_test";
    std::filesystem::create_directories(dir);
    auto cfg = quick(2, 2);
    cfg.checkpoint_path = (dir / "model.ckpt").string();
    Model<float> m(tiny());
    train_loop(m, data, [&] { auto c = cfg; c.epochs = 1; return c; }());
    std::ifstream before(cfg.checkpoint_path, std::ios::binary);
    const std::string saved((std::istreambuf_iterator<char>(before)), {});
    auto bad = data;
    for (auto& s : bad) std::fill(s.mask.begin(), s.mask.end(), std::nanf(""));
    CHECK_THROWS_AS(train_loop(m, bad, cfg), TrainingDiverged);
    std::ifstream after(cfg.checkpoint_path, std::ios::binary);
    CHECK(std::string((std::istreambuf_iterator<char>(after)), {}) == saved);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("rejected inputs") {
    Model<float> m(tiny());
    CHECK_THROWS_AS(train_loop(m, {}, quick(1, 2)), std::invalid_argument);
    CHECK_THROWS_AS(train_loop(m, disks(2, 24), quick(1, 2)), ShapeError);
  }
}

TEST_CASE("predict maps") {
  Model<float> m(tiny());
  const auto data = disks(3, 32);
  const auto maps = predict_maps(m, data, 2);
  CHECK(maps.size() == 3);
  for (const auto& map : maps) {
    CHECK(map.size() == 32 * 32);
    for (float v : map) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(predict_maps(m, data, 1) == maps);
}
