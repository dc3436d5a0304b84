#include <doctest.h>

#include "prnet/network.hpp"
#include "test_util.hpp"

using namespace prnet;
using testutil::vec;

namespace {

ModelConfig small(DecoderVariant d = DecoderVariant::Fpn) {
  ModelConfig c;
  c.backbone_widths = {4, 6, 8, 8, 8};
  c.unified_channels = 8;
  c.reduction = 4;
  c.decoder = d;
  c.input_size = 64;
  return c;
}

template <typename T>
FeaturePyramid<T> pyramid_of(const Model<T>& m, const Tensor<T>& image) {
  FeaturePyramid<T> p;
  p.i = m.unify_channels(m.backbone_forward(image, NormMode::Eval), NormMode::Eval);
  return p;
}

RegulationWeights<double> weights_for(const Model<double>& m, std::size_t n,
                                      std::mt19937_64& rng) {
  const auto names = m.decoder_registry();
  return RegulationWeights<double>(
      names, testutil::random(Shape{n, names.size()}, rng, 0.2, 1.8));
}

}  // namespace

TEST_CASE("backbone and unification extents") {
  Model<double> m(small());
  std::mt19937_64 rng(1);
  auto image = testutil::random(Shape{2, 3, 64, 64}, rng);
  const auto raw = m.backbone_forward(image, NormMode::Train);
  const auto i = m.unify_channels(raw, NormMode::Train);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(raw[k].shape() == Shape{2, m.config().backbone_widths[k], 64u >> (k + 1),
                                  64u >> (k + 1)});
    CHECK(i[k].shape() == Shape{2, 8, 64u >> (k + 1), 64u >> (k + 1)});
  }
  CHECK(ModelConfig{}.backbone_widths == std::vector<std::size_t>{16, 32, 64, 64, 64});
  CHECK(ModelConfig::full_preset().unified_channels == 64);
  CHECK(ModelConfig{}.unified_channels == 16);
  CHECK_THROWS_AS(m.backbone_forward(Tensor<double>::zeros(Shape{1, 3, 48, 64}),
                                     NormMode::Eval),
                  ShapeError);
}

TEST_CASE("zero image gives finite features") {
  Model<float> m(small());
  for (auto& st : m.stages) {
    auto g = st[1].norm.gamma->value.mutable_data();
    std::fill(g.begin(), g.end(), 0.0f);
  }
  auto r = m.forward(Tensor<float>::zeros(Shape{2, 3, 64, 64}), NormMode::Train);
  for (const auto& f : r.pyramid.i) CHECK(all_finite(f.data()));
  CHECK(all_finite(r.prediction.data()));
}

TEST_CASE("ssd perception input") {
  ModelConfig c = small(DecoderVariant::GgsSsd);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.input_size = 128;
  Model<float> m(c);
  CHECK(m.perception_extent() == 2);
  std::mt19937_64 rng(2);
  auto raw = m.backbone_forward(testutil::random<float>(Shape{2, 3, 128, 128}, rng),
                                NormMode::Train);
  CHECK(raw[4].shape().h() == 4);
  auto f = m.ssd_extend_and_combine(raw, NormMode::Train);
  CHECK(f.shape() == Shape{2, 8, 2, 2});

  Model<float> plain(small());
  CHECK(plain.perception_extent() == 2);
  CHECK_THROWS(plain.ssd_extend_and_combine(raw, NormMode::Train));
}

TEST_CASE("fpn decode") {
  Model<double> m(small());
  std::mt19937_64 rng(3);
  auto image = testutil::random(Shape{2, 3, 64, 64}, rng);

  SUBCASE("unit weights give the unweighted fpn") {
    auto p1 = pyramid_of(m, image);
    auto p2 = p1;
    auto a = m.fpn_pr_decode(
        p1, RegulationWeights<double>::constant(m.decoder_registry(), 2, 1.0),
        NormMode::Eval);
    auto b = m.fpn_pr_decode(p2, RegulationWeights<double>{}, NormMode::Eval);
    CHECK(testutil::max_abs_diff(a.data(), b.data()) <= 1e-6);
    CHECK(a.shape() == Shape{2, 1, 64, 64});
    for (double v : vec(a)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(p1.d[k].shape() == p1.i[k].shape());
  }
  SUBCASE("zero weight on i1 cuts it out of d1") {
    auto w = weights_for(m, 2, rng);
    auto col = w.values.mutable_data();
    col[0] = col[w.size()] = 0.0;
    auto p1 = pyramid_of(m, image);
    auto p2 = p1;
    p2.i[0] = testutil::random(p1.i[0].shape(), rng);
    m.fpn_pr_decode(p1, w, NormMode::Eval);
    m.fpn_pr_decode(p2, w, NormMode::Eval);
    CHECK(vec(p1.d[0]) == vec(p2.d[0]));
  }
  SUBCASE("missing weight") {
    auto p = pyramid_of(m, image);
    RegulationWeights<double> w({"i1", "i2"}, Tensor<double>::full(Shape{2, 2}, 1.0));
    CHECK_THROWS(m.fpn_pr_decode(p, w, NormMode::Eval));
  }
}

TEST_CASE("ggs decode") {
  Model<double> m(small(DecoderVariant::Ggs));
  CHECK(m.decoder_registry().size() == 11);
  std::mt19937_64 rng(4);
  auto image = testutil::random(Shape{2, 3, 64, 64}, rng);
  auto w = weights_for(m, 2, rng);
  auto v = w.values.mutable_data();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 8; k < 11; ++k) v[n * 11 + k] = 0.0;
  auto p1 = pyramid_of(m, image);
  auto p2 = p1;
  auto a = m.ggs_pr_decode(p1, w, NormMode::Eval);
  auto b = m.fpn_pr_decode(p2, w, NormMode::Eval);
  CHECK(testutil::max_abs_diff(a.data(), b.data()) <= 1e-12);
  CHECK(p1.g[0].shape() == p1.i[1].shape());
  CHECK(p1.g[2].shape() == p1.i[3].shape());

  Model<double> fpn(small());
  auto p3 = pyramid_of(fpn, image);
  CHECK_THROWS(fpn.ggs_pr_decode(p3, w, NormMode::Eval));
}

TEST_CASE("cfe") {
  ParameterStore<double> store(5);
  PerceptionConfig pc;
  pc.regulated_count = 0;
  Cfe<double> cfe(store, "cfe", 1, pc, 1, 1, 1);
  CHECK_FALSE(cfe.memory_units.has_value());
  for (std::size_t k = 0; k < 4; ++k) {
    auto w = cfe.branch_convs[k].weight->value.mutable_data();
    std::fill(w.begin(), w.end(), 1.0);
    auto b = cfe.branch_convs[k].bias->value.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
  std::vector<double> img(33 * 33, 0.0);
  img[16 * 33 + 16] = 1.0;
  const auto br = cfe.branches(Tensor<double>(Shape{1, 1, 33, 33}, img));
  const std::size_t spans[4] = {3, 7, 11, 15};
  for (std::size_t k = 0; k < 4; ++k) {
    std::size_t count = 0;
    for (std::size_t x = 0; x < 33; ++x) count += br[k].at(0, 0, 16, x) != 0.0;
    CHECK(count == 3);
    std::size_t lo = 33, hi = 0;
    for (std::size_t x = 0; x < 33; ++x)
      if (br[k].at(0, 0, 16, x) != 0.0) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    CHECK(hi - lo + 1 == spans[k]);
  }

  ParameterStore<double> s2(6);
  Cfe<double> c2(s2, "cfe", 3, pc, 3, 1, 1);
  std::mt19937_64 rng(7);
  auto f = testutil::random(Shape{2, 3, 8, 8}, rng);
  auto unit = Tensor<double>::full(Shape{2, 4}, 1.0);
  CHECK(vec(c2.apply(f, unit)) == vec(c2.apply(f, Tensor<double>{})));
  Tensor<double> w(Shape{2, 4}, {1.2, 0.0, 0.7, 1.9, 0.3, 0.0, 1.0, 1.1});
  const auto before = vec(c2.apply(f, w));
  auto p = c2.branch_convs[1].weight->value.mutable_data();
  for (auto& x : p) x += 0.5;
  CHECK(vec(c2.apply(f, w)) == before);
  CHECK(c2.apply(f, w).shape() == f.shape());
}

TEST_CASE("full network") {
  Model<float> m(ModelConfig::toy_prnet());
  std::mt19937_64 rng(8);
  auto image = testutil::random<float>(Shape{2, 3, 128, 128}, rng);
  auto r = m.forward(image, NormMode::Train);
  CHECK(r.prediction.shape() == Shape{2, 1, 128, 128});
  for (float v : vec(r.prediction)) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(r.diagnostics.size() == 11 + 9);
  CHECK(r.diagnostics.per_sample.size() == 2);
  for (const auto& row : r.diagnostics.per_sample) CHECK(row.size() == 20);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(r.pyramid.i[k].shape().h() == (128u >> (k + 1)));

  ModelConfig c = ModelConfig::toy_prnet();
  c.ieo_enabled = false;
  c.decoder = DecoderVariant::Ggs;
  Model<float> ggs(c);
  auto g = ggs.forward(image, NormMode::Train);
  CHECK(g.diagnostics.size() == 11);
  CHECK(g.prediction.shape() == Shape{2, 1, 128, 128});
  CHECK_THROWS_AS(m.forward(Tensor<float>::zeros(Shape{1, 3, 64, 64}), NormMode::Eval),
                  ShapeError);
}

TEST_CASE("bypass diagnostics and determinism") {
  ModelConfig c = small();
  c.regulation_enabled = false;
  Model<float> a(c), b(c);
  CHECK_FALSE(a.decoder_perceiver.has_value());
  std::mt19937_64 rng(9);
  auto image = testutil::random<float>(Shape{2, 3, 64, 64}, rng);
  auto ra = a.forward(image, NormMode::Train);
  auto rb = b.forward(image, NormMode::Train);
  CHECK(vec(ra.prediction) == vec(rb.prediction));
  for (const auto& row : ra.diagnostics.per_sample)
    for (double v : row) CHECK(v == 1.0);

  // double flip is the identity on the input path
  auto twice = flip_horizontal(flip_horizontal(image));
  CHECK(vec(twice) == vec(image));
  CHECK(vec(a.forward(twice, NormMode::Eval).prediction) ==
        vec(a.forward(image, NormMode::Eval).prediction));
}

TEST_CASE("config validation") {
  ModelConfig c = small();
  c.input_size = 100;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.backbone_widths = {4, 4, 4, 4};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.ieo_enabled = true;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.reduction = 16;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.strategy = PerceptionStrategy::FullyConnected;
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_pairs(ModelConfig::toy_prnet().to_pairs()).to_pairs() ==
        ModelConfig::toy_prnet().to_pairs());
  CHECK(config_diff(ModelConfig::toy_prnet(), ModelConfig::toy_prnet()).empty());
  CHECK(config_diff(small(), ModelConfig{}).size() >= 1);
}
