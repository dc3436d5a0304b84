#include <doctest.h>

#include "prnet/pr_block.hpp"
#include "test_util.hpp"

using namespace prnet;

namespace {

void zero(Parameter<double>* p) {
  auto d = p->value.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
}

PerceptionConfig config(PerceptionStrategy s, std::size_t units = 8,
                        std::size_t r = 16) {
  PerceptionConfig c;
  c.strategy = s;
  c.regulated_count = units;
  c.reduction = r;
  return c;
}

void check_open_range(const Tensor<double>& w) {
  for (double v : w.data()) {
    CHECK(v > 0.0);
    CHECK(v < 2.0);
  }
}

}  // namespace

TEST_CASE("fully connected perception") {
  ParameterStore<double> store(1);
  Perceiver<double> p(store, "pr", config(PerceptionStrategy::FullyConnected), 64, 8, 8);
  CHECK(p.hidden_width() == 512);
  zero(p.output.weight);
  zero(p.output.bias);
  auto w = p(Tensor<double>::zeros(Shape{2, 64, 8, 8}));
  CHECK(w.shape() == Shape{2, 8});
  for (double v : w.data()) CHECK(v == 1.0);

  std::mt19937_64 rng(3);
  Perceiver<double> q(store, "pr2", config(PerceptionStrategy::FullyConnected, 3), 4, 2, 3);
  check_open_range(q(testutil::random(Shape{3, 4, 2, 3}, rng, -50, 50)));
  CHECK_THROWS_AS(q(Tensor<double>::zeros(Shape{1, 5, 2, 3})), ShapeError);
}

TEST_CASE("spatial perception") {
  ParameterStore<double> store(2);
  Perceiver<double> p(store, "pr", config(PerceptionStrategy::Spatial, 8, 4), 8, 6, 6);
  CHECK(p.spatial_units.size() == 8);
  CHECK(p.bottleneck() == 2);
  for (auto& [reduce, collapse] : p.spatial_units) {
    zero(reduce.bias);
    zero(collapse.weight);
    zero(collapse.bias);
  }
  for (double v : testutil::vec(p(Tensor<double>::zeros(Shape{1, 8, 6, 6})))) CHECK(v == 1.0);

  ParameterStore<double> store2(3);
  Perceiver<double> q(store2, "pr", config(PerceptionStrategy::Spatial, 8, 4), 8, 6, 6);
  std::mt19937_64 rng(4);
  auto one = testutil::random(Shape{1, 8, 6, 6}, rng, -3, 3);
  auto two = concat_channels<double>({one, one});
  auto same = q(reshape(two, Shape{2, 8, 6, 6}));
  for (std::size_t k = 0; k < 8; ++k) CHECK(same.data()[k] == same.data()[8 + k]);
  check_open_range(same);

  CHECK_THROWS_AS(Perceiver<double>(store2, "bad", config(PerceptionStrategy::Spatial), 8, 6, 6),
                  std::invalid_argument);
}

TEST_CASE("channel perception") {
  ParameterStore<double> store(5);
  Perceiver<double> p(store, "pr", config(PerceptionStrategy::Channel, 8, 4), 16, 5, 5);
  CHECK(p.bottleneck() == 4);
  for (auto& fc : p.channel_units) zero(fc.bias);
  for (double v : testutil::vec(p(Tensor<double>::zeros(Shape{2, 16, 5, 5})))) CHECK(v == 1.0);

  std::mt19937_64 rng(6);
  auto f = testutil::random(Shape{3, 16, 5, 5}, rng, -10, 10);
  check_open_range(p(f));

  // r = C leaves one hidden unit: weight = 2 sigmoid(w . avg + b)
  Perceiver<double> q(store, "narrow", config(PerceptionStrategy::Channel, 2, 16), 16, 5, 5);
  CHECK(q.bottleneck() == 1);
  const auto w = q(f);
  auto avg = reshape(global_avg_pool(f), Shape{3, 16});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& fc = q.channel_units[k];
      double z = fc.bias->value.data()[0];
      for (std::size_t c = 0; c < 16; ++c)
        z += avg.data()[n * 16 + c] * fc.weight->value.data()[c];
      CHECK(w.data()[n * 2 + k] == doctest::Approx(2.0 / (1.0 + std::exp(-z))));
    }
}

TEST_CASE("memory units are independent") {
  for (auto s : {PerceptionStrategy::Spatial, PerceptionStrategy::Channel}) {
    ParameterStore<double> store(7);
    Perceiver<double> p(store, "pr", config(s, 5, 2), 4, 6, 6);
    std::mt19937_64 rng(8);
    auto f = testutil::random(Shape{2, 4, 6, 6}, rng);
    const auto before = testutil::vec(p(f));
    if (s == PerceptionStrategy::Spatial) {
      zero(p.spatial_units[2].first.weight);
      zero(p.spatial_units[2].first.bias);
    } else {
      zero(p.channel_units[2].weight);
    }
    const auto after = testutil::vec(p(f));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 5; ++k) {
        if (k == 2)
          CHECK(after[n * 5 + k] != before[n * 5 + k]);
        else
          CHECK(after[n * 5 + k] == before[n * 5 + k]);
      }
  }
}

TEST_CASE("coupled softmax") {
  auto run = [](double a, double b, double c) {
    return testutil::vec(couple_softmax(Tensor<double>(Shape{1, 3}, {a, b, c})));
  };
  for (double v : run(0, 0, 0)) CHECK(v == doctest::Approx(1.0));
  for (double v : run(-7.5, -7.5, -7.5)) CHECK(v == doctest::Approx(1.0));
  const auto c = testutil::oracle("ops_values.json")["softmax"];
  const auto in = c["input"].get<std::vector<double>>();
  const auto w = run(in[0], in[1], in[2]);
  CHECK(testutil::max_abs_diff(w, c["coupled"].get<std::vector<double>>()) < 1e-12);
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[2] == doctest::Approx(1.5));

  std::mt19937_64 rng(9);
  auto raw = testutil::random(Shape{20, 3}, rng, -30, 30);
  const auto out = testutil::vec(couple_softmax(raw));
  auto shifted = testutil::vec(raw);
  for (auto& v : shifted) v += 4.25;
  const auto out2 = testutil::vec(couple_softmax(Tensor<double>(Shape{20, 3}, shifted)));
  for (std::size_t n = 0; n < 20; ++n) {
    CHECK(std::abs(out[3 * n] + out[3 * n + 1] + out[3 * n + 2] - 3.0) < 1e-9);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(out[3 * n + k] >= 0.0);
      CHECK(out[3 * n + k] <= 3.0);
      CHECK(std::abs(out[3 * n + k] - out2[3 * n + k]) < 1e-12);
    }
  }
}

TEST_CASE("apply regulation") {
  std::mt19937_64 rng(10);
  std::map<std::string, Tensor<double>> feats{
      {"i1", testutil::random(Shape{2, 3, 4, 4}, rng)},
      {"d2", testutil::random(Shape{2, 2, 4, 4}, rng)},
      {"g1", testutil::random(Shape{2, 1, 4, 4}, rng)}};
  const std::vector<std::string> names{"i1", "d2"};

  auto same = apply_regulation(feats, RegulationWeights<double>::constant(names, 2, 1.0));
  for (const auto& [k, v] : feats) CHECK(testutil::vec(same.at(k)) == testutil::vec(v));

  RegulationWeights<double> half(names, Tensor<double>(Shape{2, 2}, {0.5, 1.0, 0.5, 1.7}));
  auto out = apply_regulation(feats, half);
  for (std::size_t k = 0; k < feats.at("i1").numel(); ++k)
    CHECK(out.at("i1").data()[k] == 0.5 * feats.at("i1").data()[k]);
  CHECK(testutil::vec(out.at("g1")) == testutil::vec(feats.at("g1")));

  // the second sample of d2 is scaled by 1.7: argmax per channel is kept
  const auto src = testutil::vec(feats.at("d2"));
  const auto dst = testutil::vec(out.at("d2"));
  for (std::size_t c = 0; c < 4; ++c) {
    auto a = std::max_element(src.begin() + c * 16, src.begin() + (c + 1) * 16) - src.begin();
    auto b = std::max_element(dst.begin() + c * 16, dst.begin() + (c + 1) * 16) - dst.begin();
    CHECK(a == b);
  }

  feats.erase("d2");
  CHECK_THROWS_AS(apply_regulation(feats, half), std::invalid_argument);
}

TEST_CASE("gradients reach the backbone through perception") {
  ParameterStore<double> store(11);
  Conv2d<double> backbone(store, "backbone", 2, 4, 3, {1, 1, 1});
  Perceiver<double> p(store, "pr", config(PerceptionStrategy::Channel, 1, 2), 4, 5, 5);
  std::mt19937_64 rng(12);
  auto x = testutil::random(Shape{2, 2, 5, 5}, rng);
  // the loss sees the backbone only through the perceiver
  backward(sum_all(p(backbone(x))));
  bool nonzero = false;
  for (double g : backbone.weight->value.grad()) nonzero |= g != 0.0;
  CHECK(nonzero);
}
