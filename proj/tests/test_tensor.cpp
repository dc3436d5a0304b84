#include <doctest.h>

#include "prnet/layers.hpp"
#include "test_util.hpp"

using namespace prnet;

TEST_CASE("shape numel matches data length") {
  Tensor<float> t(Shape{2, 3, 4, 5}, std::vector<float>(120, 1.0f));
  CHECK(t.numel() == 120);
  CHECK(t.shape().numel() == 120);
  CHECK(t.shape().str() == "[2x3x4x5]");
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("grad of sum(w * x) is x") {
  Tensor<double> w(Shape{4}, {0.5, -1.0, 2.0, 3.0}, true);
  Tensor<double> x(Shape{4}, {1.0, 2.0, 3.0, 4.0});
  backward(sum_all(mul(w, x)));
  const auto g = w.grad();
  CHECK(g == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Tensor<double> w(Shape{1}, {0.0}, true);
  auto y = sigmoid(w);
  CHECK(y.item() == doctest::Approx(0.5));
  backward(y);
  CHECK(w.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("gradients accumulate and zero_grad clears them") {
  Tensor<double> w(Shape{2}, {1.0, 2.0}, true);
  backward(sum_all(scale(w, 3.0)));
  backward(sum_all(scale(w, 3.0)));
  CHECK(w.grad() == std::vector<double>{6.0, 6.0});
  w.zero_grad();
  CHECK(w.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("tape replays every recorded op once") {
  Tensor<double> a(Shape{3}, {1, 2, 3}, true);
  auto b = sigmoid(a);
  auto c = mul(b, b);  // b reached twice
  auto d = add(c, a);
  auto loss = sum_all(d);
  auto tape = Tape<double>::record(loss);
  // leaf a plus sigmoid, mul, add, sum_all
  CHECK(tape.size() == 5);
  loss.node()->ensure_grad()[0] = 1.0;
  CHECK(tape.replay_backward() == 4);
  const auto g = a.grad();
  for (std::size_t k = 0; k < 3; ++k) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(k + 1)));
    CHECK(g[k] == doctest::Approx(2.0 * s * s * (1.0 - s) + 1.0));
  }
}

TEST_CASE("no-grad mode records nothing") {
  Tensor<double> a(Shape{2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_mode_enabled());
    y = relu(a);
  }
  CHECK(grad_mode_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("detach cuts the graph") {
  Tensor<double> a(Shape{2}, {1, 2}, true);
  auto d = scale(a, 2.0).detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.data()[1] == 4.0);
}

TEST_CASE("all_finite") {
  std::vector<float> ok{1.0f, -2.0f}, bad{1.0f, std::nanf("")};
  CHECK(all_finite<float>(ok));
  CHECK_FALSE(all_finite<float>(bad));
}

TEST_CASE("parameter store names are unique and momentum starts at zero") {
  ParameterStore<float> store(3);
  auto* p = store.create_uniform("a.weight", Shape{2, 2}, 0.5f);
  CHECK(p->momentum == std::vector<float>(4, 0.0f));
  CHECK(p->value.requires_grad());
  for (float v : p->value.data()) CHECK(std::abs(v) <= 0.5f);
  CHECK_THROWS(store.create_uniform("a.weight", Shape{1}, 0.1f));
  CHECK(store.find("a.weight") == p);
  CHECK(store.find("missing") == nullptr);
}

TEST_CASE("branch log replays relu masks and pooling winners") {
  Tensor<double> x(Shape{1, 1, 2, 2}, {-1.0, 2.0, 3.0, 0.5});
  BranchLog log;
  auto r = relu(x);
  auto m = max_pool2d(x, 2, 2);
  CHECK(log.entries() == 2);
  log.replay();
  auto data = x.mutable_data();
  data[0] = 0.25;  // would now pass the relu
  data[1] = 5.0;   // would now win the pool
  auto r2 = relu(x);
  auto m2 = max_pool2d(x, 2, 2);
  CHECK(r2.data()[0] == 0.0);
  CHECK(m2.item() == 3.0);
  log.replay();
  CHECK_NOTHROW(relu(x));
  CHECK_THROWS_AS(relu(Tensor<double>(Shape{3}, {1, 2, 3})), std::logic_error);
  (void)r;
  (void)m;
}
