#include "prnet/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "prnet/simd.hpp"
#include "prnet/training.hpp"

namespace prnet {

namespace {

using Clock = std::chrono::steady_clock;
using TD = Tensor<double>;

struct Element {
  std::size_t leaf;
  std::size_t index;
};

TD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                 double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v), requires_grad);
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

GradCheckResult run_check(const std::string& name,
                          const std::vector<TD>& leaves_in, const GraphFn& fn,
                          std::vector<Element> elements, std::mt19937_64& rng,
                          const GradCheckOptions& opt) {
  const auto start = Clock::now();
  std::vector<TD> leaves = leaves_in;
  GradCheckResult res;
  res.name = name;
  res.tolerance = opt.tolerance;

  BranchLog branches;
  TD out = fn(leaves);
  TD weights = random_tensor(out.shape(), rng, -1.0, 1.0, false);
  for (auto& l : leaves)
    if (l.requires_grad()) l.zero_grad();
  backward(sum_all(mul(out, weights)));

  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) analytic.push_back(l.grad());

  auto evaluate = [&] {
    NoGradGuard guard;
    branches.replay();
    TD o = fn(leaves);
    double acc = 0.0;
    for (std::size_t k = 0; k < o.numel(); ++k)
      acc += o.data()[k] * weights.data()[k];
    return acc;
  };

  if (opt.max_checks && elements.size() > opt.max_checks) {
    std::shuffle(elements.begin(), elements.end(), rng);
    elements.resize(opt.max_checks);
  }
  for (const Element& e : elements) {
    TD leaf = leaves[e.leaf];
    auto data = leaf.mutable_data();
    const double orig = data[e.index];
    auto at = [&](double offset) {
      data[e.index] = orig + offset;
      return evaluate();
    };
    const double h = opt.step;
    const double numeric =
        opt.fourth_order
            ? (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
            : (at(h) - at(-h)) / (2.0 * h);
    data[e.index] = orig;
    const double err = relative_error(analytic[e.leaf][e.index], numeric, opt.floor);
    ++res.checked;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = "leaf " + std::to_string(e.leaf) + "[" +
                  std::to_string(e.index) + "] analytic " +
                  std::to_string(analytic[e.leaf][e.index]) + " numeric " +
                  std::to_string(numeric);
    }
  }
  res.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return res;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

GradCheckResult check_gradients(const std::string& name,
                                const std::vector<Tensor<double>>& leaves,
                                const GraphFn& fn, std::mt19937_64& rng,
                                const GradCheckOptions& opt) {
  std::vector<Element> elements;
  for (std::size_t l = 0; l < leaves.size(); ++l)
    if (leaves[l].defined() && leaves[l].requires_grad())
      for (std::size_t k = 0; k < leaves[l].numel(); ++k)
        elements.push_back({l, k});
  return run_check(name, leaves, fn, std::move(elements), rng, opt);
}

GradCheckResult check_model_gradients(const std::string& name,
                                      Model<double>& model, std::size_t tensors,
                                      std::mt19937_64& rng,
                                      const GradCheckOptions& opt) {
  const std::size_t S = model.config().input_size;
  const TD image = random_tensor(Shape{1, 3, S, S}, rng, 0.0, 1.0, false);
  std::vector<double> m(S * S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double dy = static_cast<double>(y) - S / 2.0;
      const double dx = static_cast<double>(x) - S / 3.0;
      m[y * S + x] = dx * dx + dy * dy < (S * S) / 10.0 ? 1.0 : 0.0;
    }
  const TD mask(Shape{1, 1, S, S}, std::move(m));

  const auto params = model.store().parameters();
  std::vector<TD> leaves;
  std::vector<std::size_t> perception, other;
  for (std::size_t k = 0; k < params.size(); ++k) {
    leaves.push_back(params[k]->value);
    (params[k]->name.find(".pr.") != std::string::npos ? perception : other)
        .push_back(k);
  }
  std::shuffle(perception.begin(), perception.end(), rng);
  std::shuffle(other.begin(), other.end(), rng);
  std::vector<std::size_t> chosen(
      perception.begin(),
      perception.begin() + std::min<std::size_t>(perception.size(), tensors / 5));
  for (std::size_t k = 0; chosen.size() < tensors && k < other.size(); ++k)
    chosen.push_back(other[k]);
  std::vector<Element> elements;
  // One element per tensor: the one with the largest analytic gradient.
  model.store().zero_grad();
  {
    auto out = model.forward(image, NormMode::Eval);
    backward(saliency_loss(out.prediction, mask).total);
  }
  for (std::size_t k : chosen) {
    const auto g = leaves[k].grad();
    std::size_t best = 0;
    for (std::size_t j = 1; j < g.size(); ++j)
      if (std::abs(g[j]) > std::abs(g[best])) best = j;
    elements.push_back({k, best});
  }

  GraphFn fn = [&](const std::vector<TD>&) {
    auto out = model.forward(image, NormMode::Eval);
    return saliency_loss(out.prediction, mask).total;
  };
  GradCheckOptions o = opt;
  o.max_checks = 0;
  return run_check(name, leaves, fn, std::move(elements), rng, o);
}

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed,
                                                std::ostream* log) {
  simd::ScopedIsa scalar(simd::Isa::Scalar);
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> results;
  auto record = [&](GradCheckResult r) {
    if (log)
      *log << (r.passed() ? "ok   " : "FAIL ") << r.name << "  checked "
           << r.checked << "  max rel err " << r.max_rel_error << "  ("
           << r.seconds << " s)" << (r.passed() ? "" : "  worst " + r.worst)
           << '\n';
    results.push_back(std::move(r));
  };
  auto shape4 = [&](std::size_t nmin, std::size_t cmax, std::size_t smin,
                    std::size_t smax) {
    return Shape{pick(rng, nmin, 2), pick(rng, 1, cmax), pick(rng, smin, smax),
                 pick(rng, smin, smax)};
  };
  auto even4 = [&]() {
    return Shape{pick(rng, 1, 2), pick(rng, 1, 3), 2 * pick(rng, 1, 3),
                 2 * pick(rng, 1, 3)};
  };

  for (int trial = 0; trial < 5; ++trial) {
    const std::string t = "#" + std::to_string(trial);
    {
      const std::size_t K = trial % 2 ? 3 : 1 + 2 * (trial % 3 == 0);
      const Conv2dOptions opt{pick(rng, 1, 2), pick(rng, 0, 2), pick(rng, 1, 3)};
      const std::size_t span = opt.dilation * (K - 1) + 1;
      const std::size_t lo = span > 2 * opt.pad ? span - 2 * opt.pad : 1;
      const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, std::max<std::size_t>(lo, 3), 7),
                    pick(rng, std::max<std::size_t>(lo, 3), 7)};
      const std::size_t O = pick(rng, 1, 3);
      auto x = random_tensor(s, rng);
      auto w = random_tensor(Shape{O, s.c(), K, K}, rng);
      auto b = random_tensor(Shape{O}, rng);
      record(check_gradients("conv2d" + t, {x, w, b}, [=](const std::vector<TD>& l) {
        return conv2d(l[0], l[1], l[2], opt);
      }, rng));
    }
    {
      auto x = random_tensor(even4(), rng);
      record(check_gradients("max_pool2d" + t, {x}, [](const std::vector<TD>& l) {
        return max_pool2d(l[0], 2, 2);
      }, rng));
      record(check_gradients("avg_pool2d" + t, {x}, [](const std::vector<TD>& l) {
        return avg_pool2d(l[0], 2, 2);
      }, rng));
    }
    {
      auto x = random_tensor(shape4(1, 3, 1, 6), rng);
      record(check_gradients("global_avg_pool" + t, {x}, [](const std::vector<TD>& l) {
        return global_avg_pool(l[0]);
      }, rng));
      const std::size_t oh = pick(rng, 1, x.shape().h()), ow = pick(rng, 1, x.shape().w());
      record(check_gradients("adaptive_max_pool" + t, {x}, [=](const std::vector<TD>& l) {
        return adaptive_max_pool(l[0], oh, ow);
      }, rng));
      const std::size_t rh = pick(rng, 1, 9), rw = pick(rng, 1, 9);
      record(check_gradients("resize_bilinear" + t, {x}, [=](const std::vector<TD>& l) {
        return resize_bilinear(l[0], rh, rw);
      }, rng));
      record(check_gradients("relu" + t, {x}, [](const std::vector<TD>& l) {
        return relu(l[0]);
      }, rng));
      record(check_gradients("sigmoid" + t, {x}, [](const std::vector<TD>& l) {
        return sigmoid(l[0]);
      }, rng));
      record(check_gradients("scale" + t, {x}, [](const std::vector<TD>& l) {
        return scale(l[0], 2.5);
      }, rng));
      record(check_gradients("flip_horizontal" + t, {x}, [](const std::vector<TD>& l) {
        return flip_horizontal(l[0]);
      }, rng));
      record(check_gradients("reductions" + t, {x}, [](const std::vector<TD>& l) {
        return add(scale(sum_all(l[0]), 0.5), mean_all(l[0]));
      }, rng));
      auto y = random_tensor(x.shape(), rng);
      auto z = random_tensor(x.shape(), rng);
      record(check_gradients("add_mul" + t, {x, y, z}, [](const std::vector<TD>& l) {
        return add_n<double>({mul(l[0], l[1]), add(l[1], l[2]), l[2]});
      }, rng));
      const Shape& s = x.shape();
      auto w = random_tensor(Shape{s.n(), 1}, rng);
      auto map = random_tensor(Shape{s.n(), 1, s.h(), s.w()}, rng);
      record(check_gradients("scale_per_sample" + t, {x, w}, [](const std::vector<TD>& l) {
        return scale_per_sample(l[0], l[1]);
      }, rng));
      record(check_gradients("mul_channel_broadcast" + t, {x, map},
                             [](const std::vector<TD>& l) {
        return mul_channel_broadcast(l[0], l[1]);
      }, rng));
      auto c2 = random_tensor(Shape{s.n(), pick(rng, 1, 3), s.h(), s.w()}, rng);
      record(check_gradients("concat_slice_split" + t, {x, c2}, [](const std::vector<TD>& l) {
        auto cat = concat_channels<double>({l[0], l[1]});
        const std::size_t C = cat.shape().c();
        auto parts = split_channels(cat, C);
        std::reverse(parts.begin(), parts.end());
        return add(concat_channels(parts), scale(concat_channels<double>(
            {slice_channels(cat, 1, C - 1), slice_channels(cat, 0, 1)}), 0.5));
      }, rng));
      record(check_gradients("reshape_flatten" + t, {x}, [](const std::vector<TD>& l) {
        auto f = flatten(l[0]);
        return reshape(f, Shape{f.numel()});
      }, rng));
    }
    {
      auto x = random_tensor(even4(), rng);
      record(check_gradients("quadrant_split_merge" + t, {x}, [](const std::vector<TD>& l) {
        auto q = quadrant_split(l[0]);
        return quadrant_merge<double>({scale(q[3], 2.0), q[0], q[2], q[1]});
      }, rng));
    }
    {
      const std::size_t N = pick(rng, 1, 3), D = pick(rng, 1, 5), M = pick(rng, 1, 4);
      auto x = random_tensor(Shape{N, D}, rng);
      auto w = random_tensor(Shape{D, M}, rng);
      auto b = random_tensor(Shape{M}, rng);
      record(check_gradients("affine" + t, {x, w, b}, [](const std::vector<TD>& l) {
        return affine(l[0], l[1], l[2]);
      }, rng));
      auto r = random_tensor(Shape{N, M}, rng, -3.0, 3.0);
      record(check_gradients("softmax_rows" + t, {r}, [](const std::vector<TD>& l) {
        return softmax_rows(l[0]);
      }, rng));
      record(check_gradients("select_row_mean" + t, {r}, [M](const std::vector<TD>& l) {
        return add(select_column(l[0], M - 1), row_mean(l[0]));
      }, rng));
      auto raw = random_tensor(Shape{N, 3}, rng, -3.0, 3.0);
      record(check_gradients("couple_softmax" + t, {raw}, [](const std::vector<TD>& l) {
        return couple_softmax(l[0]);
      }, rng));
    }
    {
      const Shape s = shape4(2, 3, 1, 4);
      auto x = random_tensor(s, rng, -2.0, 2.0);
      auto g = random_tensor(Shape{s.c()}, rng, 0.5, 1.5);
      auto b = random_tensor(Shape{s.c()}, rng);
      record(check_gradients("batch_norm_train" + t, {x, g, b}, [](const std::vector<TD>& l) {
        BatchNormState<double> st(l[0].shape().c());
        return batch_norm(l[0], l[1], l[2], st, NormMode::Train);
      }, rng));
      BatchNormState<double> eval_state(s.c());
      for (auto& v : eval_state.running_mean) v = 0.3;
      for (auto& v : eval_state.running_var) v = 1.7;
      record(check_gradients("batch_norm_eval" + t, {x, g, b},
                             [eval_state](const std::vector<TD>& l) mutable {
        return batch_norm(l[0], l[1], l[2], eval_state, NormMode::Eval);
      }, rng));
    }
    {
      const Shape s{pick(rng, 1, 3), 1, pick(rng, 2, 6), pick(rng, 2, 6)};
      auto p = random_tensor(s, rng, 0.05, 0.95);
      auto gv = random_tensor(s, rng, 0.0, 1.0, false);
      std::vector<double> bin(gv.numel());
      for (std::size_t k = 0; k < bin.size(); ++k) bin[k] = gv.data()[k] < 0.5 ? 0.0 : 1.0;
      TD g(s, std::move(bin));
      record(check_gradients("bce_loss" + t, {p, g}, [](const std::vector<TD>& l) {
        return bce_loss(l[0], l[1]);
      }, rng));
      record(check_gradients("cel_loss" + t, {p, g}, [](const std::vector<TD>& l) {
        return cel_loss(l[0], l[1]);
      }, rng));
    }
    {
      // Perceivers: parameters are leaves of the store, the feature a leaf too.
      const std::size_t C = 4, H = 4, W = 4, N = pick(rng, 1, 2);
      auto f = random_tensor(Shape{N, C, H, W}, rng);
      for (PerceptionStrategy strat :
           {PerceptionStrategy::FullyConnected, PerceptionStrategy::Spatial,
            PerceptionStrategy::Channel}) {
        auto store = std::make_shared<ParameterStore<double>>(rng());
        PerceptionConfig cfg;
        cfg.strategy = strat;
        cfg.pooled_h = cfg.pooled_w = 2;
        cfg.reduction = 2;
        cfg.regulated_count = 3;
        auto per = std::make_shared<Perceiver<double>>(*store, "pr", cfg, C, H, W);
        std::vector<TD> leaves{f};
        for (auto* p : store->parameters()) leaves.push_back(p->value);
        record(check_gradients(std::string("perceive_") + strategy_name(strat) + t,
                               leaves, [store, per](const std::vector<TD>& l) {
          return (*per)(l[0]);
        }, rng));
      }
    }
    {
      const std::size_t C = pick(rng, 1, 2);
      auto store = std::make_shared<ParameterStore<double>>(rng());
      auto params = std::make_shared<PvmParams<double>>(*store, "pvm", C);
      auto f = random_tensor(Shape{1, C, 4, 4}, rng);
      std::vector<TD> leaves{f};
      for (auto* p : store->parameters()) leaves.push_back(p->value);
      record(check_gradients("pvm" + t, leaves, [store, params](const std::vector<TD>& l) {
        return pvm_modulate(l[0], pvm(l[0], *params));
      }, rng));
    }
  }

  // End-to-end graphs.
  {
    auto store = std::make_shared<ParameterStore<double>>(rng());
    PerceptionConfig cfg;
    cfg.reduction = 2;
    auto ieo = std::make_shared<Ieo<double>>(*store, "ieo", 2, cfg, 2, 4, 4);
    auto f1 = random_tensor(Shape{1, 2, 8, 8}, rng);
    auto perception = random_tensor(Shape{1, 2, 4, 4}, rng);
    std::vector<TD> leaves{f1, perception};
    for (auto* p : store->parameters()) leaves.push_back(p->value);
    GradCheckOptions o;
    o.max_checks = 400;
    record(check_gradients("ieo_forward", leaves, [store, ieo](const std::vector<TD>& l) {
      return ieo->forward(l[0], l[1]).output;
    }, rng, o));
  }
  auto model_case = [&](const std::string& name, ModelConfig cfg) {
    cfg.seed = rng();
    Model<double> model(cfg);
    GradCheckOptions o;
    o.step = 1e-4;
    o.fourth_order = true;
    record(check_model_gradients(name, model, 20, rng, o));
  };
  {
    ModelConfig c;
    c.input_size = 64;
    model_case("fpn_pr_end_to_end", c);
    c.decoder = DecoderVariant::Ggs;
    model_case("ggs_pr_end_to_end", c);
    c.decoder = DecoderVariant::Fpn;
    c.cfe_enabled = true;
    model_case("cfe_pr_end_to_end", c);
    model_case("prnet_end_to_end", ModelConfig::toy_prnet());
  }
  return results;
}

}  // namespace prnet
