#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "prnet/tensor.hpp"

namespace testutil {

inline nlohmann::json oracle(const std::string& file) {
  std::ifstream in(std::string(PRNET_ORACLE_DIR) + "/" + file);
  REQUIRE_MESSAGE(in.good(), "missing oracle file " << file);
  return nlohmann::json::parse(in);
}

template <typename T = double>
prnet::Tensor<T> random(prnet::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(u(rng));
  return prnet::Tensor<T>(std::move(shape), std::move(v), grad);
}

template <typename T>
std::vector<T> vec(const prnet::Tensor<T>& t) {
  const auto d = t.data();
  return {d.begin(), d.end()};
}

inline std::vector<std::size_t> dims(const nlohmann::json& j) {
  return j.get<std::vector<std::size_t>>();
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max(m, std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k])));
  return m;
}

}  // namespace testutil
