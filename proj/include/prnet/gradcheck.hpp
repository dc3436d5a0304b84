#pragma once

// Central finite-difference checks of reverse-mode gradients at 64 bits.
// Perturbed evaluations replay the branches (relu masks, pooling winners,
// loss clamps) of the unperturbed pass.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "prnet/network.hpp"

namespace prnet {

struct GradCheckOptions {
  double step = 1e-5;
  // (8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h instead of the two-point rule.
  bool fourth_order = false;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - b| / max(|a|, |b|, floor).
  double floor = 1e-6;
  // Elements checked per case; 0 checks every element.
  std::size_t max_checks = 0;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // leaf and element of the largest error
  double seconds = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

double relative_error(double analytic, double numeric, double floor);

using GraphFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Checks d<r, fn(leaves)>/d leaf for every leaf that requires grad, where r
// is a fixed random weighting of the output.
GradCheckResult check_gradients(const std::string& name,
                                const std::vector<Tensor<double>>& leaves,
                                const GraphFn& fn, std::mt19937_64& rng,
                                const GradCheckOptions& opt = {});

// Eval-mode BCE + CEL loss of `model` on one image; checks `tensors` random
// parameter tensors (the largest-gradient element of each), always including
// perception ones.
GradCheckResult check_model_gradients(const std::string& name,
                                      Model<double>& model,
                                      std::size_t tensors, std::mt19937_64& rng,
                                      const GradCheckOptions& opt = {});

// Every differentiable op on five random shapes at h = 1e-5, then the
// end-to-end graphs with the fourth-order rule at h = 1e-4.
// Runs with scalar kernels so results are reproducible.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed,
                                                std::ostream* log = nullptr);

}  // namespace prnet
