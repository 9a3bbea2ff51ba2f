#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshalign/autodiff.hpp"

namespace meshalign {

using DiffFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradientCheck {
  /// max over inputs of ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-10)
  double max_rel_error = 0.0;
  std::size_t elements = 0;
};

/// Compares reverse-mode gradients of <r, f(inputs)> against central finite
/// differences, where r is a fixed random projection drawn from `seed`. Only
/// inputs flagged in `differentiate` (default: all) are perturbed.
GradientCheck check_gradients(const DiffFunction& f, const std::vector<NdArray>& inputs,
                              std::uint64_t seed, double step = 1e-5,
                              std::vector<bool> differentiate = {});

struct OpCheckResult {
  std::string op;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return rel_error < tolerance; }
};

/// Names of every differentiable operation covered by the built-in checks.
std::vector<std::string> gradcheck_ops();

/// Runs the built-in randomized check for one op. Throws std::invalid_argument
/// for unknown names.
OpCheckResult run_gradcheck(const std::string& op, std::uint64_t seed);

}  // namespace meshalign
