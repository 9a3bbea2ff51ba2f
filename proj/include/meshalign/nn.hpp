#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "meshalign/autodiff.hpp"

namespace meshalign {

/// Named, ordered collection of trainable arrays. Layers refer to entries by
/// index; the order is also the checkpoint order.
class ParameterSet {
 public:
  std::size_t add(std::string name, NdArray init);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  NdArray& value(std::size_t i) { return values_.at(i); }
  const NdArray& value(std::size_t i) const { return values_.at(i); }
  /// Index of a parameter by name; throws std::out_of_range when absent.
  std::size_t index(const std::string& name) const;
  std::size_t element_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<NdArray> values_;
};

/// Leaf Vars for every parameter of a set on one tape.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad = true);

  const Var& operator[](std::size_t i) const { return vars_.at(i); }
  std::size_t size() const noexcept { return vars_.size(); }
  /// Substitutes another Var (same shape) for parameter i.
  void replace(std::size_t i, Var v);
  /// Gradient per parameter after backward; zeros where none arrived.
  std::vector<NdArray> gradients() const;

 private:
  std::vector<Var> vars_;
};

struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct LinearLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

enum class Init { HeUniform, Zero };

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t in,
                    std::size_t out, std::size_t kernel, std::size_t stride,
                    std::size_t padding, std::mt19937_64& rng, Init init = Init::HeUniform);

LinearLayer make_linear(ParameterSet& params, const std::string& name, std::size_t in,
                        std::size_t out, std::mt19937_64& rng, Init init = Init::HeUniform);

Var apply(const ConvLayer& layer, const BoundParameters& p, const Var& x);
Var apply(const LinearLayer& layer, const BoundParameters& p, const Var& x);

}  // namespace meshalign
