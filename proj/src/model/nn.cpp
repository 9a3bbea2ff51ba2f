#include "meshalign/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace meshalign {

std::size_t ParameterSet::add(std::string name, NdArray init) {
  for (const auto& n : names_)
    if (n == name) throw std::invalid_argument("ParameterSet: duplicate name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw std::out_of_range("ParameterSet: no parameter named " + name);
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    vars_.push_back(tape.leaf(params.value(i), requires_grad, params.name(i)));
}

void BoundParameters::replace(std::size_t i, Var v) {
  if (v.shape() != vars_.at(i).shape())
    throw ShapeError("BoundParameters::replace: shape " + to_string(v.shape()) + " differs from " +
                     to_string(vars_[i].shape()));
  vars_[i] = std::move(v);
}

std::vector<NdArray> BoundParameters::gradients() const {
  std::vector<NdArray> out;
  out.reserve(vars_.size());
  for (const Var& v : vars_) {
    const NdArray* g = v.grad();
    out.push_back(g ? *g : NdArray(v.shape(), 0.0));
  }
  return out;
}

namespace {

NdArray init_array(Shape shape, std::size_t fan_in, std::mt19937_64& rng, Init init) {
  NdArray out(std::move(shape), 0.0);
  if (init == Init::Zero) return out;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

}  // namespace

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t in,
                    std::size_t out, std::size_t kernel, std::size_t stride,
                    std::size_t padding, std::mt19937_64& rng, Init init) {
  ConvLayer layer;
  layer.weight = params.add(name + ".weight",
                            init_array({out, in, kernel, kernel}, in * kernel * kernel, rng, init));
  layer.bias = params.add(name + ".bias", NdArray({out}, 0.0));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

LinearLayer make_linear(ParameterSet& params, const std::string& name, std::size_t in,
                        std::size_t out, std::mt19937_64& rng, Init init) {
  LinearLayer layer;
  layer.weight = params.add(name + ".weight", init_array({out, in}, in, rng, init));
  layer.bias = params.add(name + ".bias", NdArray({out}, 0.0));
  return layer;
}

Var apply(const ConvLayer& layer, const BoundParameters& p, const Var& x) {
  return conv2d(x, p[layer.weight], p[layer.bias], {layer.stride, layer.padding});
}

Var apply(const LinearLayer& layer, const BoundParameters& p, const Var& x) {
  return linear(x, p[layer.weight], p[layer.bias]);
}

}  // namespace meshalign
