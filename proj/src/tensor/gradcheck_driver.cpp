#include <algorithm>
#include <cmath>
#include <random>

#include "meshalign/gradcheck.hpp"

namespace meshalign {

namespace {

double projected(const NdArray& out, const NdArray& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * weights[i];
  return acc;
}

double evaluate(const DiffFunction& f, const std::vector<NdArray>& inputs,
                const NdArray& weights) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const NdArray& in : inputs) vars.push_back(tape.constant(in));
  return projected(f(tape, vars).value(), weights);
}

}  // namespace

GradientCheck check_gradients(const DiffFunction& f, const std::vector<NdArray>& inputs,
                              std::uint64_t seed, double step, std::vector<bool> differentiate) {
  if (differentiate.empty()) differentiate.assign(inputs.size(), true);

  Tape tape;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(tape.leaf(inputs[i], differentiate[i]));
  Var out = f(tape, vars);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  NdArray weights(out.shape());
  for (double& v : weights.data()) v = dist(rng);
  Var loss = sum(mul(out, tape.constant(weights)));
  tape.backward(loss);

  GradientCheck result;
  std::vector<NdArray> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiate[i]) continue;
    const NdArray* analytic = vars[i].grad();
    NdArray zero(inputs[i].shape(), 0.0);
    if (!analytic) analytic = &zero;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double original = work[i][e];
      work[i][e] = original + step;
      const double plus = evaluate(f, work, weights);
      work[i][e] = original - step;
      const double minus = evaluate(f, work, weights);
      work[i][e] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = (*analytic)[e];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++result.elements;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-10});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
  }
  return result;
}

}  // namespace meshalign
