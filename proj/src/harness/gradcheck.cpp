#include <functional>
#include <map>
#include <random>
#include <stdexcept>

#include "meshalign/correlation.hpp"
#include "meshalign/geometry.hpp"
#include "meshalign/gradcheck.hpp"
#include "meshalign/losses.hpp"

namespace meshalign {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kWarpTolerance = 1e-3;

struct Case {
  double tolerance;
  std::function<double(std::uint64_t)> run;  // returns max rel error
};

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed * 0x2545f4914f6cdd1dULL + 17) {}

  std::size_t extent(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  NdArray array(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    NdArray out(std::move(shape));
    for (double& v : out.data()) v = d(rng_);
    return out;
  }
  std::uint64_t seed() { return rng_(); }
  Mask mask(std::size_t h, std::size_t w) {
    Mask m(h, w, 0.0);
    for (double& v : m.values) v = (rng_() % 4 != 0) ? 1.0 : 0.0;
    return m;
  }

 private:
  std::mt19937_64 rng_;
};

double check(Draw& d, const DiffFunction& f, std::vector<NdArray> inputs) {
  return check_gradients(f, inputs, d.seed()).max_rel_error;
}

Image as_image(const NdArray& a) {
  Image img(a.dim(1), a.dim(2), a.dim(0));
  img.values.assign(a.raw(), a.raw() + a.size());
  return img;
}

const std::map<std::string, Case>& registry() {
  static const std::map<std::string, Case> cases = {
      {"elementwise",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const Shape shape{d.extent(1, 4), d.extent(1, 5)};
          return check(d,
                       [](Tape&, std::span<const Var> in) {
                         const Var prod = mul(add(in[0], in[1]), sub(in[0], mul(in[1], 0.5)));
                         return add(relu(prod), abs(sub(in[1], in[0])));
                       },
                       {d.array(shape), d.array(shape)});
        }}},
      {"matmul",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t m = d.extent(1, 5), k = d.extent(1, 5), n = d.extent(1, 5);
          return check(d, [](Tape&, std::span<const Var> in) { return matmul(in[0], in[1]); },
                       {d.array({m, k}), d.array({k, n})});
        }}},
      {"conv2d",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t ci = d.extent(1, 3), co = d.extent(1, 3), k = 2 * d.extent(0, 1) + 1;
          const std::size_t stride = d.extent(1, 2), pad = d.extent(0, 1);
          return check(d,
                       [=](Tape&, std::span<const Var> in) { return conv2d(in[0], in[1], in[2], {stride, pad}); },
                       {d.array({ci, d.extent(k, 7), d.extent(k, 7)}), d.array({co, ci, k, k}), d.array({co})});
        }}},
      {"maxpool2d",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          return check(d, [](Tape&, std::span<const Var> in) { return maxpool2d(in[0]); },
                       {d.array({d.extent(1, 3), d.extent(1, 7), d.extent(1, 7)})});
        }}},
      {"reshape_permute",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t a = d.extent(1, 3), b = d.extent(1, 3), c = d.extent(1, 3), e = d.extent(1, 3);
          return check(d,
                       [=](Tape&, std::span<const Var> in) {
                         return mul(permute(reshape(in[0], {a, b, c, e}), {2, 3, 0, 1}), in[1]);
                       },
                       {d.array({a * b, c * e}), d.array({c, e, a, b})});
        }}},
      {"pad_concat",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t h1 = d.extent(1, 4), w1 = d.extent(1, 4), h2 = d.extent(1, 4), w2 = d.extent(1, 4);
          return check(d,
                       [=](Tape&, std::span<const Var> in) {
                         const Var parts[] = {in[0], in[1]};
                         return pad_concat(parts, std::max(h1, h2), std::max(w1, w2));
                       },
                       {d.array({d.extent(1, 3), h1, w1}), d.array({d.extent(1, 3), h2, w2})});
        }}},
      {"grid_sample",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t h = d.extent(2, 6), w = d.extent(2, 6);
          NdArray grid = d.array({d.extent(1, 5), d.extent(1, 5), 2});
          for (std::size_t i = 0; i < grid.size(); ++i)
            grid[i] = (grid[i] + 1.0) * 0.5 * static_cast<double>((i % 2 ? h : w) - 1) + 0.37;
          return check(d, [](Tape&, std::span<const Var> in) { return grid_sample(in[0], in[1]); },
                       {d.array({d.extent(1, 3), h, w}), grid});
        }}},
      {"linear",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t in = d.extent(1, 6), out = d.extent(1, 4);
          return check(d, [](Tape&, std::span<const Var> v) { return linear(v[0], v[1], v[2]); },
                       {d.array({in}), d.array({out, in}), d.array({out})});
        }}},
      {"corr4d",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t c = d.extent(1, 4);
          return check(d, [](Tape&, std::span<const Var> in) { return corr4d(in[0], in[1], true); },
                       {d.array({c, d.extent(1, 4), d.extent(1, 4)}), d.array({c, d.extent(1, 4), d.extent(1, 4)})});
        }}},
      {"fsc_regress",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t c = d.extent(2, 3), h1 = d.extent(2, 4), w1 = d.extent(2, 4);
          const std::size_t h2 = d.extent(2, 4), w2 = d.extent(2, 4);
          HeadSpec spec;
          spec.compressed_channels = 3;
          spec.trunk_channels = 3;
          spec.hidden = 5;
          ParameterSet params;
          std::mt19937_64 rng(d.seed());
          const FscHead head = make_head(params, "h", CorrelationKind::Fsc, h1, w1, h2, w2, 8, spec, rng);
          for (std::size_t i = 0; i < params.size(); ++i) params.value(i) = d.array(params.value(i).shape(), -0.6, 0.6);
          return check(d,
                       [&](Tape& t, std::span<const Var> in) {
                         BoundParameters p(t, params, false);
                         return fsc_regress(head, p, in[0], in[1]);
                       },
                       {d.array({c, h1, w1}), d.array({c, h2, w2})});
        }}},
      {"dlt_solve",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t h = d.extent(16, 64), w = d.extent(16, 64);
          return check(d, [=](Tape&, std::span<const Var> in) { return dlt_solve(in[0], h, w); },
                       {d.array({4, 2}, -4.0, 4.0)});
        }}},
      {"apply_homography",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          NdArray H = d.array({3, 3}, -0.05, 0.05);
          H[0] += 1.0;
          H[4] += 1.0;
          H[8] = 1.0;
          for (std::size_t i : {6u, 7u}) H[i] *= 0.01;
          return check(d, [](Tape&, std::span<const Var> in) { return apply_homography(in[0], in[1]); },
                       {d.array({d.extent(1, 4), d.extent(1, 4), 2}, 0.0, 30.0), H});
        }}},
      {"mesh_to_flow",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t h = d.extent(6, 14), w = d.extent(6, 14), rows = d.extent(2, 4), cols = d.extent(2, 4);
          NdArray mesh = regular_mesh(rows, cols, h, w).to_array();
          mesh += d.array(mesh.shape(), -1.5, 1.5);
          return check(d, [=](Tape&, std::span<const Var> in) { return mesh_to_flow(in[0], h, w); }, {mesh});
        }}},
      {"warp_image",
       {kWarpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t h = d.extent(8, 14), w = d.extent(8, 14);
          NdArray mesh = regular_mesh(3, 3, h, w).to_array();
          mesh += d.array(mesh.shape(), -0.8, 0.8);
          return check(d, [](Tape&, std::span<const Var> in) { return warp_image(in[0], in[1]); },
                       {d.array({d.extent(1, 3), h, w}, 0.0, 1.0), mesh});
        }}},
      {"l_content",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const Shape shape{d.extent(1, 3), d.extent(3, 8), d.extent(3, 8)};
          const NdArray ref = d.array(shape, 0.0, 1.0);
          const Mask a = d.mask(shape[1], shape[2]), b = d.mask(shape[1], shape[2]);
          return check(d,
                       [&](Tape& t, std::span<const Var> in) {
                         return l_content(t.constant(ref), {in[0], a}, {in[1], b});
                       },
                       {d.array(shape, 0.0, 1.0), d.array(shape, 0.0, 1.0)});
        }}},
      {"l_shape",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const std::size_t rows = d.extent(2, 5), cols = d.extent(2, 5);
          const Mesh reg = regular_mesh(rows, cols, 40, 40);
          NdArray mesh = reg.to_array();
          mesh += d.array(mesh.shape(), -3.0, 3.0);
          return check(d, [&](Tape&, std::span<const Var> in) { return l_shape(in[0], reg); }, {mesh});
        }}},
      {"l_jnd",
       {kOpTolerance,
        [](std::uint64_t s) {
          Draw d(s);
          const Shape shape{d.extent(1, 3), d.extent(3, 8), d.extent(3, 8)};
          const NdArray ref = d.array(shape, 0.0, 1.0);
          const Image jnd = as_image(d.array({1, shape[1], shape[2]}, 0.0, 0.2));
          const Mask m = d.mask(shape[1], shape[2]);
          return check(d,
                       [&](Tape& t, std::span<const Var> in) { return l_jnd(t.constant(ref), in[0], jnd, m); },
                       {d.array(shape, 0.0, 1.0)});
        }}},
  };
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, c] : registry()) names.push_back(name);
  return names;
}

OpCheckResult run_gradcheck(const std::string& op, std::uint64_t seed) {
  const auto it = registry().find(op);
  if (it == registry().end()) throw std::invalid_argument("gradcheck: unknown op '" + op + "'");
  OpCheckResult r;
  r.op = op;
  r.seed = seed;
  r.tolerance = it->second.tolerance;
  r.rel_error = it->second.run(seed);
  return r;
}

}  // namespace meshalign
