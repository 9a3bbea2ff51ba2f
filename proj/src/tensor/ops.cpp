#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "meshalign/autodiff.hpp"
#include "meshalign/kernels.hpp"
#include "meshalign/parallel.hpp"

namespace meshalign {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

const char* kind_name(ElementwiseKind kind) {
  switch (kind) {
    case ElementwiseKind::Add: return "add";
    case ElementwiseKind::Sub: return "sub";
    case ElementwiseKind::Mul: return "mul";
    case ElementwiseKind::Abs: return "abs";
    case ElementwiseKind::Relu: return "relu";
  }
  return "elementwise";
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---- elementwise ---------------------------------------------------------

Var elementwise(ElementwiseKind kind, const Var& a, const Var& b) {
  if (kind == ElementwiseKind::Abs || kind == ElementwiseKind::Relu) {
    throw std::invalid_argument(std::string(kind_name(kind)) + " is unary");
  }
  require_same_shape(kind_name(kind), a, b);
  if (&a.tape() != &b.tape()) throw AutodiffError("elementwise: operands on different tapes");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  NdArray out(av.shape());
  const std::size_t n = av.size();
  switch (kind) {
    case ElementwiseKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
      break;
    case ElementwiseKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
      break;
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(kind_name(kind), std::move(out), {a, b},
                         [kind, ia, ib](Tape& t, NodeId self) {
                           const NdArray& g = t.grad_of(self);
                           const std::size_t n = g.size();
                           if (NdArray* ga = t.accumulator(ia)) {
                             if (kind == ElementwiseKind::Mul) {
                               const NdArray& bv = t.value(ib);
                               for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[i];
                             } else {
                               *ga += g;
                             }
                           }
                           if (NdArray* gb = t.accumulator(ib)) {
                             if (kind == ElementwiseKind::Mul) {
                               const NdArray& av = t.value(ia);
                               for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * av[i];
                             } else if (kind == ElementwiseKind::Sub) {
                               for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i];
                             } else {
                               *gb += g;
                             }
                           }
                         });
}

Var elementwise(ElementwiseKind kind, const Var& a, double b) {
  const NdArray& av = a.value();
  NdArray out(av.shape());
  const std::size_t n = av.size();
  switch (kind) {
    case ElementwiseKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + b;
      break;
    case ElementwiseKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - b;
      break;
    case ElementwiseKind::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * b;
      break;
    case ElementwiseKind::Abs:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(av[i]);
      break;
    case ElementwiseKind::Relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      break;
  }
  const NodeId ia = a.id();
  return a.tape().record(kind_name(kind), std::move(out), {a},
                         [kind, ia, b](Tape& t, NodeId self) {
                           NdArray* ga = t.accumulator(ia);
                           if (!ga) return;
                           const NdArray& g = t.grad_of(self);
                           const NdArray& av = t.value(ia);
                           const std::size_t n = g.size();
                           switch (kind) {
                             case ElementwiseKind::Add:
                             case ElementwiseKind::Sub:
                               *ga += g;
                               break;
                             case ElementwiseKind::Mul:
                               for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * b;
                               break;
                             case ElementwiseKind::Abs:
                               for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * sign(av[i]);
                               break;
                             case ElementwiseKind::Relu:
                               for (std::size_t i = 0; i < n; ++i)
                                 if (av[i] > 0.0) (*ga)[i] += g[i];
                               break;
                           }
                         });
}

Var add(const Var& a, const Var& b) { return elementwise(ElementwiseKind::Add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise(ElementwiseKind::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise(ElementwiseKind::Mul, a, b); }
Var add(const Var& a, double b) { return elementwise(ElementwiseKind::Add, a, b); }
Var mul(const Var& a, double b) { return elementwise(ElementwiseKind::Mul, a, b); }
Var abs(const Var& a) { return elementwise(ElementwiseKind::Abs, a, 0.0); }
Var relu(const Var& a) { return elementwise(ElementwiseKind::Relu, a, 0.0); }

// ---- matmul --------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  NdArray out(Shape{m, n});
  kernels::gemm_nn(m, n, k, a.value().raw(), b.value().raw(), out.raw());
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b},
                         [ia, ib, m, n, k](Tape& t, NodeId self) {
                           const NdArray& g = t.grad_of(self);
                           if (NdArray* ga = t.accumulator(ia))
                             kernels::gemm_nt(m, k, n, g.raw(), t.value(ib).raw(), ga->raw());
                           if (NdArray* gb = t.accumulator(ib))
                             kernels::gemm_tn(k, n, m, t.value(ia).raw(), g.raw(), gb->raw());
                         });
}

// ---- conv2d --------------------------------------------------------------

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (input + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, pad, ho, wo;
  std::size_t patch() const { return c_in * k * k; }
  std::size_t pixels() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// cols[(ci*k + ky)*k + kx, oy*wo + ox] = x[ci, oy*s + ky - p, ox*s + kx - p]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t npix = g.pixels();
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * npix;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t npix = g.pixels();
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * npix;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != xs[0]) {
    throw ShapeError("conv2d: weight " + to_string(ws) + " does not match input " +
                     to_string(xs));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv2d: only square kernels are supported");
  ConvGeometry g{xs[0], xs[1], xs[2], ws[0], ws[2], options.stride, options.padding, 0, 0};
  g.ho = conv_output_extent(g.h, g.k, g.stride, g.pad);
  g.wo = conv_output_extent(g.w, g.k, g.stride, g.pad);
  if (bias.valid() && bias.shape() != Shape{g.c_out}) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.c_out) + "], got " +
                     to_string(bias.shape()));
  }

  NdArray out(Shape{g.c_out, g.ho, g.wo});
  const std::size_t npix = g.pixels();
  if (bias.valid()) {
    const NdArray& bv = bias.value();
    for (std::size_t co = 0; co < g.c_out; ++co)
      std::fill(out.raw() + co * npix, out.raw() + (co + 1) * npix, bv[co]);
  }
  std::vector<double> cols;
  const double* colsp = x.value().raw();
  if (!g.pointwise()) {
    cols.resize(g.patch() * npix);
    im2col(g, x.value().raw(), cols.data());
    colsp = cols.data();
  }
  kernels::gemm_nn(g.c_out, npix, g.patch(), weight.value().raw(), colsp, out.raw());

  const NodeId ix = x.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const NodeId ib = has_bias ? bias.id() : 0;
  Var parents[] = {x, weight, bias};
  return x.tape().record(
      "conv2d", std::move(out), std::span<const Var>(parents, has_bias ? 3 : 2),
      [g, ix, iw, ib, has_bias](Tape& t, NodeId self) {
        const NdArray& grad = t.grad_of(self);
        const std::size_t npix = g.pixels();
        NdArray* gx = t.accumulator(ix);
        NdArray* gw = t.accumulator(iw);
        if (gw) {
          std::vector<double> cols;
          const double* colsp = t.value(ix).raw();
          if (!g.pointwise()) {
            cols.resize(g.patch() * npix);
            im2col(g, t.value(ix).raw(), cols.data());
            colsp = cols.data();
          }
          kernels::gemm_nt(g.c_out, g.patch(), npix, grad.raw(), colsp, gw->raw());
        }
        if (gx) {
          if (g.pointwise()) {
            kernels::gemm_tn(g.patch(), npix, g.c_out, t.value(iw).raw(), grad.raw(), gx->raw());
          } else {
            std::vector<double> dcols(g.patch() * npix, 0.0);
            kernels::gemm_tn(g.patch(), npix, g.c_out, t.value(iw).raw(), grad.raw(),
                             dcols.data());
            col2im(g, dcols.data(), gx->raw());
          }
        }
        if (has_bias) {
          if (NdArray* gb = t.accumulator(ib)) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
              double acc = 0.0;
              for (std::size_t p = 0; p < npix; ++p) acc += grad[co * npix + p];
              (*gb)[co] += acc;
            }
          }
        }
      });
}

// ---- maxpool -------------------------------------------------------------

Var maxpool2d(const Var& x) {
  require_rank("maxpool2d", x, 3);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (c == 0 || h == 0 || w == 0) throw ShapeError("maxpool2d: empty input");
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  NdArray out(Shape{c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  const NdArray& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_index = 0;
        bool found = false;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy >= h || ix >= w) continue;  // -inf padding never wins
            const std::size_t idx = (ch * h + iy) * w + ix;
            if (!found || xv[idx] > best) {
              best = xv[idx];
              best_index = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = best_index;
      }
    }
  }
  const NodeId ix = x.id();
  return x.tape().record("maxpool2d", std::move(out), {x},
                         [ix, argmax = std::move(argmax)](Tape& t, NodeId self) {
                           NdArray* gx = t.accumulator(ix);
                           if (!gx) return;
                           const NdArray& g = t.grad_of(self);
                           for (std::size_t o = 0; o < g.size(); ++o) (*gx)[argmax[o]] += g[o];
                         });
}

// ---- linear --------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank("linear", weight, 2);
  const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
  if (x.size() != in_dim) {
    throw ShapeError("linear: weight " + to_string(weight.shape()) + " cannot take input " +
                     to_string(x.shape()));
  }
  if (bias.valid() && bias.shape() != Shape{out_dim}) {
    throw ShapeError("linear: bias must be [" + std::to_string(out_dim) + "]");
  }
  NdArray out(Shape{out_dim});
  if (bias.valid()) out = bias.value();
  kernels::gemm_nn(out_dim, 1, in_dim, weight.value().raw(), x.value().raw(), out.raw());
  const NodeId ix = x.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const NodeId ib = has_bias ? bias.id() : 0;
  Var parents[] = {x, weight, bias};
  return x.tape().record(
      "linear", std::move(out), std::span<const Var>(parents, has_bias ? 3 : 2),
      [ix, iw, ib, has_bias, out_dim, in_dim](Tape& t, NodeId self) {
        const NdArray& g = t.grad_of(self);
        if (NdArray* gw = t.accumulator(iw))
          kernels::gemm_nn(out_dim, in_dim, 1, g.raw(), t.value(ix).raw(), gw->raw());
        if (NdArray* gx = t.accumulator(ix))
          kernels::gemm_tn(in_dim, 1, out_dim, t.value(iw).raw(), g.raw(), gx->raw());
        if (has_bias)
          if (NdArray* gb = t.accumulator(ib)) *gb += g;
      });
}

// ---- index remapping -----------------------------------------------------

Var reshape(const Var& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: element count mismatch " + to_string(x.shape()) + " -> " +
                     to_string(shape));
  }
  NdArray out = x.value().reshaped(std::move(shape));
  const NodeId ix = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [ix](Tape& t, NodeId self) {
    NdArray* gx = t.accumulator(ix);
    if (!gx) return;
    const NdArray& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var permute(const Var& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Var permute(const Var& x, std::span<const std::size_t> axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw ShapeError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];

  // source[i] = flat input offset of output element i
  const std::size_t n = x.size();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) off += index[d] * in_strides[axes[d]];
    source[i] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++index[d] < out_shape[d]) break;
      index[d] = 0;
    }
  }
  NdArray out(out_shape);
  const NdArray& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
  const NodeId ix = x.id();
  return x.tape().record("permute", std::move(out), {x},
                         [ix, source = std::move(source)](Tape& t, NodeId self) {
                           NdArray* gx = t.accumulator(ix);
                           if (!gx) return;
                           const NdArray& g = t.grad_of(self);
                           for (std::size_t i = 0; i < g.size(); ++i) (*gx)[source[i]] += g[i];
                         });
}

Var pad_concat(std::span<const Var> inputs, std::size_t target_h, std::size_t target_w) {
  if (inputs.empty()) throw ShapeError("pad_concat: no inputs");
  std::size_t channels = 0;
  for (const Var& v : inputs) {
    require_rank("pad_concat", v, 3);
    if (v.shape()[1] > target_h || v.shape()[2] > target_w) {
      throw ShapeError("pad_concat: target " + std::to_string(target_h) + "x" +
                       std::to_string(target_w) + " smaller than input " + to_string(v.shape()));
    }
    if (&v.tape() != &inputs.front().tape())
      throw AutodiffError("pad_concat: inputs on different tapes");
    channels += v.shape()[0];
  }
  NdArray out(Shape{channels, target_h, target_w}, 0.0);
  std::size_t c0 = 0;
  for (const Var& v : inputs) {
    const auto& s = v.shape();
    const NdArray& val = v.value();
    for (std::size_t c = 0; c < s[0]; ++c)
      for (std::size_t y = 0; y < s[1]; ++y)
        std::copy_n(val.raw() + (c * s[1] + y) * s[2], s[2],
                    out.raw() + ((c0 + c) * target_h + y) * target_w);
    c0 += s[0];
  }
  std::vector<NodeId> ids;
  for (const Var& v : inputs) ids.push_back(v.id());
  return inputs.front().tape().record(
      "pad_concat", std::move(out), inputs,
      [ids = std::move(ids), target_h, target_w](Tape& t, NodeId self) {
        const NdArray& g = t.grad_of(self);
        std::size_t c0 = 0;
        for (NodeId id : ids) {
          const Shape s = t.value(id).shape();
          if (NdArray* gx = t.accumulator(id)) {
            for (std::size_t c = 0; c < s[0]; ++c)
              for (std::size_t y = 0; y < s[1]; ++y) {
                const double* src = g.raw() + ((c0 + c) * target_h + y) * target_w;
                double* dst = gx->raw() + (c * s[1] + y) * s[2];
                for (std::size_t x = 0; x < s[2]; ++x) dst[x] += src[x];
              }
          }
          c0 += s[0];
        }
      });
}

// ---- grid_sample ---------------------------------------------------------

Var grid_sample(const Var& img, const Var& grid) {
  require_rank("grid_sample", img, 3);
  require_rank("grid_sample", grid, 3);
  if (grid.shape()[2] != 2) {
    throw ShapeError("grid_sample: grid last extent must be 2, got " + to_string(grid.shape()));
  }
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  const std::size_t ho = grid.shape()[0], wo = grid.shape()[1];
  const NdArray& iv = img.value();
  const NdArray& gv = grid.value();
  NdArray out(Shape{c, ho, wo}, 0.0);
  const std::size_t npix = ho * wo;
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (std::size_t p = 0; p < npix; ++p) {
    const double x = gv[2 * p], y = gv[2 * p + 1];
    const double fx0 = std::floor(x), fy0 = std::floor(y);
    if (fx0 < -2.0 || fy0 < -2.0 || fx0 > static_cast<double>(w) ||
        fy0 > static_cast<double>(h))
      continue;
    const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
    const double ax = x - fx0, ay = y - fy0;
    const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int tap = 0; tap < 4; ++tap) {
      if (xs[tap] < 0 || xs[tap] >= lw || ys[tap] < 0 || ys[tap] >= lh) continue;
      const std::size_t src = static_cast<std::size_t>(ys[tap]) * w + static_cast<std::size_t>(xs[tap]);
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * npix + p] += wts[tap] * iv[ch * h * w + src];
    }
  }
  const NodeId ii = img.id(), ig = grid.id();
  return img.tape().record(
      "grid_sample", std::move(out), {img, grid},
      [ii, ig, c, h, w, npix](Tape& t, NodeId self) {
        const NdArray& g = t.grad_of(self);
        const NdArray& iv = t.value(ii);
        const NdArray& gv = t.value(ig);
        NdArray* gimg = t.accumulator(ii);
        NdArray* ggrid = t.accumulator(ig);
        const long lh = static_cast<long>(h), lw = static_cast<long>(w);
        for (std::size_t p = 0; p < npix; ++p) {
          const double x = gv[2 * p], y = gv[2 * p + 1];
          const double fx0 = std::floor(x), fy0 = std::floor(y);
          if (fx0 < -2.0 || fy0 < -2.0 || fx0 > static_cast<double>(w) ||
              fy0 > static_cast<double>(h))
            continue;
          const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
          const double ax = x - fx0, ay = y - fy0;
          const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
          const double dwx[4] = {-(1 - ay), (1 - ay), -ay, ay};
          const double dwy[4] = {-(1 - ax), -ax, (1 - ax), ax};
          const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
          const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
          double gx = 0.0, gy = 0.0;
          for (int tap = 0; tap < 4; ++tap) {
            if (xs[tap] < 0 || xs[tap] >= lw || ys[tap] < 0 || ys[tap] >= lh) continue;
            const std::size_t src =
                static_cast<std::size_t>(ys[tap]) * w + static_cast<std::size_t>(xs[tap]);
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double go = g[ch * npix + p];
              if (gimg) (*gimg)[ch * h * w + src] += wts[tap] * go;
              const double v = iv[ch * h * w + src] * go;
              gx += dwx[tap] * v;
              gy += dwy[tap] * v;
            }
          }
          if (ggrid) {
            (*ggrid)[2 * p] += gx;
            (*ggrid)[2 * p + 1] += gy;
          }
        }
      });
}

// ---- reductions ----------------------------------------------------------

Var sum(const Var& x) {
  const NodeId ix = x.id();
  return x.tape().record("sum", NdArray::scalar(x.value().sum()), {x},
                         [ix](Tape& t, NodeId self) {
                           NdArray* gx = t.accumulator(ix);
                           if (!gx) return;
                           const double g = t.grad_of(self)[0];
                           for (double& v : gx->data()) v += g;
                         });
}

Var mean(const Var& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean: empty input");
  const NodeId ix = x.id();
  return x.tape().record("mean", NdArray::scalar(x.value().sum() / static_cast<double>(n)), {x},
                         [ix, n](Tape& t, NodeId self) {
                           NdArray* gx = t.accumulator(ix);
                           if (!gx) return;
                           const double g = t.grad_of(self)[0] / static_cast<double>(n);
                           for (double& v : gx->data()) v += g;
                         });
}

}  // namespace meshalign
