#include "meshalign/correlation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "meshalign/kernels.hpp"

namespace meshalign {

namespace {

constexpr double kNormFloor = 1e-12;

void require_feature_map(const char* op, const Shape& s) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected [c,h,w], got " + to_string(s));
}

std::vector<double> channel_norms(const NdArray& f) {
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  std::vector<double> norms(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) norms[p] += f[ch * hw + p] * f[ch * hw + p];
  for (double& n : norms) n = std::max(std::sqrt(n), kNormFloor);
  return norms;
}

NdArray normalized(const NdArray& f, const std::vector<double>& norms) {
  NdArray out = f;
  const std::size_t hw = norms.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= norms[i % hw];
  return out;
}

NdArray raw_corr(const NdArray& ref, const NdArray& tar) {
  const std::size_t c = ref.dim(0);
  const std::size_t n1 = ref.dim(1) * ref.dim(2), n2 = tar.dim(1) * tar.dim(2);
  NdArray out(Shape{tar.dim(1), tar.dim(2), ref.dim(1), ref.dim(2)}, 0.0);
  kernels::gemm_tn(n2, n1, c, tar.raw(), ref.raw(), out.raw());
  return out;
}

void check_pair(const Shape& a, const Shape& b) {
  require_feature_map("corr4d", a);
  require_feature_map("corr4d", b);
  if (a[0] != b[0])
    throw ShapeError("corr4d: channel mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

Var normalize_channels(const Var& f) {
  require_feature_map("normalize_channels", f.shape());
  std::vector<double> norms = channel_norms(f.value());
  NdArray out = normalized(f.value(), norms);
  const NodeId in = f.id();
  return f.tape().record(
      "normalize_channels", std::move(out), {f},
      [in, norms = std::move(norms)](Tape& t, NodeId self) {
        NdArray* gx = t.accumulator(in);
        if (!gx) return;
        const NdArray& g = t.grad_of(self);
        const NdArray& x = t.value(in);
        const std::size_t hw = norms.size(), c = x.dim(0);
        for (std::size_t p = 0; p < hw; ++p) {
          const double n = norms[p];
          double yg = 0.0;
          const bool clamped = n <= kNormFloor;
          if (!clamped)
            for (std::size_t ch = 0; ch < c; ++ch) yg += x[ch * hw + p] / n * g[ch * hw + p];
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = ch * hw + p;
            (*gx)[i] += clamped ? g[i] / n : (g[i] - x[i] / n * yg) / n;
          }
        }
      });
}

NdArray corr4d(const NdArray& f_ref, const NdArray& f_tar, bool normalize) {
  check_pair(f_ref.shape(), f_tar.shape());
  if (!normalize) return raw_corr(f_ref, f_tar);
  return raw_corr(normalized(f_ref, channel_norms(f_ref)),
                  normalized(f_tar, channel_norms(f_tar)));
}

Var corr4d(const Var& f_ref, const Var& f_tar, bool normalize) {
  check_pair(f_ref.shape(), f_tar.shape());
  const Var a = normalize ? normalize_channels(f_ref) : f_ref;
  const Var b = normalize ? normalize_channels(f_tar) : f_tar;
  const std::size_t c = a.shape()[0];
  const std::size_t n1 = a.shape()[1] * a.shape()[2], n2 = b.shape()[1] * b.shape()[2];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("corr4d", raw_corr(a.value(), b.value()), {a, b},
                         [ia, ib, c, n1, n2](Tape& t, NodeId self) {
                           const NdArray& g = t.grad_of(self);  // [n2, n1]
                           if (NdArray* ga = t.accumulator(ia))
                             kernels::gemm_nn(c, n1, n2, t.value(ib).raw(), g.raw(), ga->raw());
                           if (NdArray* gb = t.accumulator(ib))
                             kernels::gemm_nt(c, n2, n1, t.value(ia).raw(), g.raw(), gb->raw());
                         });
}

std::pair<Var, Var> reshape_branches(const Var& T) {
  if (T.shape().size() != 4) throw ShapeError("reshape_branches: expected rank 4, got " + to_string(T.shape()));
  const std::size_t h2 = T.shape()[0], w2 = T.shape()[1], h1 = T.shape()[2], w1 = T.shape()[3];
  Var t1 = reshape(T, {h2 * w2, h1, w1});
  Var t2 = reshape(permute(T, {2, 3, 0, 1}), {h1 * w1, h2, w2});
  return {t1, t2};
}

const char* to_string(CorrelationKind kind) {
  switch (kind) {
    case CorrelationKind::Fsc: return "fsc";
    case CorrelationKind::Cl: return "cl";
    case CorrelationKind::Ccl: return "ccl";
  }
  return "?";
}

CorrelationKind parse_correlation_kind(const std::string& text) {
  std::string s = text;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "fsc") return CorrelationKind::Fsc;
  if (s == "cl") return CorrelationKind::Cl;
  if (s == "ccl") return CorrelationKind::Ccl;
  throw std::invalid_argument("unknown correlation kind '" + text + "'");
}

// ---- head ----------------------------------------------------------------

std::size_t FscHead::trunk_input_h() const {
  return kind == CorrelationKind::Fsc ? std::max(h1, h2) : h1;
}

std::size_t FscHead::trunk_input_w() const {
  return kind == CorrelationKind::Fsc ? std::max(w1, w2) : w1;
}

namespace {

std::size_t halved(std::size_t n) { return conv_output_extent(n, 3, 2, 1); }

}  // namespace

FscHead make_head(ParameterSet& params, const std::string& prefix, CorrelationKind kind,
                  std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2,
                  std::size_t output_dim, const HeadSpec& spec, std::mt19937_64& rng) {
  if (kind == CorrelationKind::Ccl)
    throw std::invalid_argument("make_head: CCL has no executable head");
  if (h1 == 0 || w1 == 0 || h2 == 0 || w2 == 0 || output_dim == 0 || spec.compressed_channels == 0)
    throw std::invalid_argument("make_head: extents and widths must be positive");
  FscHead head;
  head.kind = kind;
  head.h1 = h1, head.w1 = w1, head.h2 = h2, head.w2 = w2;
  head.output_dim = output_dim;
  head.spec = spec;
  const std::size_t cr = spec.compressed_channels;
  head.t1_reduce = make_conv(params, prefix + ".t1_reduce", h2 * w2, cr, 1, 1, 0, rng);
  head.t1_refine = make_conv(params, prefix + ".t1_refine", cr, cr, 3, 1, 1, rng);
  std::size_t channels = cr;
  if (kind == CorrelationKind::Fsc) {
    head.t2_reduce = make_conv(params, prefix + ".t2_reduce", h1 * w1, cr, 1, 1, 0, rng);
    head.t2_refine = make_conv(params, prefix + ".t2_refine", cr, cr, 3, 1, 1, rng);
    channels = 2 * cr;
  }
  std::size_t h = head.trunk_input_h(), w = head.trunk_input_w();
  for (std::size_t i = 0; i < spec.trunk_layers; ++i) {
    head.trunk.push_back(make_conv(params, prefix + ".trunk" + std::to_string(i), channels,
                                   spec.trunk_channels, 3, 2, 1, rng));
    channels = spec.trunk_channels;
    h = halved(h);
    w = halved(w);
  }
  head.hidden = make_linear(params, prefix + ".fc1", channels * h * w, spec.hidden, rng);
  head.output = make_linear(params, prefix + ".fc2", spec.hidden, output_dim, rng, Init::Zero);
  return head;
}

namespace {

void check_inputs(const FscHead& head, const Var& f_ref, const Var& f_tar) {
  check_pair(f_ref.shape(), f_tar.shape());
  if (f_ref.shape()[1] != head.h1 || f_ref.shape()[2] != head.w1 ||
      f_tar.shape()[1] != head.h2 || f_tar.shape()[2] != head.w2) {
    throw ShapeError("regress: head built for " + std::to_string(head.h1) + "x" +
                     std::to_string(head.w1) + " / " + std::to_string(head.h2) + "x" +
                     std::to_string(head.w2) + ", got " + to_string(f_ref.shape()) + " / " +
                     to_string(f_tar.shape()));
  }
}

Var branch(const ConvLayer& reduce, const ConvLayer& refine, const BoundParameters& p,
           const Var& t) {
  return relu(apply(refine, p, relu(apply(reduce, p, t))));
}

Var finish(const FscHead& head, const BoundParameters& p, Var x) {
  for (const ConvLayer& layer : head.trunk) x = relu(apply(layer, p, x));
  x = relu(apply(head.hidden, p, x));
  return apply(head.output, p, x);
}

}  // namespace

Var fsc_regress(const FscHead& head, const BoundParameters& p, const Var& f_ref,
                const Var& f_tar) {
  if (head.kind != CorrelationKind::Fsc) throw std::invalid_argument("fsc_regress: head is not FSC");
  check_inputs(head, f_ref, f_tar);
  const auto [t1, t2] = reshape_branches(corr4d(f_ref, f_tar, head.spec.normalize));
  const Var parts[] = {branch(head.t1_reduce, head.t1_refine, p, t1),
                       branch(head.t2_reduce, head.t2_refine, p, t2)};
  return finish(head, p, pad_concat(parts, head.trunk_input_h(), head.trunk_input_w()));
}

Var cl_regress(const FscHead& head, const BoundParameters& p, const Var& f_ref,
               const Var& f_tar) {
  if (head.kind != CorrelationKind::Cl) throw std::invalid_argument("cl_regress: head is not CL");
  check_inputs(head, f_ref, f_tar);
  const Var t1 = reshape_branches(corr4d(f_ref, f_tar, head.spec.normalize)).first;
  return finish(head, p, branch(head.t1_reduce, head.t1_refine, p, t1));
}

Var regress(const FscHead& head, const BoundParameters& p, const Var& f_ref, const Var& f_tar) {
  return head.kind == CorrelationKind::Fsc ? fsc_regress(head, p, f_ref, f_tar)
                                           : cl_regress(head, p, f_ref, f_tar);
}

// ---- flops ---------------------------------------------------------------

std::uint64_t corr4d_flops(std::size_t c, std::size_t h1, std::size_t w1, std::size_t h2,
                           std::size_t w2) {
  return 2ull * c * h1 * w1 * h2 * w2;
}

std::uint64_t conv_flops(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t ho,
                         std::size_t wo) {
  return 2ull * c_in * c_out * k * k * ho * wo;
}

namespace {

std::uint64_t branch_flops(std::size_t channels_in, std::size_t cr, std::size_t h, std::size_t w) {
  return conv_flops(channels_in, cr, 1, h, w) + conv_flops(cr, cr, 3, h, w);
}

std::uint64_t tail_flops(std::size_t channels, std::size_t h, std::size_t w, const FlopsQuery& q) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < q.head.trunk_layers; ++i) {
    h = halved(h);
    w = halved(w);
    total += conv_flops(channels, q.head.trunk_channels, 3, h, w);
    channels = q.head.trunk_channels;
  }
  total += 2ull * channels * h * w * q.head.hidden;
  total += 2ull * q.head.hidden * q.output_dim;
  return total;
}

}  // namespace

std::uint64_t flops_estimate(CorrelationKind kind, const FlopsQuery& q) {
  if (q.c == 0 || q.h1 == 0 || q.w1 == 0 || q.h2 == 0 || q.w2 == 0 || q.c_r == 0)
    throw std::invalid_argument("flops_estimate: dimensions must be positive");
  const std::uint64_t t1 = branch_flops(q.h2 * q.w2, q.c_r, q.h1, q.w1);
  switch (kind) {
    case CorrelationKind::Cl:
      return corr4d_flops(q.c, q.h1, q.w1, q.h2, q.w2) + t1 + tail_flops(q.c_r, q.h1, q.w1, q);
    case CorrelationKind::Ccl: {
      // every target patch (k x k x c) acts as one kernel slid over the reference map
      const std::uint64_t k2 = static_cast<std::uint64_t>(q.ccl_kernel) * q.ccl_kernel;
      return k2 * corr4d_flops(q.c, q.h1, q.w1, q.h2, q.w2) + t1 +
             tail_flops(q.c_r, q.h1, q.w1, q);
    }
    case CorrelationKind::Fsc: {
      const std::size_t h = std::max(q.h1, q.h2), w = std::max(q.w1, q.w2);
      return corr4d_flops(q.c, q.h1, q.w1, q.h2, q.w2) + t1 +
             branch_flops(q.h1 * q.w1, q.c_r, q.h2, q.w2) + tail_flops(2 * q.c_r, h, w, q);
    }
  }
  return 0;
}

}  // namespace meshalign
