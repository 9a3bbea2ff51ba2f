#include "meshalign/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace meshalign {

namespace {

void require_image_pair(const char* op, const Var& ref, const Var& warped) {
  if (ref.shape() != warped.shape() || ref.shape().size() != 3)
    throw ShapeError(std::string(op) + ": images must be equal [c,h,w], got " +
                     to_string(ref.shape()) + " vs " + to_string(warped.shape()));
}

NdArray broadcast_mask(const Mask& mask, const Shape& shape, const char* op) {
  if (mask.height != shape[1] || mask.width != shape[2])
    throw ShapeError(std::string(op) + ": mask extents differ from the image");
  NdArray out(shape);
  const std::size_t hw = mask.height * mask.width;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.values[i % hw];
  return out;
}

}  // namespace

Var l_jnd(const Var& ref, const Var& warped, const Image& jnd, const Mask& mask) {
  require_image_pair("l_jnd", ref, warped);
  const Shape& s = ref.shape();
  if (jnd.height != s[1] || jnd.width != s[2] || (jnd.channels != 1 && jnd.channels != s[0]))
    throw ShapeError("l_jnd: JND map does not match the images");
  NdArray m = broadcast_mask(mask, s, "l_jnd");
  NdArray threshold(s);
  const std::size_t hw = s[1] * s[2];
  for (std::size_t i = 0; i < threshold.size(); ++i) {
    const std::size_t c = jnd.channels == 1 ? 0 : i / hw;
    threshold[i] = jnd.values[c * hw + i % hw] * m[i];
  }
  Tape& t = ref.tape();
  const Var diff = mul(abs(sub(ref, warped)), t.constant(std::move(m)));
  return mean(relu(sub(diff, t.constant(std::move(threshold)))));
}

Var masked_l1(const Var& ref, const Var& warped, const Mask& mask) {
  require_image_pair("masked_l1", ref, warped);
  const Var m = ref.tape().constant(broadcast_mask(mask, ref.shape(), "masked_l1"));
  return mean(abs(sub(mul(ref, m), mul(warped, m))));
}

Var l_content(const Var& ref, const StageWarp& homography, const StageWarp& mesh,
              double lambda_h, double lambda_m) {
  return add(mul(masked_l1(ref, homography.warped, homography.mask), lambda_h),
             mul(masked_l1(ref, mesh.warped, mesh.mask), lambda_m));
}

// ---- shape ---------------------------------------------------------------

namespace {

struct Edge {
  std::size_t from, to;  // vertex indices
  double reference;      // regular-mesh length
};

struct EdgePair {
  std::size_t a, b;  // edge indices
};

struct MeshEdges {
  std::vector<Edge> edges;
  std::vector<EdgePair> pairs;
};

MeshEdges mesh_edges(const Mesh& regular) {
  MeshEdges me;
  const std::size_t U = regular.rows, V = regular.cols;
  auto length = [&](std::size_t a, std::size_t b) {
    const double dx = regular.positions[2 * b] - regular.positions[2 * a];
    const double dy = regular.positions[2 * b + 1] - regular.positions[2 * a + 1];
    return std::hypot(dx, dy);
  };
  auto add_edge = [&](std::size_t a, std::size_t b) {
    me.edges.push_back({a, b, length(a, b)});
    return me.edges.size() - 1;
  };
  for (std::size_t r = 0; r < U; ++r) {
    std::size_t prev = 0;
    for (std::size_t c = 0; c + 1 < V; ++c) {
      const std::size_t e = add_edge(r * V + c, r * V + c + 1);
      if (c > 0) me.pairs.push_back({prev, e});
      prev = e;
    }
  }
  for (std::size_t c = 0; c < V; ++c) {
    std::size_t prev = 0;
    for (std::size_t r = 0; r + 1 < U; ++r) {
      const std::size_t e = add_edge(r * V + c, (r + 1) * V + c);
      if (r > 0) me.pairs.push_back({prev, e});
      prev = e;
    }
  }
  return me;
}

struct EdgeState {
  std::vector<double> dx, dy, len;
  bool degenerate = false;
};

EdgeState edge_state(const MeshEdges& me, const double* p) {
  EdgeState s;
  for (const Edge& e : me.edges) {
    const double dx = p[2 * e.to] - p[2 * e.from], dy = p[2 * e.to + 1] - p[2 * e.from + 1];
    const double len = std::hypot(dx, dy);
    if (!(len > 1e-12) || !(e.reference > 0.0)) s.degenerate = true;
    s.dx.push_back(dx);
    s.dy.push_back(dy);
    s.len.push_back(len);
  }
  return s;
}

double shape_value(const MeshEdges& me, const EdgeState& s, double cap) {
  if (s.degenerate) return cap;
  double intra = 0.0;
  for (const EdgePair& pr : me.pairs) {
    const double ux = s.dx[pr.b] / s.len[pr.b] - s.dx[pr.a] / s.len[pr.a];
    const double uy = s.dy[pr.b] / s.len[pr.b] - s.dy[pr.a] / s.len[pr.a];
    intra += ux * ux + uy * uy;
  }
  double inter = 0.0;
  for (std::size_t i = 0; i < me.edges.size(); ++i) {
    const double r = s.len[i] / me.edges[i].reference - 1.0;
    inter += r * r;
  }
  const double n_pairs = static_cast<double>(me.pairs.size());
  return (me.pairs.empty() ? 0.0 : intra / n_pairs) + inter / static_cast<double>(me.edges.size());
}

void check_mesh(const Shape& s, const Mesh& regular) {
  if (s != Shape{regular.rows, regular.cols, 2})
    throw ShapeError("l_shape: mesh " + to_string(s) + " does not match the regular mesh");
}

}  // namespace

double l_shape(const Mesh& mesh, const Mesh& regular, double cap) {
  check_mesh({mesh.rows, mesh.cols, 2}, regular);
  const MeshEdges me = mesh_edges(regular);
  return shape_value(me, edge_state(me, mesh.positions.data()), cap);
}

Var l_shape(const Var& mesh, const Mesh& regular, double cap) {
  check_mesh(mesh.shape(), regular);
  MeshEdges me = mesh_edges(regular);
  EdgeState state = edge_state(me, mesh.value().raw());
  const double value = shape_value(me, state, cap);
  const NodeId in = mesh.id();
  return mesh.tape().record(
      "l_shape", NdArray::scalar(value), {mesh},
      [in, me = std::move(me), state = std::move(state)](Tape& t, NodeId self) {
        NdArray* gm = t.accumulator(in);
        if (!gm || state.degenerate) return;
        const double g = t.grad_of(self)[0];
        const std::size_t n = me.edges.size();
        std::vector<double> gx(n, 0.0), gy(n, 0.0);  // dL/d(edge vector)
        // unit-vector gradients for the collinearity term
        std::vector<double> ux(n, 0.0), uy(n, 0.0);
        const double wp = me.pairs.empty() ? 0.0 : g / static_cast<double>(me.pairs.size());
        for (const EdgePair& pr : me.pairs) {
          const double ex = state.dx[pr.b] / state.len[pr.b] - state.dx[pr.a] / state.len[pr.a];
          const double ey = state.dy[pr.b] / state.len[pr.b] - state.dy[pr.a] / state.len[pr.a];
          ux[pr.b] += 2.0 * wp * ex;
          uy[pr.b] += 2.0 * wp * ey;
          ux[pr.a] -= 2.0 * wp * ex;
          uy[pr.a] -= 2.0 * wp * ey;
        }
        const double we = g / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double len = state.len[i];
          const double hx = state.dx[i] / len, hy = state.dy[i] / len;
          const double proj = hx * ux[i] + hy * uy[i];
          const double ref = me.edges[i].reference;
          const double radial = we * 2.0 * (len / ref - 1.0) / ref;
          gx[i] = (ux[i] - hx * proj) / len + radial * hx;
          gy[i] = (uy[i] - hy * proj) / len + radial * hy;
        }
        double* out = gm->raw();
        for (std::size_t i = 0; i < n; ++i) {
          const Edge& e = me.edges[i];
          out[2 * e.to] += gx[i];
          out[2 * e.to + 1] += gy[i];
          out[2 * e.from] -= gx[i];
          out[2 * e.from + 1] -= gy[i];
        }
      });
}

// ---- total ---------------------------------------------------------------

LossBreakdown LossTerms::breakdown(const LossWeights& w) const {
  LossBreakdown b;
  b.l_content = content.value()[0];
  b.l_shape = shape.value()[0];
  b.l_jnd = jnd.value()[0];
  b.total = total.value()[0];
  b.alpha = w.alpha;
  b.beta = w.beta;
  return b;
}

LossTerms total_loss(const ForwardOutput& out, const Var& ref, const Mesh& regular,
                     const Image& jnd, const LossWeights& weights) {
  LossTerms terms;
  terms.content = l_content(ref, {out.warped_h, out.mask_h}, {out.warped, out.mask},
                            weights.lambda_h, weights.lambda_m);
  terms.shape = l_shape(out.final_mesh, regular);
  terms.jnd = l_jnd(ref, out.warped, jnd, out.mask);
  terms.total = add(add(terms.content, mul(terms.shape, weights.alpha)), mul(terms.jnd, weights.beta));
  return terms;
}

}  // namespace meshalign
