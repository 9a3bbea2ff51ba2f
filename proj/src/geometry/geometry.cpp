#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "meshalign/geometry.hpp"

namespace meshalign {

namespace {

constexpr double kMinDenominator = 1e-9;
constexpr double kMinDeterminant = 1e-12;

using Matrix8 = Eigen::Matrix<double, 8, 8>;
using Vector8 = Eigen::Matrix<double, 8, 1>;

// A delta = r with H = I + delta (delta over the first eight entries). The
// right-hand side is exactly the offset vector, so zero offsets give an exact
// identity.
Matrix8 dlt_system(const std::array<double, 8>& offsets, std::size_t h, std::size_t w) {
  const auto corners = image_corners(h, w);
  Matrix8 A = Matrix8::Zero();
  for (int k = 0; k < 4; ++k) {
    const double x = corners[k][0], y = corners[k][1];
    const double xd = x + offsets[2 * k], yd = y + offsets[2 * k + 1];
    A.row(2 * k) << x, y, 1, 0, 0, 0, -x * xd, -y * xd;
    A.row(2 * k + 1) << 0, 0, 0, x, y, 1, -x * yd, -y * yd;
  }
  return A;
}

void check_general_position(const std::array<double, 8>& offsets, std::size_t h, std::size_t w) {
  const auto corners = image_corners(h, w);
  std::array<std::array<double, 2>, 4> p{};
  for (int k = 0; k < 4; ++k)
    p[k] = {corners[k][0] + offsets[2 * k], corners[k][1] + offsets[2 * k + 1]};
  const double scale = static_cast<double>(std::max(h, w));
  const double tol = 1e-9 * scale * scale;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k) {
        const double cross = (p[j][0] - p[i][0]) * (p[k][1] - p[i][1]) -
                             (p[j][1] - p[i][1]) * (p[k][0] - p[i][0]);
        if (std::abs(cross) <= tol) {
          throw GeometryError("dlt_solve: displaced corners " + std::to_string(i) + ", " +
                              std::to_string(j) + ", " + std::to_string(k) + " are collinear");
        }
      }
}

struct DltSolution {
  Homography H;
  Eigen::PartialPivLU<Matrix8> lu;
};

DltSolution solve_dlt(const std::array<double, 8>& offsets, std::size_t h, std::size_t w) {
  if (h < 2 || w < 2) throw GeometryError("dlt_solve: image must be at least 2x2");
  check_general_position(offsets, h, w);
  DltSolution sol{Homography::identity(), Eigen::PartialPivLU<Matrix8>(dlt_system(offsets, h, w))};
  Vector8 r;
  for (int i = 0; i < 8; ++i) r[i] = offsets[i];
  const Vector8 delta = sol.lu.solve(r);
  for (int i = 0; i < 8; ++i) sol.H.m[i] += delta[i];
  if (!std::isfinite(sol.H.determinant()) || std::abs(sol.H.determinant()) <= kMinDeterminant) {
    throw GeometryError("dlt_solve: singular homography");
  }
  return sol;
}

}  // namespace

// ---- value types ---------------------------------------------------------

NdArray Mesh::to_array() const { return NdArray(Shape{rows, cols, 2}, positions); }

Mesh Mesh::from_array(const NdArray& array) {
  if (array.rank() != 3 || array.dim(2) != 2) {
    throw ShapeError("Mesh::from_array: expected [rows, cols, 2], got " + to_string(array.shape()));
  }
  Mesh mesh(array.dim(0), array.dim(1));
  std::copy(array.data().begin(), array.data().end(), mesh.positions.begin());
  return mesh;
}

double Homography::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (std::abs(det) <= kMinDeterminant) throw GeometryError("Homography::inverse: singular");
  std::array<double, 9> inv{
      m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
      m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
      m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  Homography out;
  for (int i = 0; i < 9; ++i) out.m[i] = inv[i] / inv[8];
  return out;
}

std::array<double, 2> Homography::apply(double x, double y) const {
  const double den = m[6] * x + m[7] * y + m[8];
  if (std::abs(den) < kMinDenominator) {
    throw GeometryError("apply_homography: projective denominator vanishes");
  }
  return {(m[0] * x + m[1] * y + m[2]) / den, (m[3] * x + m[4] * y + m[5]) / den};
}

Homography Homography::from_array(const NdArray& array) {
  if (array.size() != 9) throw ShapeError("Homography::from_array: expected 9 values");
  Homography H;
  for (int i = 0; i < 9; ++i) H.m[i] = array[i] / array[8];
  return H;
}

std::array<std::array<double, 2>, 4> image_corners(std::size_t h, std::size_t w) {
  const double xr = static_cast<double>(w) - 1.0, yb = static_cast<double>(h) - 1.0;
  return {{{0.0, 0.0}, {xr, 0.0}, {0.0, yb}, {xr, yb}}};
}

// ---- operations ----------------------------------------------------------

Mesh regular_mesh(std::size_t rows, std::size_t cols, std::size_t h, std::size_t w) {
  if (rows < 2 || cols < 2) throw GeometryError("regular_mesh: need at least 2x2 vertices");
  if (h < 2 || w < 2) throw GeometryError("regular_mesh: image must be at least 2x2");
  Mesh mesh(rows, cols);
  const double sx = (static_cast<double>(w) - 1.0) / static_cast<double>(cols - 1);
  const double sy = (static_cast<double>(h) - 1.0) / static_cast<double>(rows - 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      mesh.x(r, c) = c + 1 == cols ? static_cast<double>(w) - 1.0 : static_cast<double>(c) * sx;
      mesh.y(r, c) = r + 1 == rows ? static_cast<double>(h) - 1.0 : static_cast<double>(r) * sy;
    }
  return mesh;
}

Homography dlt_solve(const GlobalOffsets& offsets, std::size_t h, std::size_t w) {
  return solve_dlt(offsets.values, h, w).H;
}

Mesh apply_homography(const Mesh& mesh, const Homography& H) {
  Mesh out(mesh.rows, mesh.cols);
  for (std::size_t r = 0; r < mesh.rows; ++r)
    for (std::size_t c = 0; c < mesh.cols; ++c) {
      const auto p = H.apply(mesh.x(r, c), mesh.y(r, c));
      out.x(r, c) = p[0];
      out.y(r, c) = p[1];
    }
  return out;
}

Mesh assemble_final_mesh(const Mesh& regular, const GlobalOffsets& global,
                         const LocalOffsets& local, std::size_t h, std::size_t w) {
  if (local.rows != regular.rows || local.cols != regular.cols) {
    throw ShapeError("assemble_final_mesh: local offsets do not match the mesh");
  }
  Mesh out = apply_homography(regular, dlt_solve(global, h, w));
  for (std::size_t i = 0; i < out.positions.size(); ++i) out.positions[i] += local.positions[i];
  return out;
}

// ---- differentiable ops --------------------------------------------------

Var dlt_solve(const Var& offsets, std::size_t h, std::size_t w) {
  if (offsets.size() != 8) {
    throw ShapeError("dlt_solve: offsets must be [4, 2], got " + to_string(offsets.shape()));
  }
  std::array<double, 8> o{};
  std::copy_n(offsets.value().raw(), 8, o.begin());
  DltSolution sol = solve_dlt(o, h, w);
  const Homography H = sol.H;
  const NodeId io = offsets.id();
  return offsets.tape().record(
      "dlt_solve", H.to_array(), {offsets},
      [io, H, lu = std::move(sol.lu), h, w](Tape& t, NodeId self) {
        NdArray* go = t.accumulator(io);
        if (!go) return;
        const NdArray& g = t.grad_of(self);
        Vector8 gd;
        for (int i = 0; i < 8; ++i) gd[i] = g[i];
        // lambda = A^-T g; dL/do_row = lambda_row * projective denominator.
        const Vector8 lambda = lu.transpose().solve(gd);
        const auto corners = image_corners(h, w);
        for (int k = 0; k < 4; ++k) {
          const double den = 1.0 + H.m[6] * corners[k][0] + H.m[7] * corners[k][1];
          (*go)[2 * k] += lambda[2 * k] * den;
          (*go)[2 * k + 1] += lambda[2 * k + 1] * den;
        }
      });
}

Var apply_homography(const Var& points, const Var& H) {
  if (points.shape().empty() || points.shape().back() != 2) {
    throw ShapeError("apply_homography: points must be [..., 2], got " +
                     to_string(points.shape()));
  }
  if (H.size() != 9) throw ShapeError("apply_homography: H must be [3, 3]");
  const NdArray& pv = points.value();
  const NdArray& hv = H.value();
  const std::size_t n = pv.size() / 2;
  NdArray out(pv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pv[2 * i], y = pv[2 * i + 1];
    const double den = hv[6] * x + hv[7] * y + hv[8];
    if (std::abs(den) < kMinDenominator) {
      throw GeometryError("apply_homography: projective denominator vanishes");
    }
    out[2 * i] = (hv[0] * x + hv[1] * y + hv[2]) / den;
    out[2 * i + 1] = (hv[3] * x + hv[4] * y + hv[5]) / den;
  }
  const NodeId ip = points.id(), ih = H.id();
  return points.tape().record(
      "apply_homography", std::move(out), {points, H}, [ip, ih, n](Tape& t, NodeId self) {
        const NdArray& g = t.grad_of(self);
        const NdArray& pv = t.value(ip);
        const NdArray& hv = t.value(ih);
        const NdArray& ov = t.value(self);
        NdArray* gp = t.accumulator(ip);
        NdArray* gh = t.accumulator(ih);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = pv[2 * i], y = pv[2 * i + 1];
          const double den = hv[6] * x + hv[7] * y + hv[8];
          const double ox = ov[2 * i], oy = ov[2 * i + 1];
          const double gx = g[2 * i] / den, gy = g[2 * i + 1] / den;
          if (gh) {
            (*gh)[0] += gx * x;
            (*gh)[1] += gx * y;
            (*gh)[2] += gx;
            (*gh)[3] += gy * x;
            (*gh)[4] += gy * y;
            (*gh)[5] += gy;
            const double gden = -(gx * ox + gy * oy);
            (*gh)[6] += gden * x;
            (*gh)[7] += gden * y;
            (*gh)[8] += gden;
          }
          if (gp) {
            (*gp)[2 * i] += gx * (hv[0] - ox * hv[6]) + gy * (hv[3] - oy * hv[6]);
            (*gp)[2 * i + 1] += gx * (hv[1] - ox * hv[7]) + gy * (hv[4] - oy * hv[7]);
          }
        }
      });
}

namespace {

// Cell membership and cell-local coordinates of pixel (x, y) in the regular
// rows x cols mesh over an h x w image.
struct CellCoord {
  std::size_t r, c;
  double a, b;
};

CellCoord locate(std::size_t px, std::size_t py, std::size_t rows, std::size_t cols,
                 std::size_t h, std::size_t w) {
  const double u = static_cast<double>(px) * static_cast<double>(cols - 1) /
                   (static_cast<double>(w) - 1.0);
  const double v = static_cast<double>(py) * static_cast<double>(rows - 1) /
                   (static_cast<double>(h) - 1.0);
  const std::size_t c = std::min(static_cast<std::size_t>(u), cols - 2);
  const std::size_t r = std::min(static_cast<std::size_t>(v), rows - 2);
  return {r, c, u - static_cast<double>(c), v - static_cast<double>(r)};
}

double lerp(double p, double q, double t) { return p + t * (q - p); }

void check_mesh_var(const Var& mesh) {
  const Shape& s = mesh.shape();
  if (s.size() != 3 || s[2] != 2 || s[0] < 2 || s[1] < 2) {
    throw ShapeError("mesh must be [rows >= 2, cols >= 2, 2], got " + to_string(s));
  }
}

}  // namespace

NdArray mesh_to_flow(const Mesh& mesh, std::size_t h, std::size_t w) {
  Tape tape;
  return mesh_to_flow(tape.constant(mesh.to_array()), h, w).value();
}

Var mesh_to_flow(const Var& mesh, std::size_t h, std::size_t w) {
  check_mesh_var(mesh);
  if (h < 2 || w < 2) throw GeometryError("mesh_to_flow: image must be at least 2x2");
  const std::size_t rows = mesh.shape()[0], cols = mesh.shape()[1];
  const Mesh reg = regular_mesh(rows, cols, h, w);
  const NdArray& mv = mesh.value();
  // Displacements from the regular grid; interpolating them (not positions)
  // keeps the regular mesh an exact identity.
  std::vector<double> disp(mv.size());
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = mv[i] - reg.positions[i];
  NdArray out(Shape{h, w, 2});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const CellCoord cc = locate(x, y, rows, cols, h, w);
      const std::size_t v00 = cc.r * cols + cc.c, v01 = v00 + 1, v10 = v00 + cols, v11 = v10 + 1;
      for (int k = 0; k < 2; ++k) {
        const double top = lerp(disp[2 * v00 + k], disp[2 * v01 + k], cc.a);
        const double bottom = lerp(disp[2 * v10 + k], disp[2 * v11 + k], cc.a);
        const double base = k == 0 ? static_cast<double>(x) : static_cast<double>(y);
        out[(y * w + x) * 2 + k] = base + lerp(top, bottom, cc.b);
      }
    }
  const NodeId im = mesh.id();
  return mesh.tape().record("mesh_to_flow", std::move(out), {mesh},
                            [im, rows, cols, h, w](Tape& t, NodeId self) {
                              NdArray* gm = t.accumulator(im);
                              if (!gm) return;
                              const NdArray& g = t.grad_of(self);
                              for (std::size_t y = 0; y < h; ++y)
                                for (std::size_t x = 0; x < w; ++x) {
                                  const CellCoord cc = locate(x, y, rows, cols, h, w);
                                  const std::size_t v00 = cc.r * cols + cc.c;
                                  const std::size_t idx[4] = {v00, v00 + 1, v00 + cols,
                                                              v00 + cols + 1};
                                  const double wt[4] = {(1 - cc.a) * (1 - cc.b),
                                                        cc.a * (1 - cc.b), (1 - cc.a) * cc.b,
                                                        cc.a * cc.b};
                                  for (int k = 0; k < 2; ++k) {
                                    const double gv = g[(y * w + x) * 2 + k];
                                    for (int j = 0; j < 4; ++j) (*gm)[2 * idx[j] + k] += wt[j] * gv;
                                  }
                                }
                            });
}

Var warp_image(const Var& img, const Var& mesh) {
  if (img.shape().size() != 3) throw ShapeError("warp_image: image must be [c, h, w]");
  return grid_sample(img, mesh_to_flow(mesh, img.shape()[1], img.shape()[2]));
}

Image warp_image(const Image& img, const Mesh& mesh) {
  Tape tape;
  Var out = warp_image(tape.constant(img.to_array()), tape.constant(mesh.to_array()));
  return Image::from_array(out.value());
}

Mask overlap_mask_from_flow(const NdArray& flow, std::size_t src_h, std::size_t src_w) {
  if (flow.rank() != 3 || flow.dim(2) != 2) throw ShapeError("overlap_mask: flow must be [h, w, 2]");
  Tape tape;
  Var ones = tape.constant(NdArray(Shape{1, src_h, src_w}, 1.0));
  const NdArray coverage = grid_sample(ones, tape.constant(flow)).value();
  Mask mask(flow.dim(0), flow.dim(1), 0.0);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    mask.values[i] = coverage[i] >= 0.999 ? 1.0 : 0.0;
  return mask;
}

Mask overlap_mask(const Mesh& mesh, std::size_t h, std::size_t w) {
  return overlap_mask_from_flow(mesh_to_flow(mesh, h, w), h, w);
}

}  // namespace meshalign
