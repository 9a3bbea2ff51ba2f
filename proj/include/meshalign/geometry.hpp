#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "meshalign/autodiff.hpp"
#include "meshalign/imaging.hpp"

namespace meshalign {

/// Degenerate input to a geometric construction (collinear corners,
/// vanishing projective denominator, singular matrix).
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// rows x cols grid of vertex positions (x, y) in pixel coordinates, stored
/// row-major as [rows, cols, 2].
struct Mesh {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> positions;

  Mesh() = default;
  Mesh(std::size_t u, std::size_t v) : rows(u), cols(v), positions(u * v * 2, 0.0) {}

  double& x(std::size_t r, std::size_t c) { return positions[(r * cols + c) * 2]; }
  double& y(std::size_t r, std::size_t c) { return positions[(r * cols + c) * 2 + 1]; }
  double x(std::size_t r, std::size_t c) const { return positions[(r * cols + c) * 2]; }
  double y(std::size_t r, std::size_t c) const { return positions[(r * cols + c) * 2 + 1]; }

  NdArray to_array() const;
  static Mesh from_array(const NdArray& array);
};

/// Row-major 3x3 projective matrix with m[8] == 1.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  double determinant() const;
  Homography inverse() const;
  /// Throws GeometryError when the projective denominator is below 1e-9.
  std::array<double, 2> apply(double x, double y) const;
  NdArray to_array() const { return NdArray(Shape{3, 3}, {m.begin(), m.end()}); }
  static Homography from_array(const NdArray& array);
};

/// Displacements of the image corners in the order top-left, top-right,
/// bottom-left, bottom-right, each as (dx, dy).
struct GlobalOffsets {
  std::array<double, 8> values{};

  NdArray to_array() const { return NdArray(Shape{4, 2}, {values.begin(), values.end()}); }
};

/// Per-vertex displacement field with the same layout as Mesh.
using LocalOffsets = Mesh;

/// Corners (0,0), (w-1,0), (0,h-1), (w-1,h-1) in GlobalOffsets order.
std::array<std::array<double, 2>, 4> image_corners(std::size_t h, std::size_t w);

/// Uniform grid covering [0, w-1] x [0, h-1].
Mesh regular_mesh(std::size_t rows, std::size_t cols, std::size_t h, std::size_t w);

/// Homography mapping each image corner to corner + offset, from the 8x8
/// direct linear system with H[2][2] fixed to 1.
Homography dlt_solve(const GlobalOffsets& offsets, std::size_t h, std::size_t w);

Mesh apply_homography(const Mesh& mesh, const Homography& H);

/// apply_homography(M, dlt_solve(o_g)) + o_l, vertex by vertex.
Mesh assemble_final_mesh(const Mesh& regular, const GlobalOffsets& global,
                         const LocalOffsets& local, std::size_t h, std::size_t w);

/// Dense sampling field [h, w, 2]: each pixel takes the bilinear blend of its
/// regular-grid cell's vertices in `mesh`, with cell-local coordinates from
/// the regular mesh of the same size.
NdArray mesh_to_flow(const Mesh& mesh, std::size_t h, std::size_t w);

/// Backward warp of img through mesh_to_flow(mesh) with zero fill.
Image warp_image(const Image& img, const Mesh& mesh);

/// Pixels whose warp of an all-ones source image reaches 0.999.
Mask overlap_mask(const Mesh& mesh, std::size_t h, std::size_t w);
Mask overlap_mask_from_flow(const NdArray& flow, std::size_t src_h, std::size_t src_w);

// ---- differentiable counterparts -----------------------------------------

/// offsets [4, 2] -> H [3, 3]; gradients flow through the linear solve.
Var dlt_solve(const Var& offsets, std::size_t h, std::size_t w);

/// Projective transform of points [..., 2] by H [3, 3]; differentiable in both.
Var apply_homography(const Var& points, const Var& H);

/// mesh [rows, cols, 2] -> flow [h, w, 2]; linear in the mesh positions.
Var mesh_to_flow(const Var& mesh, std::size_t h, std::size_t w);

/// grid_sample(img, mesh_to_flow(mesh, h, w)).
Var warp_image(const Var& img, const Var& mesh);

}  // namespace meshalign
