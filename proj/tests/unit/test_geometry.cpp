#include <cmath>
#include <random>

#include "doctest.h"
#include "meshalign/geometry.hpp"
#include "meshalign/gradcheck.hpp"
#include "test_util.hpp"

using namespace meshalign;
using meshalign::testing::random_array;

namespace {

GlobalOffsets random_offsets(std::uint64_t seed, double range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-range, range);
  GlobalOffsets o;
  for (double& v : o.values) v = dist(rng);
  return o;
}

Mesh translated(const Mesh& m, double dx, double dy) {
  Mesh out = m;
  for (std::size_t i = 0; i < out.positions.size(); i += 2) {
    out.positions[i] += dx;
    out.positions[i + 1] += dy;
  }
  return out;
}

Image smooth_image(std::size_t h, std::size_t w) {
  Image img(h, w, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        img.at(c, y, x) = 0.5 + 0.4 * std::sin(0.21 * x + 0.1 * c) * std::cos(0.17 * y);
  return img;
}

}  // namespace

TEST_CASE("regular_mesh") {
  Mesh m = regular_mesh(2, 2, 100, 100);
  CHECK(m.x(0, 0) == 0);
  CHECK(m.y(0, 0) == 0);
  CHECK(m.x(0, 1) == 99);
  CHECK(m.y(1, 0) == 99);
  CHECK(m.x(1, 1) == 99);

  Mesh big = regular_mesh(13, 13, 128, 128);
  CHECK(big.rows == 13);
  CHECK(big.cols == 13);
  const double step = big.x(0, 1) - big.x(0, 0);
  for (std::size_t c = 1; c < 13; ++c) {
    CHECK(big.x(3, c) > big.x(3, c - 1));
    CHECK(big.x(3, c) - big.x(3, c - 1) == doctest::Approx(step).epsilon(1e-12));
    CHECK(big.y(c, 3) > big.y(c - 1, 3));
  }
  CHECK_THROWS_AS(regular_mesh(1, 4, 10, 10), GeometryError);
  CHECK_THROWS_AS(regular_mesh(4, 4, 1, 10), GeometryError);
}

TEST_CASE("dlt_solve") {
  SUBCASE("zero offsets give the exact identity") {
    CHECK(dlt_solve(GlobalOffsets{}, 128, 96).m == Homography::identity().m);
  }
  SUBCASE("equal offsets give a pure translation") {
    GlobalOffsets o;
    for (int k = 0; k < 4; ++k) {
      o.values[2 * k] = 5;
      o.values[2 * k + 1] = -3;
    }
    const Homography H = dlt_solve(o, 64, 64);
    const double expected[9] = {1, 0, 5, 0, 1, -3, 0, 0, 1};
    for (int i = 0; i < 9; ++i) CHECK(H.m[i] == doctest::Approx(expected[i]).epsilon(1e-12).scale(1));
  }
  SUBCASE("random offsets round trip through the corners") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const GlobalOffsets o = random_offsets(seed, 20);
      const Homography H = dlt_solve(o, 128, 128);
      const auto corners = image_corners(128, 128);
      for (int k = 0; k < 4; ++k) {
        const auto p = H.apply(corners[k][0], corners[k][1]);
        CHECK(std::abs(p[0] - corners[k][0] - o.values[2 * k]) < 1e-8);
        CHECK(std::abs(p[1] - corners[k][1] - o.values[2 * k + 1]) < 1e-8);
      }
    }
  }
  SUBCASE("collinear corners are rejected") {
    GlobalOffsets o;
    o.values[2] = -127;  // top-right onto top-left
    o.values[3] = 0;
    CHECK_THROWS_AS(dlt_solve(o, 128, 128), GeometryError);
    GlobalOffsets line;
    line.values[7] = -127;  // bottom-right onto the top edge: TL, TR, BR collinear
    CHECK_THROWS_AS(dlt_solve(line, 128, 128), GeometryError);
  }
  SUBCASE("gradient through the solve") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto r = check_gradients(
          [](Tape&, std::span<const Var> in) { return dlt_solve(in[0], 32, 40); },
          {random_array({4, 2}, seed, -4, 4)}, seed);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("apply_homography") {
  const Mesh m = regular_mesh(5, 6, 64, 80);
  CHECK(apply_homography(m, Homography::identity()).positions == m.positions);

  Homography T;
  T.m[2] = 3.5;
  T.m[5] = -1.25;
  const Mesh moved = apply_homography(m, T);
  for (std::size_t i = 0; i < m.positions.size(); i += 2) {
    CHECK(moved.positions[i] - m.positions[i] == doctest::Approx(3.5));
    CHECK(moved.positions[i + 1] - m.positions[i + 1] == doctest::Approx(-1.25));
  }

  const Homography H = dlt_solve(random_offsets(3, 10), 64, 80);
  const Mesh back = apply_homography(apply_homography(m, H), H.inverse());
  for (std::size_t i = 0; i < m.positions.size(); ++i)
    CHECK(std::abs(back.positions[i] - m.positions[i]) < 1e-9);

  Homography vanishing;
  vanishing.m[6] = -1.0;  // denominator 1 - x is zero at x = 1
  Mesh one(1 + 1, 2);
  one.x(0, 0) = 1.0;
  CHECK_THROWS_AS(apply_homography(one, vanishing), GeometryError);

  SUBCASE("gradient w.r.t. points and matrix") {
    NdArray Hm = dlt_solve(random_offsets(4, 6), 16, 16).to_array();
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return apply_homography(in[0], in[1]); },
        {random_array({3, 4, 2}, 5, 0, 15), Hm}, 6);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("assemble_final_mesh") {
  const Mesh M = regular_mesh(13, 13, 128, 128);
  LocalOffsets zero(13, 13);
  CHECK(assemble_final_mesh(M, GlobalOffsets{}, zero, 128, 128).positions == M.positions);

  LocalOffsets shift(13, 13);
  for (std::size_t i = 0; i < shift.positions.size(); i += 2) shift.positions[i] = 2.0;
  const Mesh right = assemble_final_mesh(M, GlobalOffsets{}, shift, 128, 128);
  for (std::size_t i = 0; i < M.positions.size(); i += 2) {
    CHECK(right.positions[i] == M.positions[i] + 2.0);
    CHECK(right.positions[i + 1] == M.positions[i + 1]);
  }

  LocalOffsets a(13, 13), b(13, 13);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-3, 3);
  for (double& v : a.positions) v = dist(rng);
  for (double& v : b.positions) v = dist(rng);
  LocalOffsets ab = a;
  for (std::size_t i = 0; i < ab.positions.size(); ++i) ab.positions[i] += b.positions[i];
  const GlobalOffsets o = random_offsets(8, 5);
  const Mesh lhs = assemble_final_mesh(M, o, ab, 128, 128);
  const Mesh rhs = assemble_final_mesh(M, o, a, 128, 128);
  for (std::size_t i = 0; i < lhs.positions.size(); ++i)
    CHECK(lhs.positions[i] == doctest::Approx(rhs.positions[i] + b.positions[i]).epsilon(1e-14));

  CHECK_THROWS_AS(assemble_final_mesh(M, o, LocalOffsets(12, 13), 128, 128), ShapeError);
}

TEST_CASE("mesh_to_flow") {
  SUBCASE("regular mesh yields the identity grid exactly") {
    const NdArray flow = mesh_to_flow(regular_mesh(13, 13, 128, 128), 128, 128);
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) {
        CHECK_EQ(flow.at({y, x, 0}), static_cast<double>(x));
        CHECK_EQ(flow.at({y, x, 1}), static_cast<double>(y));
      }
  }
  SUBCASE("translated mesh yields a translated grid") {
    // 121 = 12 * 10 + 1: vertex coordinates are integers, so the shift is exact.
    const NdArray exact = mesh_to_flow(translated(regular_mesh(13, 13, 121, 121), 2, 0), 121, 121);
    for (std::size_t y = 0; y < 121; ++y)
      for (std::size_t x = 0; x < 121; ++x) {
        CHECK_EQ(exact.at({y, x, 0}), x + 2.0);
        CHECK_EQ(exact.at({y, x, 1}), static_cast<double>(y));
      }
    const NdArray flow = mesh_to_flow(translated(regular_mesh(13, 13, 128, 128), 2, 0), 128, 128);
    for (std::size_t y = 0; y < 128; y += 7)
      for (std::size_t x = 0; x < 128; ++x) CHECK(std::abs(flow.at({y, x, 0}) - (x + 2.0)) < 1e-12);
  }
  SUBCASE("homography mesh matches projective transform at the vertices") {
    const Homography H = dlt_solve(random_offsets(9, 8), 128, 128);
    const Mesh M = regular_mesh(5, 5, 129, 129);
    const NdArray flow = mesh_to_flow(apply_homography(M, H), 129, 129);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        const std::size_t px = c * 32, py = r * 32;
        const auto p = H.apply(static_cast<double>(px), static_cast<double>(py));
        CHECK(std::abs(flow.at({py, px, 0}) - p[0]) < 1e-9);
        CHECK(std::abs(flow.at({py, px, 1}) - p[1]) < 1e-9);
      }
    // Between vertices the per-cell bilinear blend approximates the projective map.
    double worst = 0.0;
    for (std::size_t y = 0; y < 129; y += 3)
      for (std::size_t x = 0; x < 129; x += 3) {
        const auto p = H.apply(static_cast<double>(x), static_cast<double>(y));
        worst = std::max(worst, std::abs(flow.at({y, x, 0}) - p[0]));
      }
    CHECK(worst < 0.5);
  }
  SUBCASE("gradient w.r.t. mesh positions") {
    NdArray m = regular_mesh(3, 4, 9, 11).to_array();
    NdArray noise = random_array({3, 4, 2}, 10, -0.7, 0.7);
    m += noise;
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return mesh_to_flow(in[0], 9, 11); }, {m}, 11);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("warp_image and overlap_mask") {
  const Image img = smooth_image(32, 40);
  const Mesh M = regular_mesh(5, 6, 32, 40);
  CHECK(warp_image(img, M).values == img.values);
  CHECK(overlap_mask(M, 32, 40).count() == 32 * 40);

  CHECK(overlap_mask(translated(M, 40, 0), 32, 40).count() == 0);

  const Mask half = overlap_mask(translated(M, 20, 0), 32, 40);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 40; ++x) {
      if (x + 1 < 20) CHECK(half.at(y, x) == 1.0);
      if (x > 20) CHECK(half.at(y, x) == 0.0);
    }

  SUBCASE("mask is monotone as content moves off-screen") {
    std::size_t previous = 32 * 40;
    for (double dx = 0; dx <= 44; dx += 2.75) {
      const std::size_t count = overlap_mask(translated(M, dx, 0.3 * dx), 32, 40).count();
      CHECK(count <= previous);
      previous = count;
    }
  }

  SUBCASE("gradient of mean(warp) w.r.t. mesh") {
    NdArray m = M.to_array();
    m += random_array({5, 6, 2}, 12, -1.3, 1.3);
    auto r = check_gradients(
        [&img](Tape& t, std::span<const Var> in) {
          return mean(warp_image(t.constant(img.to_array()), in[0]));
        },
        {m}, 13);
    CHECK(r.max_rel_error < 1e-3);
  }
}
