#include <cmath>

#include "doctest.h"
#include "meshalign/gradcheck.hpp"
#include "meshalign/losses.hpp"
#include "meshalign/model.hpp"
#include "test_util.hpp"

using namespace meshalign;
using meshalign::testing::random_array;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_h = c.image_w = 32;
  c.mesh_rows = c.mesh_cols = 5;
  c.levels = 1;
  c.fine_channels = 4;
  c.coarse_channels = 6;
  c.fine_stride = 4;
  c.coarse_stride = 8;
  c.head.compressed_channels = 4;
  c.head.trunk_channels = 4;
  c.head.hidden = 8;
  c.seed = 3;
  return c;
}

void randomize_heads(AlignModel& m, double scale, std::uint64_t seed) {
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    NdArray& v = m.params.value(i);
    if (v.max_abs() == 0.0) v = random_array(v.shape(), seed + i, -scale, scale);
  }
}

}  // namespace

TEST_CASE("extractor") {
  ModelConfig cfg;
  cfg.fine_channels = 4;
  cfg.coarse_channels = 4;
  cfg.levels = 0;
  cfg.head.compressed_channels = 2;
  cfg.head.trunk_channels = 2;
  cfg.head.hidden = 2;
  AlignModel m = make_model(cfg);
  Tape t;
  BoundParameters p(t, m.params);
  const Features f = extract(m, p, t.leaf(random_array({3, 128, 128}, 1, 0.0, 1.0)));
  CHECK(f.fine.shape() == Shape{4, 32, 32});
  CHECK(f.coarse.shape() == Shape{4, 8, 8});
  CHECK(f.fine.value().all_finite());

  for (std::size_t i = 0; i < m.params.size(); ++i) m.params.value(i).fill(0.0);
  Tape t2;
  BoundParameters z(t2, m.params);
  const Features zf = extract(m, z, t2.leaf(random_array({3, 128, 128}, 2, 0.0, 1.0)));
  CHECK(zf.fine.value().max_abs() == 0.0);
  CHECK(zf.coarse.value().max_abs() == 0.0);
  CHECK_THROWS_AS(extract(m, z, t2.leaf(NdArray({3, 64, 64}))), ShapeError);

  SUBCASE("gradient through the stack on a 1x16x16 input") {
    ModelConfig g = small_config();
    g.channels = 1;
    g.image_h = g.image_w = 16;
    g.levels = 0;
    const AlignModel gm = make_model(g);
    auto r = check_gradients(
        [&](Tape& tp, std::span<const Var> in) {
          BoundParameters bp(tp, gm.params, false);
          bp.replace(gm.extractor.trunk[0].weight, in[1]);
          const Features out = extract(gm, bp, in[0]);
          return add(sum(out.fine), sum(mul(out.coarse, 0.5)));
        },
        {random_array({1, 16, 16}, 3, 0.0, 1.0), gm.params.value(gm.extractor.trunk[0].weight)}, 4);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("model configuration") {
  ModelConfig c = small_config();
  c.coarse_stride = 12;
  CHECK_THROWS_AS(make_model(c), std::invalid_argument);
  c = small_config();
  c.levels = 4;
  CHECK_THROWS_AS(make_model(c), std::invalid_argument);
  c = small_config();
  c.correlation = CorrelationKind::Ccl;
  CHECK_THROWS_AS(make_model(c), std::invalid_argument);

  for (std::size_t n = 0; n <= 3; ++n) {
    ModelConfig d = small_config();
    d.image_h = d.image_w = 64;
    d.levels = n;
    CHECK(make_model(d).cross_heads.size() == n * n + n);
  }
  const AlignModel m = make_model(small_config());
  CHECK(m.global_head.output_dim == 8);
  CHECK(m.intra_head.output_dim == 50);
}

TEST_CASE("identity start") {
  const AlignModel m = make_model(small_config());
  Tape t;
  BoundParameters p(t, m.params);
  const NdArray ref = random_array({3, 32, 32}, 1, 0.0, 1.0), tar = random_array({3, 32, 32}, 2, 0.0, 1.0);
  const ForwardOutput out = forward(m, p, t.leaf(ref), t.leaf(tar));
  CHECK(out.global_offsets.shape() == Shape{4, 2});
  CHECK(out.global_offsets.value().max_abs() == 0.0);
  CHECK(out.H.value() == Homography::identity().to_array());
  CHECK(out.local_offsets.value().max_abs() == 0.0);
  CHECK(out.final_mesh.value() == regular_mesh(5, 5, 32, 32).to_array());
  CHECK(out.warped.value() == tar);
  CHECK(out.warped_h.value() == tar);
  CHECK(out.mask.count() == 32 * 32);
  CHECK(out.mask_h.count() == 32 * 32);
  CHECK_FALSE(out.degenerate);

  SUBCASE("identity feature warp is bitwise") {
    Tape t2;
    BoundParameters p2(t2, m.params);
    const Features f = extract(m, p2, t2.leaf(tar));
    const LocalResult l = local_stage(m, p2, f.fine, f.fine, t2.constant(Homography::identity().to_array()));
    CHECK(l.warped_features.value() == f.fine.value());
  }
  SUBCASE("one training-style loss equals the identity alignment loss") {
    const Mesh reg = regular_mesh(5, 5, 32, 32);
    const Image jnd(32, 32, 1, 0.01);
    const LossTerms terms = total_loss(out, t.leaf(ref), reg, jnd, {});
    Tape t3;
    const Var r = t3.leaf(ref), w = t3.leaf(tar);
    const double content = 2.0 * masked_l1(r, w, Mask(32, 32, 1.0)).value()[0];
    const double j = l_jnd(r, w, jnd, Mask(32, 32, 1.0)).value()[0];
    const LossBreakdown b = terms.breakdown({});
    CHECK(b.l_content == content);
    CHECK(b.l_shape == 0.0);
    CHECK(b.l_jnd == j);
    CHECK(b.total == b.l_content + 10.0 * b.l_shape + 1.0 * b.l_jnd);
  }
}

TEST_CASE("forward with random weights") {
  AlignModel m = make_model(small_config());
  randomize_heads(m, 0.05, 100);
  const NdArray ref = random_array({3, 32, 32}, 1, 0.0, 1.0), tar = random_array({3, 32, 32}, 2, 0.0, 1.0);
  Tape t;
  BoundParameters p(t, m.params);
  const ForwardOutput out = forward(m, p, t.leaf(ref), t.leaf(tar));
  REQUIRE_FALSE(out.degenerate);
  CHECK(out.global_offsets.value().max_abs() > 0.0);
  CHECK(out.local_cross.value().max_abs() > 0.0);

  GlobalOffsets g;
  for (std::size_t i = 0; i < 8; ++i) g.values[i] = out.global_offsets.value()[i];
  const Mesh expected = assemble_final_mesh(regular_mesh(5, 5, 32, 32), g,
                                            Mesh::from_array(out.local_offsets.value()), 32, 32);
  for (std::size_t i = 0; i < expected.positions.size(); ++i)
    CHECK(std::abs(out.final_mesh.value()[i] - expected.positions[i]) < 1e-9);

  Tape t2;
  BoundParameters p2(t2, m.params);
  const ForwardOutput again = forward(m, p2, t2.leaf(ref), t2.leaf(tar));
  CHECK(again.warped.value() == out.warped.value());

  SUBCASE("N=0 has no cross-scale term") {
    ModelConfig c = small_config();
    c.levels = 0;
    AlignModel m0 = make_model(c);
    randomize_heads(m0, 0.05, 200);
    Tape t3;
    BoundParameters p3(t3, m0.params);
    const ForwardOutput o = forward(m0, p3, t3.leaf(ref), t3.leaf(tar));
    CHECK(o.local_cross.value().max_abs() == 0.0);
    CHECK(o.local_offsets.value() == o.local_intra.value());
  }
  SUBCASE("gradient of mean(warped) with respect to one extractor weight") {
    const std::size_t wi = m.extractor.fine_out.weight;
    auto r = check_gradients(
        [&](Tape& tp, std::span<const Var> in) {
          BoundParameters bp(tp, m.params, false);
          bp.replace(wi, in[0]);
          const ForwardOutput o = forward(m, bp, tp.constant(ref), tp.constant(tar));
          return mean(o.warped);
        },
        {m.params.value(wi)}, 5);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("degenerate global offsets fall back to identity") {
  AlignModel m = make_model(small_config());
  NdArray& bias = m.params.value(m.global_head.output.bias);
  bias.fill(0.0);
  bias[2] = -31.0 / 32.0;  // top-right onto top-left
  Tape t;
  BoundParameters p(t, m.params);
  const NdArray img = random_array({3, 32, 32}, 1, 0.0, 1.0);
  const ForwardOutput out = forward(m, p, t.leaf(img), t.leaf(img));
  CHECK(out.degenerate);
  CHECK(out.H.value() == Homography::identity().to_array());
}
