#include <cmath>
#include <limits>

#include "doctest.h"
#include "meshalign/autodiff.hpp"
#include "meshalign/gradcheck.hpp"
#include "test_util.hpp"

using namespace meshalign;
using meshalign::testing::random_array;

namespace {

NdArray arr(Shape shape, std::vector<double> values) { return NdArray(std::move(shape), std::move(values)); }

// Random values bounded away from zero, so relu/abs kinks stay outside the
// finite-difference stencil.
NdArray away_from_zero(Shape shape, std::uint64_t seed) {
  NdArray a = random_array(std::move(shape), seed);
  for (double& v : a.data()) v = v < 0 ? v - 0.1 : v + 0.1;
  return a;
}

}  // namespace

TEST_CASE("relu and abs follow scalar semantics") {
  Tape t;
  Var x = t.leaf(arr({3}, {-1, 0, 2}));
  CHECK(relu(x).value() == arr({3}, {0, 0, 2}));

  Var y = t.leaf(arr({1}, {-3}));
  Var a = abs(y);
  CHECK(a.value()[0] == 3.0);
  t.backward(a);
  CHECK(y.grad()->at({0}) == -1.0);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape t;
  Var x = t.leaf(arr({3}, {-1, 0, 2}));
  t.backward(sum(relu(x)));
  CHECK(*x.grad() == arr({3}, {0, 0, 1}));
}

TEST_CASE("elementwise rejects mismatched shapes") {
  Tape t;
  Var a = t.leaf(NdArray({2, 3}));
  Var b = t.leaf(NdArray({3, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
}

TEST_CASE("mul, add and sub gradients match finite differences") {
  for (auto kind : {ElementwiseKind::Add, ElementwiseKind::Sub, ElementwiseKind::Mul}) {
    auto r = check_gradients(
        [kind](Tape&, std::span<const Var> in) { return elementwise(kind, in[0], in[1]); },
        {random_array({3, 4}, 1), random_array({3, 4}, 2)}, 7);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("matmul") {
  SUBCASE("identity leaves the operand unchanged") {
    Tape t;
    NdArray eye({3, 3}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    NdArray m = random_array({3, 4}, 3);
    CHECK(matmul(t.constant(eye), t.constant(m)).value() == m);
  }
  SUBCASE("row times column equals an explicit dot product loop") {
    Tape t;
    NdArray a = random_array({1, 17}, 4), b = random_array({17, 1}, 5);
    double dot = 0.0;
    for (std::size_t i = 0; i < 17; ++i) dot += a[i] * b[i];
    CHECK(matmul(t.constant(a), t.constant(b)).value()[0] == doctest::Approx(dot).epsilon(1e-15));
  }
  SUBCASE("gradient check") {
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return matmul(in[0], in[1]); },
        {random_array({3, 5}, 6), random_array({5, 2}, 7)}, 8);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("inner dimension mismatch") {
    Tape t;
    CHECK_THROWS_AS(matmul(t.leaf(NdArray({2, 3})), t.leaf(NdArray({2, 3}))), ShapeError);
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel passes the input through") {
    Tape t;
    NdArray x = random_array({2, 4, 5}, 9);
    NdArray w({2, 2, 1, 1}, 0.0);
    w.at({0, 0, 0, 0}) = 1.0;
    w.at({1, 1, 0, 0}) = 1.0;
    CHECK(conv2d(t.constant(x), t.constant(w), Var()).value() == x);
  }
  SUBCASE("3x3 ones kernel on a constant image") {
    Tape t;
    NdArray x({1, 5, 5}, 0.25);
    NdArray w({1, 1, 3, 3}, 1.0);
    Var y = conv2d(t.constant(x), t.constant(w), Var(), {1, 1});
    CHECK(y.shape() == Shape{1, 5, 5});
    CHECK(y.value().at({0, 2, 2}) == doctest::Approx(9 * 0.25));
    CHECK(y.value().at({0, 0, 0}) == doctest::Approx(4 * 0.25));
  }
  SUBCASE("output extent formula") {
    CHECK(conv_output_extent(8, 3, 2, 1) == 4);
    CHECK(conv_output_extent(7, 3, 2, 1) == 4);
    CHECK(conv_output_extent(1, 3, 2, 1) == 1);
    CHECK_THROWS_AS(conv_output_extent(2, 5, 1, 1), ShapeError);
  }
  SUBCASE("gradient check over input, weight and bias") {
    for (std::size_t stride : {1u, 2u}) {
      auto r = check_gradients(
          [stride](Tape&, std::span<const Var> in) {
            return conv2d(in[0], in[1], in[2], {stride, 1});
          },
          {random_array({2, 5, 6}, 10), random_array({3, 2, 3, 3}, 11), random_array({3}, 12)},
          13);
      CHECK(r.max_rel_error < 1e-5);
    }
  }
  SUBCASE("kernel larger than padded input") {
    Tape t;
    CHECK_THROWS_AS(conv2d(t.leaf(NdArray({1, 2, 2})), t.leaf(NdArray({1, 1, 5, 5})), Var(), {1, 1}),
                    ShapeError);
  }
}

TEST_CASE("maxpool2d") {
  SUBCASE("window maximum") {
    Tape t;
    CHECK(maxpool2d(t.constant(arr({1, 2, 2}, {1, 2, 3, 4}))).value()[0] == 4.0);
  }
  SUBCASE("ties route to the first element") {
    Tape t;
    Var x = t.leaf(NdArray({1, 2, 2}, 0.5));
    Var y = maxpool2d(x);
    CHECK(y.value()[0] == 0.5);
    t.backward(sum(y));
    CHECK(*x.grad() == arr({1, 2, 2}, {1, 0, 0, 0}));
  }
  SUBCASE("odd extents pad bottom/right with -inf") {
    Tape t;
    NdArray x = arr({1, 3, 3}, {-5, -6, -7, -8, -9, -1, -2, -3, -4});
    Var y = maxpool2d(t.constant(x));
    CHECK(y.shape() == Shape{1, 2, 2});
    CHECK(y.value() == arr({1, 2, 2}, {-5, -1, -2, -4}));
  }
  SUBCASE("gradient check on 1x8x8") {
    auto r = check_gradients([](Tape&, std::span<const Var> in) { return maxpool2d(in[0]); },
                             {random_array({1, 8, 8}, 14)}, 15);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("empty input") {
    Tape t;
    CHECK_THROWS_AS(maxpool2d(t.leaf(NdArray({1, 0, 4}))), ShapeError);
  }
}

TEST_CASE("reshape and permute are lossless index remappings") {
  Tape t;
  NdArray x = random_array({2, 3, 4, 5}, 16);
  Var v = t.constant(x);
  CHECK(reshape(reshape(v, {6, 20}), {2, 3, 4, 5}).value() == x);

  Var p = permute(v, {2, 3, 0, 1});
  CHECK(p.shape() == Shape{4, 5, 2, 3});
  CHECK(p.value().at({1, 2, 0, 1}) == x.at({0, 1, 1, 2}));
  CHECK(permute(p, {2, 3, 0, 1}).value() == x);
  Var flat = reshape(p, {20, 2, 3});
  CHECK(flat.value().sum() == doctest::Approx(x.sum()));

  CHECK_THROWS_AS(reshape(v, {7, 7}), ShapeError);
  CHECK_THROWS_AS(permute(v, {0, 0, 1, 2}), ShapeError);
}

TEST_CASE("gradient of sum through permute is all ones") {
  Tape t;
  Var x = t.leaf(random_array({2, 3, 4}, 17));
  t.backward(sum(permute(x, {1, 2, 0})));
  CHECK(*x.grad() == NdArray({2, 3, 4}, 1.0));
  auto r = check_gradients(
      [](Tape&, std::span<const Var> in) { return reshape(permute(in[0], {2, 0, 1}), {4, 6}); },
      {random_array({2, 3, 4}, 18)}, 19);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("pad_concat") {
  Tape t;
  SUBCASE("two 4x3x3 maps stack to 8x3x3") {
    Var a = t.constant(random_array({4, 3, 3}, 20));
    Var b = t.constant(random_array({4, 3, 3}, 21));
    Var parts[] = {a, b};
    CHECK(pad_concat(parts, 3, 3).shape() == Shape{8, 3, 3});
  }
  SUBCASE("padded cells are exactly zero") {
    Var a = t.constant(NdArray({1, 2, 2}, 7.0));
    Var parts[] = {a};
    const NdArray out = pad_concat(parts, 3, 3).value();
    CHECK(out == arr({1, 3, 3}, {7, 7, 0, 7, 7, 0, 0, 0, 0}));
  }
  SUBCASE("target smaller than an input") {
    Var a = t.constant(NdArray({1, 4, 4}));
    Var parts[] = {a};
    CHECK_THROWS_AS(pad_concat(parts, 3, 4), ShapeError);
  }
  SUBCASE("gradient check") {
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) {
          Var parts[] = {in[0], in[1]};
          return pad_concat(parts, 4, 5);
        },
        {random_array({2, 4, 3}, 22), random_array({3, 2, 5}, 23)}, 24);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("grid_sample") {
  SUBCASE("identity grid reproduces the image bit for bit") {
    Tape t;
    NdArray img = random_array({3, 5, 7}, 25, 0.0, 1.0);
    NdArray grid({5, 7, 2});
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 7; ++x) {
        grid.at({y, x, 0}) = static_cast<double>(x);
        grid.at({y, x, 1}) = static_cast<double>(y);
      }
    CHECK(grid_sample(t.constant(img), t.constant(grid)).value() == img);
  }
  SUBCASE("half-pixel shift averages horizontal neighbours") {
    Tape t;
    NdArray img({1, 2, 6});
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 6; ++x) img.at({0, y, x}) = 0.1 * static_cast<double>(x * x);
    NdArray grid({2, 5, 2});
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        grid.at({y, x, 0}) = static_cast<double>(x) + 0.5;
        grid.at({y, x, 1}) = static_cast<double>(y);
      }
    const NdArray out = grid_sample(t.constant(img), t.constant(grid)).value();
    for (std::size_t x = 0; x < 5; ++x)
      CHECK(out.at({0, 1, x}) ==
            doctest::Approx(0.5 * (img.at({0, 1, x}) + img.at({0, 1, x + 1}))).epsilon(1e-15));
  }
  SUBCASE("out-of-bounds samples are zero") {
    Tape t;
    NdArray grid({1, 2, 2});
    grid.at({0, 0, 0}) = -5;
    grid.at({0, 1, 0}) = 40;
    CHECK(grid_sample(t.constant(NdArray({1, 3, 3}, 1.0)), t.constant(grid)).value().max_abs() == 0.0);
  }
  SUBCASE("gradient w.r.t. image and grid") {
    NdArray grid = random_array({3, 4, 2}, 26, -0.5, 4.5);
    for (double& v : grid.data()) {
      const double frac = v - std::floor(v);
      if (frac < 0.05) v += 0.1;
      if (frac > 0.95) v -= 0.1;
    }
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return grid_sample(in[0], in[1]); },
        {random_array({2, 5, 4}, 27), grid}, 28);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("grid must end in 2") {
    Tape t;
    CHECK_THROWS_AS(grid_sample(t.leaf(NdArray({1, 2, 2})), t.leaf(NdArray({2, 2, 3}))), ShapeError);
  }
}

TEST_CASE("reductions, linear and backward contract") {
  SUBCASE("mean of a constant array") {
    Tape t;
    Var x = t.leaf(NdArray({4, 5}, 2.5));
    Var m = mean(x);
    CHECK(m.value()[0] == 2.5);
    t.backward(m);
    CHECK(*x.grad() == NdArray({4, 5}, 1.0 / 20.0));
  }
  SUBCASE("zero-weight linear layer outputs zero") {
    Tape t;
    Var y = linear(t.constant(random_array({2, 3}, 29)), t.constant(NdArray({4, 6}, 0.0)),
                   t.constant(NdArray({4}, 0.0)));
    CHECK(y.value() == NdArray({4}, 0.0));
  }
  SUBCASE("linear gradient check") {
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return linear(in[0], in[1], in[2]); },
        {random_array({6}, 30), random_array({4, 6}, 31), random_array({4}, 32)}, 33);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("conv -> relu -> mean chain") {
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return mean(relu(conv2d(in[0], in[1], in[2], {1, 1}))); },
        {random_array({2, 6, 6}, 34), random_array({3, 2, 3, 3}, 35), random_array({3}, 36)}, 37);
    CHECK(r.max_rel_error < 1e-5);
  }
  SUBCASE("non-scalar root") {
    Tape t;
    Var x = t.leaf(NdArray({3}, 1.0));
    CHECK_THROWS_AS(t.backward(relu(x)), AutodiffError);
  }
  SUBCASE("second backward without reset") {
    Tape t;
    Var x = t.leaf(NdArray({3}, 1.0));
    Var s = sum(x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), AutodiffError);
    t.zero_grad();
    CHECK_NOTHROW(t.backward(s));
  }
  SUBCASE("gradients sum over all paths of a DAG") {
    // y = a*b + a  =>  dy/da = b + 1, dy/db = a
    Tape t;
    Var a = t.leaf(NdArray::scalar(3.0));
    Var b = t.leaf(NdArray::scalar(-2.0));
    t.backward(add(mul(a, b), a));
    CHECK((*a.grad())[0] == -1.0);
    CHECK((*b.grad())[0] == 3.0);
  }
  SUBCASE("non-finite values raise") {
    Tape t;
    Var x = t.leaf(NdArray::scalar(std::numeric_limits<double>::max()));
    CHECK_THROWS_AS(mul(x, 10.0), NonFiniteError);
    CHECK_THROWS_AS(t.leaf(NdArray::scalar(std::nan(""))), NonFiniteError);
  }
}

TEST_CASE("forward ops are deterministic") {
  auto run = [] {
    Tape t;
    Var x = t.constant(random_array({3, 9, 9}, 38));
    Var w = t.constant(random_array({4, 3, 3, 3}, 39));
    return maxpool2d(relu(conv2d(x, w, Var(), {2, 1}))).value();
  };
  CHECK(run() == run());
}

TEST_CASE("kinked ops pass randomized gradient checks") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = check_gradients(
        [](Tape&, std::span<const Var> in) { return abs(relu(in[0])); },
        {away_from_zero({4, 3}, seed)}, seed);
    CHECK(r.max_rel_error < 1e-6);
  }
}
