#pragma once

// Tape-based reverse-mode differentiation over NdArray values.
//
// A Tape owns every node created during one forward pass. Nodes are appended
// in creation order, so parents always carry smaller ids than their children
// and the reverse sweep is a single descending pass over the node list.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "meshalign/ndarray.hpp"

namespace meshalign {

class Tape;
using NodeId = std::uint32_t;

/// Misuse of the tape: non-scalar root, second backward without reset,
/// mixing tapes, or a malformed graph.
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  NodeId id() const noexcept { return id_; }

  const NdArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  /// Accumulated gradient, or nullptr when none reached this node.
  const NdArray* grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(NdArray value, bool requires_grad = true, std::string_view name = "leaf");
  Var constant(NdArray value) { return leaf(std::move(value), false, "constant"); }

  /// Appends an op node. The value is checked for non-finite entries; the
  /// backward closure is dropped when no parent needs a gradient.
  Var record(std::string_view op, NdArray value, std::initializer_list<Var> parents,
             BackwardFn backward);
  Var record(std::string_view op, NdArray value, std::span<const Var> parents,
             BackwardFn backward);

  /// Reverse sweep from a scalar root. A second call without zero_grad() is
  /// an error.
  void backward(const Var& root);
  void zero_grad();

  const NdArray& value(NodeId id) const { return nodes_.at(id).value; }
  const NdArray& grad_of(NodeId id) const { return nodes_.at(id).grad; }
  bool has_grad(NodeId id) const { return nodes_.at(id).has_grad; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(NodeId id) const { return nodes_.at(id).op; }
  std::span<const NodeId> parents(NodeId id) const { return nodes_.at(id).parents; }

  /// Gradient buffer of a node for accumulation during backward, allocated
  /// as zeros on first use. Returns nullptr for nodes that need no gradient.
  NdArray* accumulator(NodeId id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    NdArray value;
    NdArray grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodeId> parents;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool swept_ = false;
};

// ---- elementwise ---------------------------------------------------------

enum class ElementwiseKind { Add, Sub, Mul, Abs, Relu };

Var elementwise(ElementwiseKind kind, const Var& a, const Var& b);
Var elementwise(ElementwiseKind kind, const Var& a, double b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);
Var abs(const Var& a);
Var relu(const Var& a);

// ---- linear algebra and convolution --------------------------------------

Var matmul(const Var& a, const Var& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_extent(std::size_t input, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

/// x: [c_in, h, w]; weight: [c_out, c_in, k, k]; bias: [c_out] or invalid Var.
/// Cross-correlation convention with zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options = {});

/// 2x2 window, stride 2. Odd extents are padded bottom/right with -inf.
/// Ties route the gradient to the first element in row-major window order.
Var maxpool2d(const Var& x);

/// y = weight . flatten(x) + bias; weight: [out, in]; bias: [out] or invalid.
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- index remapping -----------------------------------------------------

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, std::span<const std::size_t> axes);
Var permute(const Var& x, std::initializer_list<std::size_t> axes);

/// Zero-pads every [c_i, h_i, w_i] input bottom/right to [c_i, target_h,
/// target_w] and concatenates along the channel axis.
Var pad_concat(std::span<const Var> inputs, std::size_t target_h, std::size_t target_w);

// ---- sampling and reductions ---------------------------------------------

/// Bilinear sampling of img [c, h, w] at absolute pixel coordinates
/// grid [h', w', 2] = (x, y). Taps outside the image contribute zero.
Var grid_sample(const Var& img, const Var& grid);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace meshalign
