#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace meshalign {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward computation produces NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op, std::size_t node);

  const std::string& op() const noexcept { return op_; }
  std::size_t node() const noexcept { return node_; }

 private:
  std::string op_;
  std::size_t node_;
};

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  static NdArray scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Multi-index access; throws on rank mismatch or out-of-range index.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  NdArray reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const noexcept;

  double sum() const noexcept;
  double max_abs() const noexcept;

  NdArray& operator+=(const NdArray& other);
  NdArray& operator*=(double factor);

  friend bool operator==(const NdArray&, const NdArray&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace meshalign
