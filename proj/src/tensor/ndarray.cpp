#include "meshalign/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace meshalign {

NonFiniteError::NonFiniteError(std::string op, std::size_t node)
    : std::runtime_error("non-finite value produced by '" + op + "' (node " +
                         std::to_string(node) + ")"),
      op_(std::move(op)),
      node_(node) {}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

NdArray::NdArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("NdArray: shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

NdArray NdArray::scalar(double value) { return NdArray(Shape{1}, value); }

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("NdArray::dim: axis " + std::to_string(axis) +
                     " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("NdArray::at: rank mismatch for " + to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("NdArray::at: index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& NdArray::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

double NdArray::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " +
                     to_string(shape));
  }
  return NdArray(std::move(shape), data_);
}

void NdArray::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool NdArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double NdArray::sum() const noexcept {
  double total = 0.0;
  for (double v : data_) total += v;
  return total;
}

double NdArray::max_abs() const noexcept {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

NdArray& NdArray::operator+=(const NdArray& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("NdArray +=: " + to_string(shape_) + " vs " +
                     to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

NdArray& NdArray::operator*=(double factor) {
  for (double& v : data_) v *= factor;
  return *this;
}

}  // namespace meshalign
