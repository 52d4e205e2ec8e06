#include "unlearn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unlearn/error.hpp"

namespace unlearn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != data_.size()) {
    fail(ErrorKind::kShape, "tensor shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    fail(ErrorKind::kShape, "axis " + std::to_string(axis) + " out of range for shape " +
                                shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    fail(ErrorKind::kShape, "item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(std::string_view what) const {
  if (!all_finite()) {
    throw NumericError(-1, "non-finite value in " + std::string(what));
  }
}

}  // namespace unlearn
