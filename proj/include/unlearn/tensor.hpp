#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unlearn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Value type; copying copies the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D accessors; the tensor must be rank 2.
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  // Single value of a tensor with exactly one element.
  double item() const;

  void fill(double value);
  bool all_finite() const noexcept;
  // Throws NumericError naming `what` if any value is NaN/Inf.
  void check_finite(std::string_view what) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace unlearn
